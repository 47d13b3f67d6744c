#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ssrem/corpus.hpp"

namespace ssrem {

enum class SampleClass : std::uint8_t { kGT, kSC, kSP, kSS, kRand };

inline constexpr std::array<SampleClass, 5> kAllClasses = {
    SampleClass::kGT, SampleClass::kSC, SampleClass::kSP, SampleClass::kSS,
    SampleClass::kRand};
inline constexpr std::array<SampleClass, 4> kDefaultBackoff = {
    SampleClass::kSC, SampleClass::kSP, SampleClass::kSS, SampleClass::kRand};

std::string_view to_string(SampleClass c);
// Accepts GT, SC, SP, SS, Rand (case-insensitive).
SampleClass parse_sample_class(std::string_view name);
std::vector<SampleClass> parse_class_list(std::string_view comma_separated);

struct Candidate {
  std::string text;
  SampleClass label = SampleClass::kGT;  // class of the turn actually drawn
  TurnRef source;
};

struct CandidateSet {
  ContextResponsePair pair;
  std::vector<Candidate> candidates;  // candidates[0] is the ground truth
  // Indexed by SampleClass: the slot for that class was filled from a later
  // class in the backoff order.
  std::array<bool, 5> backoff{};
};

struct ClassCounts {
  std::array<std::size_t, 5> values{0, 1, 1, 1, 1};
  std::size_t& operator[](SampleClass c) { return values[static_cast<std::size_t>(c)]; }
  std::size_t operator[](SampleClass c) const { return values[static_cast<std::size_t>(c)]; }
};

// Eligible negatives for a pair. Rand is implicit: every turn whose speaker is
// not the responder and which lies outside the pair's conversation.
struct SpeakerSets {
  std::vector<TurnRef> sc;
  std::vector<TurnRef> sp;
  std::vector<TurnRef> ss;
  std::size_t rand_size = 0;

  std::size_t size(SampleClass c) const;
};

SpeakerSets speaker_sets(const SpeakerIndex& index, const ContextResponsePair& pair);
std::vector<TurnRef> rand_pool(const SpeakerIndex& index, const ContextResponsePair& pair);
// The class a turn would belong to relative to the pair, or nullopt for turns
// that may never be negatives (context turns, the GT itself, the partner's
// turns of the same conversation).
std::optional<SampleClass> classify(const SpeakerIndex& index,
                                    const ContextResponsePair& pair, TurnRef turn);

struct DrawResult {
  std::optional<CandidateSet> set;
  std::string skip_reason;
};

// Draws counts[c] turns per class without replacement. An exhausted class
// falls through to the classes after it in `backoff`; a class missing from
// `backoff` falls through to the whole list. The stream depends only on
// (seed, pair id).
DrawResult draw_candidates(const SpeakerIndex& index, const ContextResponsePair& pair,
                           const SpeakerSets& sets, std::uint64_t seed,
                           const ClassCounts& counts = {},
                           std::span<const SampleClass> backoff = kDefaultBackoff);

// GT plus n_negatives uniform draws from the Rand pool. Throws DataError when
// the pool is too small.
CandidateSet uniform_candidates(const SpeakerIndex& index, const ContextResponsePair& pair,
                                std::uint64_t seed, std::size_t n_negatives);

void write_candidate_jsonl(const SpeakerIndex& index, const CandidateSet& set,
                           std::ostream& out);

}  // namespace ssrem
