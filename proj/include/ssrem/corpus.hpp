#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ssrem {

struct Turn {
  std::string speaker;
  std::string text;
  bool operator==(const Turn&) const = default;
};

struct Conversation {
  std::string id;
  std::vector<Turn> turns;
  bool operator==(const Conversation&) const = default;
};

using Corpus = std::vector<Conversation>;

struct IngestOptions {
  bool merge_consecutive = true;
};

struct IngestIssue {
  std::size_t line = 0;
  std::string message;
};

struct IngestResult {
  Corpus conversations;
  std::vector<IngestIssue> rejected;
  std::size_t lines_read = 0;
};

// Rejected lines are collected, not fatal. Throws DataError when the file is
// unreadable or no conversation survives validation.
IngestResult ingest(const std::filesystem::path& path, const IngestOptions& options = {});
IngestResult ingest(std::istream& in, const IngestOptions& options = {},
                    std::string_view source = "<stream>");
// Like ingest, but any rejected line is a DataError.
Corpus load_corpus(const std::filesystem::path& path, const IngestOptions& options = {});

void write_jsonl(const Corpus& corpus, std::ostream& out);
void write_jsonl(const Corpus& corpus, const std::filesystem::path& path);

struct TurnRef {
  std::uint32_t conversation = 0;
  std::uint32_t position = 0;
  auto operator<=>(const TurnRef&) const = default;
};

using SpeakerId = std::uint32_t;

// Read-only view over a corpus. The corpus must outlive the index.
class SpeakerIndex {
 public:
  explicit SpeakerIndex(const Corpus& corpus);

  const Corpus& corpus() const { return *corpus_; }
  const Turn& turn(TurnRef ref) const;

  std::size_t speaker_count() const { return names_.size(); }
  std::optional<SpeakerId> find(std::string_view speaker) const;
  const std::string& name(SpeakerId id) const { return names_[id]; }
  SpeakerId speaker_of(TurnRef ref) const;

  // Positions in corpus order.
  const std::vector<TurnRef>& turns_of(SpeakerId speaker) const { return speaker_turns_[speaker]; }
  // The other speakers of a conversation, sorted by id.
  std::vector<SpeakerId> partners(std::size_t conversation, SpeakerId speaker) const;
  // Conversations in which `speaker` talks with exactly `partners`.
  const std::vector<std::uint32_t>& conversations_with(
      SpeakerId speaker, const std::vector<SpeakerId>& partners) const;
  // Every distinct partner set of a speaker with its conversations.
  std::vector<std::pair<std::vector<SpeakerId>, std::vector<std::uint32_t>>>
  partner_groups(SpeakerId speaker) const;

  std::size_t total_turns() const { return flat_.size(); }
  TurnRef flat_turn(std::size_t i) const { return flat_[i]; }
  std::size_t conversation_turns(std::size_t conversation) const;
  std::optional<std::size_t> conversation_index(std::string_view id) const;

 private:
  const Corpus* corpus_;
  std::vector<std::string> names_;
  std::unordered_map<std::string, SpeakerId> ids_;
  std::vector<std::vector<SpeakerId>> turn_speakers_;
  std::vector<std::vector<SpeakerId>> conversation_speakers_;
  std::vector<std::vector<TurnRef>> speaker_turns_;
  std::map<std::pair<SpeakerId, std::vector<SpeakerId>>, std::vector<std::uint32_t>> groups_;
  std::unordered_map<std::string, std::size_t> conversation_ids_;
  std::vector<TurnRef> flat_;
};

// Context turns [0, k) of a conversation and the response turns[k].
struct ContextResponsePair {
  std::uint32_t conversation = 0;
  std::uint32_t k = 0;
  std::string conversation_id;
  std::string responder;

  std::string id() const { return conversation_id + "#" + std::to_string(k); }
  TurnRef response() const { return {conversation, k}; }
  bool operator==(const ContextResponsePair&) const = default;
};

std::vector<ContextResponsePair> context_response_pairs(const Corpus& corpus);
// Pairs of the conversations of `subset` located inside `corpus` by id.
std::vector<ContextResponsePair> context_response_pairs(const Corpus& corpus,
                                                        const Corpus& subset);

struct SplitResult {
  Corpus train;
  Corpus valid;
  Corpus test;
};

// Largest-remainder apportionment of n items; ties go to the earlier split.
std::array<std::size_t, 3> apportion(std::size_t n, const std::array<double, 3>& ratios);
// Partitions by conversation. Conversations keep their corpus order within
// each split.
SplitResult split(const Corpus& corpus, const std::array<double, 3>& ratios,
                  std::uint64_t seed);

}  // namespace ssrem
