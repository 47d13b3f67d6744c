#include "ssrem/sampler.hpp"

#include <algorithm>
#include <cctype>
#include <ostream>
#include <set>

#include <nlohmann/json.hpp>

#include "ssrem/common.hpp"
#include "ssrem/rng.hpp"

namespace ssrem {
namespace {

// Materializing the Rand pool is cheaper than rejection sampling once most of
// the corpus would be rejected anyway.
constexpr std::size_t kRejectionFactor = 4;

Candidate make_candidate(const SpeakerIndex& index, TurnRef ref, SampleClass label) {
  return {index.turn(ref).text, label, ref};
}

bool rand_eligible(const SpeakerIndex& index, SpeakerId responder, std::uint32_t conversation,
                   TurnRef ref) {
  return ref.conversation != conversation && index.speaker_of(ref) != responder;
}

std::vector<TurnRef> sample_list(const std::vector<TurnRef>& pool, std::size_t k,
                                 const std::set<TurnRef>& used, Rng& rng) {
  std::vector<TurnRef> free;
  free.reserve(pool.size());
  for (const auto& ref : pool) {
    if (!used.count(ref)) free.push_back(ref);
  }
  k = std::min(k, free.size());
  for (std::size_t i = 0; i < k; ++i) {
    std::swap(free[i], free[i + rng.uniform_index(free.size() - i)]);
  }
  free.resize(k);
  return free;
}

std::vector<TurnRef> sample_rand(const SpeakerIndex& index, const ContextResponsePair& pair,
                                 std::size_t rand_size, std::size_t k,
                                 const std::set<TurnRef>& used, Rng& rng) {
  const SpeakerId responder = *index.find(pair.responder);
  std::size_t used_in_pool = 0;
  for (const auto& ref : used) {
    if (rand_eligible(index, responder, pair.conversation, ref)) ++used_in_pool;
  }
  const std::size_t available = rand_size - used_in_pool;
  k = std::min(k, available);
  if (k == 0) return {};
  if (available < kRejectionFactor * k ||
      index.total_turns() > kRejectionFactor * rand_size) {
    return sample_list(rand_pool(index, pair), k, used, rng);
  }
  std::vector<TurnRef> out;
  std::set<TurnRef> taken = used;
  while (out.size() < k) {
    const TurnRef ref = index.flat_turn(rng.uniform_index(index.total_turns()));
    if (!rand_eligible(index, responder, pair.conversation, ref)) continue;
    if (!taken.insert(ref).second) continue;
    out.push_back(ref);
  }
  return out;
}

}  // namespace

std::string_view to_string(SampleClass c) {
  switch (c) {
    case SampleClass::kGT: return "GT";
    case SampleClass::kSC: return "SC";
    case SampleClass::kSP: return "SP";
    case SampleClass::kSS: return "SS";
    case SampleClass::kRand: return "Rand";
  }
  return "?";
}

SampleClass parse_sample_class(std::string_view name) {
  std::string lower(name);
  for (char& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (lower == "gt") return SampleClass::kGT;
  if (lower == "sc") return SampleClass::kSC;
  if (lower == "sp") return SampleClass::kSP;
  if (lower == "ss") return SampleClass::kSS;
  if (lower == "rand") return SampleClass::kRand;
  throw UsageError("unknown sample class '" + std::string(name) + "'");
}

std::vector<SampleClass> parse_class_list(std::string_view text) {
  std::vector<SampleClass> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t comma = text.find(',', pos);
    if (comma == std::string_view::npos) comma = text.size();
    if (comma > pos) out.push_back(parse_sample_class(text.substr(pos, comma - pos)));
    pos = comma + 1;
  }
  return out;
}

std::size_t SpeakerSets::size(SampleClass c) const {
  switch (c) {
    case SampleClass::kGT: return 1;
    case SampleClass::kSC: return sc.size();
    case SampleClass::kSP: return sp.size();
    case SampleClass::kSS: return ss.size();
    case SampleClass::kRand: return rand_size;
  }
  return 0;
}

SpeakerSets speaker_sets(const SpeakerIndex& index, const ContextResponsePair& pair) {
  const auto responder = index.find(pair.responder);
  if (!responder) throw DataError("pair " + pair.id() + ": responder not in index");
  SpeakerSets sets;
  const auto own_partners = index.partners(pair.conversation, *responder);
  std::size_t own_turns = 0;
  for (const TurnRef& ref : index.turns_of(*responder)) {
    if (ref.conversation == pair.conversation) {
      ++own_turns;
      if (ref.position > pair.k) sets.sc.push_back(ref);
    } else if (index.partners(ref.conversation, *responder) == own_partners) {
      sets.sp.push_back(ref);
    } else {
      sets.ss.push_back(ref);
    }
  }
  const std::size_t responder_elsewhere = index.turns_of(*responder).size() - own_turns;
  sets.rand_size = index.total_turns() - index.conversation_turns(pair.conversation) -
                   responder_elsewhere;
  return sets;
}

std::vector<TurnRef> rand_pool(const SpeakerIndex& index, const ContextResponsePair& pair) {
  const auto responder = index.find(pair.responder);
  if (!responder) throw DataError("pair " + pair.id() + ": responder not in index");
  std::vector<TurnRef> out;
  for (std::size_t i = 0; i < index.total_turns(); ++i) {
    const TurnRef ref = index.flat_turn(i);
    if (rand_eligible(index, *responder, pair.conversation, ref)) out.push_back(ref);
  }
  return out;
}

std::optional<SampleClass> classify(const SpeakerIndex& index,
                                    const ContextResponsePair& pair, TurnRef turn) {
  const auto responder = index.find(pair.responder);
  if (!responder) return std::nullopt;
  if (turn == pair.response()) return SampleClass::kGT;
  const bool same_speaker = index.speaker_of(turn) == *responder;
  if (turn.conversation == pair.conversation) {
    if (same_speaker && turn.position > pair.k) return SampleClass::kSC;
    return std::nullopt;
  }
  if (!same_speaker) return SampleClass::kRand;
  if (index.partners(turn.conversation, *responder) ==
      index.partners(pair.conversation, *responder)) {
    return SampleClass::kSP;
  }
  return SampleClass::kSS;
}

DrawResult draw_candidates(const SpeakerIndex& index, const ContextResponsePair& pair,
                           const SpeakerSets& sets, std::uint64_t seed,
                           const ClassCounts& counts, std::span<const SampleClass> backoff) {
  Rng rng(derive_seed(seed, pair.id()));
  CandidateSet out;
  out.pair = pair;
  out.candidates.push_back(make_candidate(index, pair.response(), SampleClass::kGT));

  std::set<TurnRef> used;
  auto draw_from = [&](SampleClass c, std::size_t k) -> std::vector<TurnRef> {
    switch (c) {
      case SampleClass::kSC: return sample_list(sets.sc, k, used, rng);
      case SampleClass::kSP: return sample_list(sets.sp, k, used, rng);
      case SampleClass::kSS: return sample_list(sets.ss, k, used, rng);
      case SampleClass::kRand: return sample_rand(index, pair, sets.rand_size, k, used, rng);
      case SampleClass::kGT: break;
    }
    return {};
  };

  for (SampleClass slot : {SampleClass::kSC, SampleClass::kSP, SampleClass::kSS,
                           SampleClass::kRand}) {
    std::size_t need = counts[slot];
    if (need == 0) continue;
    for (const TurnRef& ref : draw_from(slot, need)) {
      used.insert(ref);
      out.candidates.push_back(make_candidate(index, ref, slot));
      --need;
    }
    if (need == 0) continue;
    auto start = std::find(backoff.begin(), backoff.end(), slot);
    start = start == backoff.end() ? backoff.begin() : start + 1;
    for (auto it = start; it != backoff.end() && need > 0; ++it) {
      if (*it == SampleClass::kGT || *it == slot) continue;
      for (const TurnRef& ref : draw_from(*it, need)) {
        used.insert(ref);
        out.candidates.push_back(make_candidate(index, ref, *it));
        out.backoff[static_cast<std::size_t>(slot)] = true;
        --need;
      }
    }
  }
  if (out.candidates.size() == 1) {
    return {std::nullopt, "pair " + pair.id() + ": no eligible negatives in any class"};
  }
  return {std::move(out), {}};
}

CandidateSet uniform_candidates(const SpeakerIndex& index, const ContextResponsePair& pair,
                                std::uint64_t seed, std::size_t n_negatives) {
  const SpeakerSets sets = speaker_sets(index, pair);
  if (sets.rand_size < n_negatives) {
    throw DataError("pair " + pair.id() + ": only " + std::to_string(sets.rand_size) +
                    " random negatives available, " + std::to_string(n_negatives) +
                    " requested");
  }
  ClassCounts counts;
  counts.values = {0, 0, 0, 0, n_negatives};
  DrawResult drawn = draw_candidates(index, pair, sets, seed, counts, {});
  if (!drawn.set) throw DataError(drawn.skip_reason);
  return std::move(*drawn.set);
}

void write_candidate_jsonl(const SpeakerIndex& index, const CandidateSet& set,
                           std::ostream& out) {
  using nlohmann::json;
  json candidates = json::array();
  const auto& corpus_pair = set.pair;
  for (const auto& c : set.candidates) {
    candidates.push_back({{"text", c.text},
                          {"class", to_string(c.label)},
                          {"conversation_id", index.corpus()[c.source.conversation].id},
                          {"turn", c.source.position}});
  }
  json backoff = json::array();
  for (SampleClass c : kAllClasses) {
    if (set.backoff[static_cast<std::size_t>(c)]) backoff.push_back(to_string(c));
  }
  out << json{{"pair",
               {{"conversation_id", corpus_pair.conversation_id},
                {"k", corpus_pair.k},
                {"responder", corpus_pair.responder}}},
              {"candidates", candidates},
              {"backoff", backoff}}
             .dump()
      << '\n';
}

}  // namespace ssrem
