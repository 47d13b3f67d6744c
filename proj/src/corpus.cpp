#include "ssrem/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "ssrem/common.hpp"
#include "ssrem/rng.hpp"

namespace ssrem {
namespace {

using nlohmann::json;

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
  });
}

// Returns an error message, or an empty string when the record is valid.
std::string parse_record(const std::string& line, const IngestOptions& options,
                         Conversation& conv, std::set<std::string>& unknown_keys) {
  json record;
  try {
    record = json::parse(line);
  } catch (const json::parse_error& e) {
    return std::string("invalid JSON: ") + e.what();
  }
  if (!record.is_object()) return "record is not an object";
  for (const auto& [key, value] : record.items()) {
    if (key != "conversation_id" && key != "turns") unknown_keys.insert(key);
  }
  const auto id = record.find("conversation_id");
  if (id == record.end() || !id->is_string()) return "missing string field 'conversation_id'";
  conv.id = id->get<std::string>();
  if (conv.id.empty()) return "empty conversation_id";
  const auto turns = record.find("turns");
  if (turns == record.end() || !turns->is_array()) return "missing array field 'turns'";
  if (turns->empty()) return "empty turns list";

  for (std::size_t i = 0; i < turns->size(); ++i) {
    const json& t = (*turns)[i];
    const std::string where = "turn " + std::to_string(i);
    if (!t.is_object()) return where + " is not an object";
    for (const auto& [key, value] : t.items()) {
      if (key != "speaker" && key != "text") unknown_keys.insert("turns[]." + key);
    }
    const auto speaker = t.find("speaker");
    const auto text = t.find("text");
    if (speaker == t.end() || !speaker->is_string()) return where + ": missing string 'speaker'";
    if (text == t.end() || !text->is_string()) return where + ": missing string 'text'";
    Turn turn{speaker->get<std::string>(), text->get<std::string>()};
    if (turn.speaker.empty()) return where + ": empty speaker";
    if (blank(turn.text)) return where + ": empty text";
    if (options.merge_consecutive && !conv.turns.empty() &&
        conv.turns.back().speaker == turn.speaker) {
      conv.turns.back().text += ' ';
      conv.turns.back().text += turn.text;
    } else {
      conv.turns.push_back(std::move(turn));
    }
  }
  if (conv.turns.size() < 2) return "fewer than 2 turns after merging";
  std::set<std::string_view> speakers;
  for (const auto& t : conv.turns) speakers.insert(t.speaker);
  if (speakers.size() < 2) return "fewer than 2 distinct speakers";
  return {};
}

}  // namespace

IngestResult ingest(std::istream& in, const IngestOptions& options, std::string_view source) {
  IngestResult result;
  std::set<std::string> seen_ids;
  std::set<std::string> unknown_keys;
  std::string line;
  while (std::getline(in, line)) {
    ++result.lines_read;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (blank(line)) continue;
    Conversation conv;
    std::string error = parse_record(line, options, conv, unknown_keys);
    if (error.empty() && !seen_ids.insert(conv.id).second) {
      error = "duplicate conversation_id '" + conv.id + "'";
    }
    if (!error.empty()) {
      result.rejected.push_back({result.lines_read, std::move(error)});
      continue;
    }
    result.conversations.push_back(std::move(conv));
  }
  for (const auto& key : unknown_keys) {
    warn(std::string(source) + ": ignoring unknown key '" + key + "'");
  }
  if (result.conversations.empty()) {
    std::string message = std::string(source) + ": empty corpus";
    if (!result.rejected.empty()) {
      message += " (" + std::to_string(result.rejected.size()) +
                 " rejected lines; first at line " +
                 std::to_string(result.rejected.front().line) + ": " +
                 result.rejected.front().message + ")";
    }
    throw DataError(message);
  }
  return result;
}

IngestResult ingest(const std::filesystem::path& path, const IngestOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read corpus file " + path.string());
  return ingest(in, options, path.string());
}

Corpus load_corpus(const std::filesystem::path& path, const IngestOptions& options) {
  IngestResult result = ingest(path, options);
  if (!result.rejected.empty()) {
    const auto& first = result.rejected.front();
    throw DataError(path.string() + ":" + std::to_string(first.line) + ": " + first.message);
  }
  return std::move(result.conversations);
}

void write_jsonl(const Corpus& corpus, std::ostream& out) {
  for (const auto& conv : corpus) {
    json turns = json::array();
    for (const auto& t : conv.turns) turns.push_back({{"speaker", t.speaker}, {"text", t.text}});
    out << json{{"conversation_id", conv.id}, {"turns", turns}}.dump() << '\n';
  }
}

void write_jsonl(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_jsonl(corpus, out);
}

SpeakerIndex::SpeakerIndex(const Corpus& corpus) : corpus_(&corpus) {
  turn_speakers_.resize(corpus.size());
  conversation_speakers_.resize(corpus.size());
  for (std::size_t c = 0; c < corpus.size(); ++c) {
    conversation_ids_.emplace(corpus[c].id, c);
    const auto& turns = corpus[c].turns;
    for (std::size_t t = 0; t < turns.size(); ++t) {
      auto [it, inserted] = ids_.emplace(turns[t].speaker, static_cast<SpeakerId>(names_.size()));
      if (inserted) {
        names_.push_back(turns[t].speaker);
        speaker_turns_.emplace_back();
      }
      const TurnRef ref{static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(t)};
      turn_speakers_[c].push_back(it->second);
      speaker_turns_[it->second].push_back(ref);
      flat_.push_back(ref);
    }
    auto& speakers = conversation_speakers_[c];
    speakers = turn_speakers_[c];
    std::sort(speakers.begin(), speakers.end());
    speakers.erase(std::unique(speakers.begin(), speakers.end()), speakers.end());
    for (SpeakerId s : speakers) {
      groups_[{s, partners(c, s)}].push_back(static_cast<std::uint32_t>(c));
    }
  }
}

const Turn& SpeakerIndex::turn(TurnRef ref) const {
  return (*corpus_)[ref.conversation].turns[ref.position];
}

std::optional<SpeakerId> SpeakerIndex::find(std::string_view speaker) const {
  const auto it = ids_.find(std::string(speaker));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

SpeakerId SpeakerIndex::speaker_of(TurnRef ref) const {
  return turn_speakers_[ref.conversation][ref.position];
}

std::vector<SpeakerId> SpeakerIndex::partners(std::size_t conversation, SpeakerId speaker) const {
  std::vector<SpeakerId> out;
  for (SpeakerId s : conversation_speakers_[conversation]) {
    if (s != speaker) out.push_back(s);
  }
  return out;
}

const std::vector<std::uint32_t>& SpeakerIndex::conversations_with(
    SpeakerId speaker, const std::vector<SpeakerId>& partners) const {
  static const std::vector<std::uint32_t> kEmpty;
  const auto it = groups_.find({speaker, partners});
  return it == groups_.end() ? kEmpty : it->second;
}

std::vector<std::pair<std::vector<SpeakerId>, std::vector<std::uint32_t>>>
SpeakerIndex::partner_groups(SpeakerId speaker) const {
  std::vector<std::pair<std::vector<SpeakerId>, std::vector<std::uint32_t>>> out;
  auto it = groups_.lower_bound({speaker, {}});
  for (; it != groups_.end() && it->first.first == speaker; ++it) {
    out.emplace_back(it->first.second, it->second);
  }
  return out;
}

std::size_t SpeakerIndex::conversation_turns(std::size_t conversation) const {
  return turn_speakers_[conversation].size();
}

std::optional<std::size_t> SpeakerIndex::conversation_index(std::string_view id) const {
  const auto it = conversation_ids_.find(std::string(id));
  if (it == conversation_ids_.end()) return std::nullopt;
  return it->second;
}

std::vector<ContextResponsePair> context_response_pairs(const Corpus& corpus) {
  std::vector<ContextResponsePair> pairs;
  for (std::size_t c = 0; c < corpus.size(); ++c) {
    for (std::size_t k = 1; k < corpus[c].turns.size(); ++k) {
      pairs.push_back({static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(k),
                       corpus[c].id, corpus[c].turns[k].speaker});
    }
  }
  return pairs;
}

std::vector<ContextResponsePair> context_response_pairs(const Corpus& corpus,
                                                        const Corpus& subset) {
  std::unordered_map<std::string_view, std::size_t> where;
  for (std::size_t c = 0; c < corpus.size(); ++c) where.emplace(corpus[c].id, c);
  std::vector<ContextResponsePair> pairs;
  for (const auto& conv : subset) {
    const auto it = where.find(conv.id);
    if (it == where.end()) {
      throw DataError("conversation '" + conv.id + "' is not part of the corpus");
    }
    const auto& turns = corpus[it->second].turns;
    for (std::size_t k = 1; k < turns.size(); ++k) {
      pairs.push_back({static_cast<std::uint32_t>(it->second), static_cast<std::uint32_t>(k),
                       conv.id, turns[k].speaker});
    }
  }
  return pairs;
}

std::array<std::size_t, 3> apportion(std::size_t n, const std::array<double, 3>& ratios) {
  double total = 0.0;
  for (double r : ratios) {
    if (!(r > 0.0)) throw UsageError("split ratios must be positive");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw UsageError("split ratios must sum to 1");
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double quota = ratios[i] * static_cast<double>(n);
    sizes[i] = static_cast<std::size_t>(std::floor(quota));
    remainder[i] = quota - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++sizes[order[i % 3]];
  return sizes;
}

SplitResult split(const Corpus& corpus, const std::array<double, 3>& ratios,
                  std::uint64_t seed) {
  const auto sizes = apportion(corpus.size(), ratios);
  if (sizes[0] == 0 || sizes[1] == 0 || sizes[2] == 0) {
    throw DataError("corpus of " + std::to_string(corpus.size()) +
                    " conversations is too small for the requested split");
  }
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, std::string_view("split")));
  rng.shuffle(order);
  std::vector<int> which(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    which[order[i]] = i < sizes[0] ? 0 : (i < sizes[0] + sizes[1] ? 1 : 2);
  }
  SplitResult out;
  for (std::size_t c = 0; c < corpus.size(); ++c) {
    Corpus& target = which[c] == 0 ? out.train : (which[c] == 1 ? out.valid : out.test);
    target.push_back(corpus[c]);
  }
  return out;
}

}  // namespace ssrem
