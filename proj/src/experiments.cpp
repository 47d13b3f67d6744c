#include "ssrem/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <unordered_map>

#include <Eigen/QR>

#include "ssrem/common.hpp"
#include "ssrem/format.hpp"
#include "ssrem/parallel.hpp"
#include "ssrem/refmetrics.hpp"
#include "ssrem/rng.hpp"

namespace ssrem {
namespace {

using nlohmann::json;

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

std::vector<std::string> read_header(std::istream& in, std::string_view what) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(std::string(what) + ": missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return csv_split(line);
}

std::optional<int> parse_human(const std::string& field, std::size_t line) {
  if (field.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    const int h = std::stoi(field, &used);
    if (used != field.size() || h < 1 || h > 5) throw std::invalid_argument(field);
    return h;
  } catch (const std::exception&) {
    throw DataError("line " + std::to_string(line) + ": human score must be an integer in 1..5");
  }
}

// Latents kept while generating, needed to plant response quality.
struct SynthConversation {
  std::array<Eigen::VectorXd, 2> node;
  std::array<std::vector<std::string>, 2> pool;
  std::array<std::size_t, 2> order{};
  std::vector<std::vector<std::size_t>> fresh;  // per turn
};

std::string lexicon_word(std::size_t i) { return "lx" + std::to_string(i); }
std::string answer_word(std::size_t i) { return "an" + std::to_string(i); }

double similarity(Similarity kind, const Eigen::VectorXd& a, const Eigen::VectorXd& b, bool& ok) {
  if (kind == Similarity::kInvEuclid) {
    ok = true;
    return 1.0 / (1.0 + (a - b).norm());
  }
  const double na = a.norm();
  const double nb = b.norm();
  ok = na > 0.0 && nb > 0.0;
  return ok ? a.dot(b) / (na * nb) : 0.0;
}

std::vector<TurnRef> sample_without_replacement(std::span<const TurnRef> items, std::size_t k,
                                                Rng& rng) {
  std::vector<TurnRef> copy(items.begin(), items.end());
  if (k >= copy.size()) return copy;
  for (std::size_t i = 0; i < k; ++i) std::swap(copy[i], copy[i + rng.uniform_index(copy.size() - i)]);
  copy.resize(k);
  std::sort(copy.begin(), copy.end());
  return copy;
}

MeanCI summarize(const std::vector<double>& values) {
  if (values.size() >= 2) return mean_ci(values);
  MeanCI out;
  out.n = values.size();
  out.mean = values.empty() ? std::numeric_limits<double>::quiet_NaN() : values[0];
  out.half_width = std::numeric_limits<double>::quiet_NaN();
  return out;
}

struct ParsedPair {
  std::size_t conversation;
  std::size_t k;
};

ParsedPair resolve_pair(const SpeakerIndex& index, const std::string& pair_id) {
  const auto hash = pair_id.rfind('#');
  if (hash == std::string::npos) throw DataError("malformed pair id '" + pair_id + "'");
  const auto conv = index.conversation_index(std::string_view(pair_id).substr(0, hash));
  if (!conv) throw DataError("pair id '" + pair_id + "' names an unknown conversation");
  std::size_t k = 0;
  try {
    std::size_t used = 0;
    k = std::stoul(pair_id.substr(hash + 1), &used);
    if (used != pair_id.size() - hash - 1) throw std::invalid_argument(pair_id);
  } catch (const std::exception&) {
    throw DataError("malformed pair id '" + pair_id + "'");
  }
  if (k < 1 || k >= index.conversation_turns(*conv)) {
    throw DataError("pair id '" + pair_id + "' is out of range");
  }
  return {*conv, k};
}

}  // namespace

void SynthSpec::validate() const {
  if (!(0.0 < s_conv && s_conv < s_partner && s_partner < s_speaker && s_speaker < s_global)) {
    throw UsageError("synthetic scales must satisfy 0 < s_conv < s_partner < s_speaker < s_global");
  }
  if (n_communities == 0 || community_size < 2 || convs_per_dyad == 0 || turns < 2 || d == 0 ||
      lexicon == 0 || pool_words == 0 || topic_tokens + new_tokens + echo_tokens == 0) {
    throw UsageError("synthetic corpus sizes must be positive (community_size >= 2, turns >= 2)");
  }
  if (echo_tokens > 0 && new_tokens == 0) throw UsageError("echo tokens need new_tokens > 0");
  if (!(s_local > 0.0) || word_noise < 0.0) throw UsageError("s_local must be positive");
}

json to_json(const SynthSpec& s) {
  return {{"n_communities", s.n_communities}, {"community_size", s.community_size},
          {"convs_per_dyad", s.convs_per_dyad}, {"turns", s.turns},
          {"d", s.d}, {"s_conv", s.s_conv},
          {"s_partner", s.s_partner}, {"s_speaker", s.s_speaker},
          {"s_global", s.s_global}, {"lexicon", s.lexicon},
          {"s_local", s.s_local}, {"pool_words", s.pool_words},
          {"word_noise", s.word_noise}, {"topic_tokens", s.topic_tokens},
          {"new_tokens", s.new_tokens}, {"echo_tokens", s.echo_tokens},
          {"responses_per_pair", s.responses_per_pair}, {"seed", s.seed}};
}

SynthSpec apply_json(SynthSpec s, const json& j) {
  if (!j.is_object()) throw UsageError("synth spec must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "n_communities") s.n_communities = v.get<std::size_t>();
      else if (key == "community_size") s.community_size = v.get<std::size_t>();
      else if (key == "convs_per_dyad") s.convs_per_dyad = v.get<std::size_t>();
      else if (key == "turns") s.turns = v.get<std::size_t>();
      else if (key == "d") s.d = v.get<std::size_t>();
      else if (key == "s_conv") s.s_conv = v.get<double>();
      else if (key == "s_partner") s.s_partner = v.get<double>();
      else if (key == "s_speaker") s.s_speaker = v.get<double>();
      else if (key == "s_global") s.s_global = v.get<double>();
      else if (key == "lexicon") s.lexicon = v.get<std::size_t>();
      else if (key == "s_local") s.s_local = v.get<double>();
      else if (key == "pool_words") s.pool_words = v.get<std::size_t>();
      else if (key == "word_noise") s.word_noise = v.get<double>();
      else if (key == "topic_tokens") s.topic_tokens = v.get<std::size_t>();
      else if (key == "new_tokens") s.new_tokens = v.get<std::size_t>();
      else if (key == "echo_tokens") s.echo_tokens = v.get<std::size_t>();
      else if (key == "responses_per_pair") s.responses_per_pair = v.get<std::size_t>();
      else if (key == "seed") s.seed = v.get<std::uint64_t>();
      else throw UsageError("unknown synth spec key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("invalid synth spec: ") + e.what());
  }
  return s;
}

SynthResult synth_corpus(const SynthSpec& spec) {
  spec.validate();
  const auto d = static_cast<Eigen::Index>(spec.d);
  const double k = 1.0 / std::sqrt(static_cast<double>(spec.d));
  Rng rng(derive_seed(spec.seed, std::string_view("synth")));
  auto gaussian = [&](double sd) {
    Eigen::VectorXd v(d);
    for (Eigen::Index i = 0; i < d; ++i) v(i) = rng.normal(0.0, sd * k);
    return v;
  };

  SynthResult out;
  out.table = EmbeddingTable(spec.d);
  Eigen::MatrixXd Q(static_cast<Eigen::Index>(spec.lexicon), d);
  for (Eigen::Index w = 0; w < Q.rows(); ++w) Q.row(w) = gaussian(spec.s_local).transpose();
  Eigen::MatrixXd G(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) G(i, j) = rng.normal();
  const Eigen::MatrixXd R = Eigen::HouseholderQR<Eigen::MatrixXd>(G).householderQ();
  const Eigen::MatrixXd A = Q * R.transpose();
  auto add_word = [&](const std::string& name, const Eigen::VectorXd& v) {
    out.table.add(name, std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
  };
  for (std::size_t w = 0; w < spec.lexicon; ++w) {
    add_word(lexicon_word(w), Q.row(static_cast<Eigen::Index>(w)).transpose());
    add_word(answer_word(w), A.row(static_cast<Eigen::Index>(w)).transpose());
  }

  std::vector<SynthConversation> latents;
  for (std::size_t g = 0; g < spec.n_communities; ++g) {
    const Eigen::VectorXd C = gaussian(spec.s_global);
    std::vector<Eigen::VectorXd> S;
    for (std::size_t a = 0; a < spec.community_size; ++a) S.push_back(C + gaussian(spec.s_speaker));
    for (std::size_t i = 0; i < spec.community_size; ++i) {
      for (std::size_t j = i + 1; j < spec.community_size; ++j) {
        const std::array<std::size_t, 2> dyad{g * spec.community_size + i, g * spec.community_size + j};
        const Eigen::VectorXd D = gaussian(spec.s_partner);
        for (std::size_t c = 0; c < spec.convs_per_dyad; ++c) {
          const std::size_t conv_no = latents.size();
          const Eigen::VectorXd T = gaussian(spec.s_conv);
          SynthConversation lat;
          for (std::size_t side = 0; side < 2; ++side) {
            lat.node[side] = S[side == 0 ? i : j] + D + T;
            for (std::size_t w = 0; w < spec.pool_words; ++w) {
              const std::string name = "c" + std::to_string(conv_no) + "s" + std::to_string(side) +
                                       "w" + std::to_string(w);
              add_word(name, lat.node[side] + gaussian(spec.word_noise));
              lat.pool[side].push_back(name);
            }
          }
          lat.order = rng.uniform01() < 0.5 ? std::array<std::size_t, 2>{0, 1}
                                             : std::array<std::size_t, 2>{1, 0};
          Conversation conv{"conv" + std::to_string(conv_no), {}};
          for (std::size_t t = 0; t < spec.turns; ++t) {
            const std::size_t side = lat.order[t % 2];
            std::vector<std::string> tokens;
            for (std::size_t n = 0; n < spec.topic_tokens; ++n) {
              tokens.push_back(lat.pool[side][rng.uniform_index(spec.pool_words)]);
            }
            std::vector<std::size_t> fresh;
            for (std::size_t n = 0; n < spec.new_tokens; ++n) {
              fresh.push_back(rng.uniform_index(spec.lexicon));
              tokens.push_back(lexicon_word(fresh.back()));
            }
            for (std::size_t n = 0; n < spec.echo_tokens; ++n) {
              tokens.push_back(t == 0 ? lexicon_word(rng.uniform_index(spec.lexicon))
                                      : answer_word(lat.fresh.back()[n % spec.new_tokens]));
            }
            lat.fresh.push_back(std::move(fresh));
            conv.turns.push_back({"spk" + std::to_string(dyad[side]), join(tokens)});
          }
          out.corpus.push_back(std::move(conv));
          latents.push_back(std::move(lat));
        }
      }
    }
  }
  out.splits = split(out.corpus, {0.8, 0.1, 0.1}, spec.seed);

  // Planted responses: level q replaces each topic and echo token by a random
  // lexicon word with probability 1 - q.
  Rng prng(derive_seed(spec.seed, std::string_view("responses")));
  const double total = static_cast<double>(spec.topic_tokens + spec.new_tokens + spec.echo_tokens);
  for (const auto& conv : out.splits.test) {
    const std::size_t c = std::stoul(conv.id.substr(4));
    const auto& lat = latents[c];
    for (std::size_t t = 1; t < spec.turns; ++t) {
      const std::size_t side = lat.order[t % 2];
      Eigen::VectorXd ideal = lat.node[side] * static_cast<double>(spec.topic_tokens) / total;
      for (std::size_t n = 0; n < spec.echo_tokens; ++n) {
        ideal += A.row(static_cast<Eigen::Index>(lat.fresh[t - 1][n % spec.new_tokens])).transpose() / total;
      }
      for (std::size_t level = 0; level < spec.responses_per_pair; ++level) {
        const double q = spec.responses_per_pair == 1
                             ? 1.0
                             : static_cast<double>(level) / static_cast<double>(spec.responses_per_pair - 1);
        std::vector<std::string> tokens;
        for (std::size_t n = 0; n < spec.topic_tokens; ++n) {
          tokens.push_back(prng.uniform01() < q ? lat.pool[side][prng.uniform_index(spec.pool_words)]
                                                : lexicon_word(prng.uniform_index(spec.lexicon)));
        }
        for (std::size_t n = 0; n < spec.new_tokens; ++n) {
          tokens.push_back(lexicon_word(prng.uniform_index(spec.lexicon)));
        }
        for (std::size_t n = 0; n < spec.echo_tokens; ++n) {
          tokens.push_back(prng.uniform01() < q ? answer_word(lat.fresh[t - 1][n % spec.new_tokens])
                                                : lexicon_word(prng.uniform_index(spec.lexicon)));
        }
        const double distance = (encode(out.table, tokens).values - ideal).norm();
        out.responses.push_back({conv.id + "#" + std::to_string(t), "q" + std::to_string(level),
                                 join(tokens), 1.0 / (1.0 + distance / k), 0});
      }
    }
  }
  std::vector<std::size_t> order(out.responses.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return out.responses[a].planted < out.responses[b].planted;
  });
  for (std::size_t r = 0; r < order.size(); ++r) {
    out.responses[order[r]].human = 1 + static_cast<int>(5 * r / order.size());
  }
  return out;
}

Similarity parse_similarity(std::string_view name) {
  if (name == "cosine") return Similarity::kCosine;
  if (name == "inv_euclid") return Similarity::kInvEuclid;
  throw UsageError("unknown similarity '" + std::string(name) + "' (cosine, inv_euclid)");
}

std::string_view to_string(Similarity s) { return s == Similarity::kCosine ? "cosine" : "inv_euclid"; }

SetSimilarityReport motivation(const Corpus& corpus, const EmbeddingTable& table,
                               Similarity kind, std::size_t sets_per_speaker, std::uint64_t seed,
                               std::size_t max_set_size, std::size_t jobs) {
  if (corpus.empty()) throw DataError("motivation: empty corpus");
  if (max_set_size < 2) throw UsageError("max set size must be at least 2");
  const SpeakerIndex index(corpus);
  std::vector<std::vector<Eigen::VectorXd>> vectors(corpus.size());
  parallel_for(corpus.size(), jobs, [&](std::size_t c) {
    for (const auto& turn : corpus[c].turns) vectors[c].push_back(encode(table, tokenize(turn.text)).values);
  });
  std::vector<TurnRef> all_turns;
  for (std::size_t i = 0; i < index.total_turns(); ++i) all_turns.push_back(index.flat_turn(i));

  struct SpeakerResult {
    std::array<std::vector<double>, 4> values;
    std::array<std::size_t, 4> sets{};
  };
  std::vector<SpeakerResult> per_speaker(index.speaker_count());
  parallel_for(index.speaker_count(), jobs, [&](std::size_t s) {
    const auto speaker = static_cast<SpeakerId>(s);
    Rng rng(derive_seed(seed, "motivation/" + index.name(speaker)));
    auto& res = per_speaker[s];
    auto add_set = [&](std::size_t cls, std::span<const TurnRef> members) {
      if (members.size() < 2) return;
      const auto chosen = sample_without_replacement(members, max_set_size, rng);
      ++res.sets[cls];
      for (std::size_t a = 0; a < chosen.size(); ++a) {
        for (std::size_t b = a + 1; b < chosen.size(); ++b) {
          bool ok = false;
          const double v = similarity(kind, vectors[chosen[a].conversation][chosen[a].position],
                                      vectors[chosen[b].conversation][chosen[b].position], ok);
          if (ok) res.values[cls].push_back(v);
        }
      }
    };
    const auto& own = index.turns_of(speaker);
    for (std::size_t start = 0; start < own.size();) {
      std::size_t end = start;
      while (end < own.size() && own[end].conversation == own[start].conversation) ++end;
      add_set(0, std::span(own).subspan(start, end - start));
      start = end;
    }
    for (const auto& [partners, convs] : index.partner_groups(speaker)) {
      std::vector<TurnRef> members;
      for (const auto& t : own) {
        if (std::binary_search(convs.begin(), convs.end(), t.conversation)) members.push_back(t);
      }
      add_set(1, members);
    }
    add_set(2, own);
    if (own.size() >= 2) {
      for (std::size_t r = 0; r < sets_per_speaker; ++r) {
        add_set(3, sample_without_replacement(all_turns, std::min(own.size(), max_set_size), rng));
      }
    }
  });

  SetSimilarityReport report;
  report.similarity = kind;
  const std::array<SampleClass, 4> classes{SampleClass::kSC, SampleClass::kSP, SampleClass::kSS,
                                           SampleClass::kRand};
  bool any = false;
  for (std::size_t c = 0; c < 4; ++c) {
    std::vector<double> pooled;
    auto& cls = report.classes[c];
    cls.cls = classes[c];
    for (const auto& r : per_speaker) {
      pooled.insert(pooled.end(), r.values[c].begin(), r.values[c].end());
      cls.sets += r.sets[c];
    }
    cls.pairs = pooled.size();
    if (pooled.size() >= 2) {
      cls.ci = mean_ci(pooled);
      any = true;
    } else {
      warn("motivation: class " + std::string(to_string(classes[c])) + " has no usable sets");
    }
  }
  if (!any) throw DataError("motivation: no speaker has the required set structure");
  return report;
}

void write_csv(const SetSimilarityReport& report, std::ostream& out) {
  out << "# similarity=" << to_string(report.similarity) << "\n";
  out << "class,sets,pairs,mean,half_width,level\n";
  for (const auto& c : report.classes) {
    out << to_string(c.cls) << ',' << c.sets << ',' << c.pairs << ','
        << (c.ci ? format_double(c.ci->mean) : "") << ','
        << (c.ci ? format_double(c.ci->half_width) : "") << ','
        << (c.ci ? format_double(c.ci->level) : "") << "\n";
  }
}

std::vector<ScoreRecord> read_responses_csv(std::istream& in) {
  const auto header = read_header(in, "responses");
  if (header != std::vector<std::string>{"pair_id", "source", "human", "text"}) {
    throw DataError("responses: header must be pair_id,source,human,text");
  }
  std::vector<ScoreRecord> out;
  std::string line;
  for (std::size_t n = 2; std::getline(in, line); ++n) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = csv_split(line);
    if (f.size() != 4) throw DataError("responses line " + std::to_string(n) + ": expected 4 fields");
    out.push_back({f[0], f[1], f[3], parse_human(f[2], n), {}});
  }
  return out;
}

void write_responses_csv(std::span<const PlantedResponse> responses, std::ostream& out) {
  out << "pair_id,source,human,text\n";
  for (const auto& r : responses) {
    out << csv_escape(r.pair_id) << ',' << csv_escape(r.source) << ',' << r.human << ','
        << csv_escape(r.text) << "\n";
  }
}

void write_scores_csv(std::span<const ScoreRecord> records, std::ostream& out) {
  out << "pair_id,source,human";
  for (auto m : kMetricColumns) out << ',' << m;
  out << "\n";
  for (const auto& r : records) {
    out << csv_escape(r.pair_id) << ',' << csv_escape(r.source) << ','
        << (r.human ? std::to_string(*r.human) : "");
    for (auto m : kMetricColumns) {
      const auto it = r.scores.find(std::string(m));
      out << ',' << (it == r.scores.end() ? "" : format_double(it->second));
    }
    out << "\n";
  }
}

std::vector<ScoreRecord> read_scores_csv(std::istream& in) {
  const auto header = read_header(in, "scores");
  std::vector<std::string> expected{"pair_id", "source", "human"};
  expected.insert(expected.end(), kMetricColumns.begin(), kMetricColumns.end());
  if (header != expected) throw DataError("scores: unexpected header");
  std::vector<ScoreRecord> out;
  std::string line;
  for (std::size_t n = 2; std::getline(in, line); ++n) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = csv_split(line);
    if (f.size() != expected.size()) {
      throw DataError("scores line " + std::to_string(n) + ": expected " +
                      std::to_string(expected.size()) + " fields");
    }
    ScoreRecord r{f[0], f[1], "", parse_human(f[2], n), {}};
    for (std::size_t m = 0; m < kMetricColumns.size(); ++m) {
      const auto& field = f[3 + m];
      if (field.empty()) continue;
      try {
        r.scores[std::string(kMetricColumns[m])] = parse_double(field);
      } catch (const std::exception&) {
        throw DataError("scores line " + std::to_string(n) + ": bad number '" + field + "'");
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<ScoreRecord> score_all(const Corpus& corpus, std::vector<ScoreRecord> records,
                                   const EmbeddingTable& table, const ScoreModels& models,
                                   std::span<const std::string> metrics, std::size_t jobs) {
  for (const auto& m : metrics) {
    if (std::find(kMetricColumns.begin(), kMetricColumns.end(), m) == kMetricColumns.end()) {
      throw UsageError("unknown metric '" + m + "'");
    }
  }
  auto wants = [&](std::string_view m) {
    return std::find(metrics.begin(), metrics.end(), m) != metrics.end();
  };
  if ((wants("emb") || wants("ssrem") || wants("rsrem") || wants("ruber")) && table.dim() == 0) {
    throw DataError("score: embedding table required");
  }
  std::map<std::string, Scorer> scorers;
  auto need = [&](std::string_view name, const std::optional<ModelParams>& p) {
    if (!wants(name)) return;
    if (!p) throw DataError("score: parameters for " + std::string(name) + " are missing");
    scorers.emplace(std::string(name), Scorer(table, *p));
  };
  need("ssrem", models.ssrem);
  need("rsrem", models.rsrem);
  need("ruber", models.ruber);
  if (metrics.empty() || records.empty()) return records;

  const SpeakerIndex index(corpus);
  std::vector<ParsedPair> pairs;
  for (const auto& r : records) pairs.push_back(resolve_pair(index, r.pair_id));

  parallel_for(records.size(), jobs, [&](std::size_t i) {
    auto& r = records[i];
    const auto& conv = corpus[pairs[i].conversation];
    std::vector<std::vector<std::string>> context;
    for (std::size_t t = 0; t < pairs[i].k; ++t) context.push_back(tokenize(conv.turns[t].text));
    const auto reference = tokenize(conv.turns[pairs[i].k].text);
    const auto response = tokenize(r.text);
    for (const auto& m : metrics) {
      try {
        if (m == "bleu") r.scores[m] = bleu(reference, response).value;
        else if (m == "rouge_l") r.scores[m] = rouge_l(reference, response).value;
        else if (m == "emb") r.scores[m] = emb_average(table, reference, response).value;
        else r.scores[m] = scorers.at(m).score(context, reference, response);
      } catch (const MetricError&) {
        // Undefined for empty inputs: left missing.
      }
    }
  });
  return records;
}

std::vector<CorrelationRow> correlate(std::span<const ScoreRecord> records) {
  std::size_t with_human = 0;
  for (const auto& r : records) with_human += r.human ? 1 : 0;
  if (with_human < 3) throw DataError("correlate: need at least 3 records with human scores");
  std::vector<CorrelationRow> out;
  for (auto metric : kMetricColumns) {
    std::vector<double> x, y;
    for (const auto& r : records) {
      const auto it = r.scores.find(std::string(metric));
      if (!r.human || it == r.scores.end()) continue;
      x.push_back(*r.human);
      y.push_back(it->second);
    }
    if (x.empty()) continue;
    CorrelationRow row{std::string(metric), x.size(), {}, {}, ""};
    try {
      row.spearman = spearman(x, y);
      row.pearson = pearson(x, y);
    } catch (const StatisticError& e) {
      row.flag = x.size() < 3 ? "too_few" : "zero_variance";
      warn("correlate: " + row.metric + ": " + e.what());
    }
    out.push_back(std::move(row));
  }
  return out;
}

void write_csv(std::span<const CorrelationRow> rows, std::ostream& out) {
  out << "metric,n,spearman,spearman_p,pearson,pearson_p,flag\n";
  for (const auto& r : rows) {
    out << r.metric << ',' << r.n << ','
        << (r.spearman ? format_double(r.spearman->coefficient) : "") << ','
        << (r.spearman ? format_double(r.spearman->p_value) : "") << ','
        << (r.pearson ? format_double(r.pearson->coefficient) : "") << ','
        << (r.pearson ? format_double(r.pearson->p_value) : "") << ',' << r.flag << "\n";
  }
}

IdentifyReport identify(const Corpus& corpus, const Corpus& test, const EmbeddingTable& table,
                        const ModelParams& params, std::span<const SampleClass> classes,
                        std::uint64_t seed, std::size_t jobs) {
  if (classes.empty()) throw UsageError("identify: no classes requested");
  if (params.dim() != table.dim()) throw DataError("identify: model and embedding dimensions differ");
  const SpeakerIndex index(corpus);
  const auto pairs = context_response_pairs(corpus, test);
  if (pairs.empty()) throw DataError("identify: no test pairs");

  std::vector<SpeakerSets> sets(pairs.size());
  parallel_for(pairs.size(), jobs, [&](std::size_t i) { sets[i] = speaker_sets(index, pairs[i]); });

  IdentifyReport report;
  std::vector<SampleClass> kept;
  for (SampleClass c : kAllClasses) {
    if (std::find(classes.begin(), classes.end(), c) == classes.end()) continue;
    const bool populated = c == SampleClass::kGT ||
                           std::any_of(sets.begin(), sets.end(), [&](const SpeakerSets& s) { return s.size(c) > 0; });
    if (populated) {
      kept.push_back(c);
    } else {
      report.dropped.push_back(c);
      warn("identify: class " + std::string(to_string(c)) + " cannot be populated; dropped");
    }
  }
  ClassCounts counts;
  counts.values = {0, 0, 0, 0, 0};
  for (SampleClass c : kept) {
    if (c != SampleClass::kGT) counts[c] = 1;
  }
  const bool score_gt = std::find(kept.begin(), kept.end(), SampleClass::kGT) != kept.end();

  struct PairResult {
    bool used = false;
    bool correct = false;
    std::vector<IdentifyRow> rows;
  };
  std::vector<PairResult> results(pairs.size());
  parallel_for(pairs.size(), jobs, [&](std::size_t i) {
    for (SampleClass c : kept) {
      if (c != SampleClass::kGT && sets[i].size(c) == 0) return;
    }
    const auto& pair = pairs[i];
    const auto& conv = corpus[pair.conversation];
    std::vector<std::vector<std::string>> context;
    for (std::size_t t = 0; t < pair.k; ++t) context.push_back(tokenize(conv.turns[t].text));
    const Eigen::VectorXd c = encode_context(table, context, params.config.context_pool).values;
    auto f_of = [&](TurnRef ref) {
      return f_score(params.M, c, encode(table, tokenize(index.turn(ref).text)).values);
    };
    auto& res = results[i];
    res.used = true;
    const double f_gt = f_of(pair.response());
    if (score_gt) res.rows.push_back({pair.id(), SampleClass::kGT, f_gt});
    double best_other = -std::numeric_limits<double>::infinity();
    if (counts.values != std::array<std::size_t, 5>{0, 0, 0, 0, 0}) {
      const auto drawn = draw_candidates(index, pair, sets[i], seed, counts, {});
      for (std::size_t n = 1; n < drawn.set->candidates.size(); ++n) {
        const auto& cand = drawn.set->candidates[n];
        const double f = f_of(cand.source);
        best_other = std::max(best_other, f);
        res.rows.push_back({pair.id(), cand.label, f});
      }
    }
    res.correct = f_gt > best_other;
  });

  std::map<SampleClass, std::vector<double>> values;
  std::size_t correct = 0;
  for (auto& r : results) {
    if (!r.used) {
      ++report.pairs_skipped;
      continue;
    }
    ++report.pairs_used;
    correct += r.correct ? 1 : 0;
    for (auto& row : r.rows) {
      values[row.cls].push_back(row.f);
      report.rows.push_back(std::move(row));
    }
  }
  if (report.pairs_used == 0) throw DataError("identify: no test pair can populate every class");
  report.accuracy = static_cast<double>(correct) / static_cast<double>(report.pairs_used);
  for (SampleClass c : kept) report.classes.push_back({c, summarize(values[c])});
  return report;
}

void write_summary_csv(const IdentifyReport& report, std::ostream& out) {
  out << "class,n,mean,half_width,level\n";
  for (const auto& c : report.classes) {
    out << to_string(c.cls) << ',' << c.ci.n << ',' << format_double(c.ci.mean) << ','
        << format_double(c.ci.half_width) << ',' << format_double(c.ci.level) << "\n";
  }
}

void write_rows_csv(const IdentifyReport& report, std::ostream& out) {
  out << "pair_id,class,f\n";
  for (const auto& r : report.rows) {
    out << csv_escape(r.pair_id) << ',' << to_string(r.cls) << ',' << format_double(r.f) << "\n";
  }
}

std::vector<CopyAttackRow> copy_attack(
    const Corpus& test, const EmbeddingTable& table,
    std::span<const std::pair<std::string, ModelParams>> models, std::size_t jobs) {
  std::vector<ContextResponsePair> pairs;
  for (auto& p : context_response_pairs(test)) {
    if (p.k >= 2) pairs.push_back(std::move(p));
  }
  if (pairs.empty()) throw DataError("copy-attack: no test pair has two or more context turns");

  struct Encoded {
    Eigen::VectorXd context;
    Eigen::VectorXd gt;
    std::vector<Eigen::VectorXd> turns;
  };
  std::vector<std::unordered_map<ContextPool, Encoded>> encoded(pairs.size());
  std::set<ContextPool> pools;
  for (const auto& [name, p] : models) {
    if (!p.f_bounds) throw DataError("copy-attack: model " + name + " has no f bounds");
    if (p.dim() != table.dim()) throw DataError("copy-attack: model " + name + " dimension differs");
    pools.insert(p.config.context_pool);
  }
  parallel_for(pairs.size(), jobs, [&](std::size_t i) {
    const auto& conv = test[pairs[i].conversation];
    std::vector<std::vector<std::string>> ctx;
    for (std::size_t t = 0; t < pairs[i].k; ++t) ctx.push_back(tokenize(conv.turns[t].text));
    for (ContextPool pool : pools) {
      Encoded e;
      e.context = encode_context(table, ctx, pool).values;
      e.gt = encode(table, tokenize(conv.turns[pairs[i].k].text)).values;
      for (const auto& t : ctx) e.turns.push_back(encode(table, t).values);
      encoded[i].emplace(pool, std::move(e));
    }
  });

  std::vector<CopyAttackRow> out;
  for (const auto& [name, p] : models) {
    CopyAttackRow row{name, pairs.size(), 0, 0, 0, 0, 0, 0};
    for (const auto& per_pair : encoded) {
      const auto& e = per_pair.at(p.config.context_pool);
      double ctx_raw = 0.0, ctx_norm = 0.0;
      for (const auto& t : e.turns) {
        const double f = f_score(p.M, e.context, t);
        ctx_raw += f;
        ctx_norm += normalize(f, *p.f_bounds);
      }
      const double n = static_cast<double>(e.turns.size());
      const double gt = f_score(p.M, e.context, e.gt);
      row.raw_context_mean += ctx_raw / n;
      row.context_mean += ctx_norm / n;
      row.raw_gt_mean += gt;
      row.gt_mean += normalize(gt, *p.f_bounds);
    }
    const double n = static_cast<double>(pairs.size());
    row.context_mean /= n;
    row.gt_mean /= n;
    row.raw_context_mean /= n;
    row.raw_gt_mean /= n;
    row.delta = row.context_mean - row.gt_mean;
    row.raw_delta = row.raw_context_mean - row.raw_gt_mean;
    out.push_back(row);
  }
  return out;
}

void write_csv(std::span<const CopyAttackRow> rows, std::ostream& out) {
  out << "model,pairs,context_mean,gt_mean,delta,raw_context_mean,raw_gt_mean,raw_delta\n";
  for (const auto& r : rows) {
    out << csv_escape(r.model) << ',' << r.pairs << ',' << format_double(r.context_mean) << ','
        << format_double(r.gt_mean) << ',' << format_double(r.delta) << ','
        << format_double(r.raw_context_mean) << ',' << format_double(r.raw_gt_mean) << ','
        << format_double(r.raw_delta) << "\n";
  }
}

std::vector<ScatterRow> scatter_emit(std::span<const ScoreRecord> records, std::string_view metric,
                                     double jitter_sd, std::uint64_t seed) {
  if (jitter_sd < 0.0) throw UsageError("jitter sd must be non-negative");
  std::vector<ScatterRow> rows;
  std::vector<double> x, y;
  Rng rng(derive_seed(seed, "scatter/" + std::string(metric)));
  for (const auto& r : records) {
    const auto it = r.scores.find(std::string(metric));
    if (!r.human || it == r.scores.end()) continue;
    const double noise = rng.normal();
    rows.push_back({std::string(metric), r.pair_id, *r.human, *r.human + jitter_sd * noise, it->second, 0, 0});
    x.push_back(*r.human);
    y.push_back(it->second);
  }
  double slope = std::numeric_limits<double>::quiet_NaN();
  double intercept = std::numeric_limits<double>::quiet_NaN();
  try {
    const auto fit = linear_fit(x, y);
    slope = fit.slope;
    intercept = fit.intercept;
  } catch (const StatisticError& e) {
    warn("scatter: " + std::string(metric) + ": no fit (" + e.what() + ")");
  }
  for (auto& r : rows) {
    r.slope = slope;
    r.intercept = intercept;
  }
  return rows;
}

void write_csv(std::span<const ScatterRow> rows, std::ostream& out) {
  out << "metric,pair_id,human,human_jittered,score,slope,intercept\n";
  for (const auto& r : rows) {
    out << r.metric << ',' << csv_escape(r.pair_id) << ',' << r.human << ','
        << format_double(r.human_jittered) << ',' << format_double(r.score) << ','
        << format_double(r.slope) << ',' << format_double(r.intercept) << "\n";
  }
}

}  // namespace ssrem
