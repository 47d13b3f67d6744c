#include <doctest.h>

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "ssrem/common.hpp"
#include "ssrem/experiments.hpp"
#include "ssrem/stats.hpp"

using namespace ssrem;

namespace {

SynthSpec small_spec() {
  SynthSpec s;
  s.n_communities = 4;
  s.community_size = 3;
  s.convs_per_dyad = 2;
  s.lexicon = 200;
  s.d = 8;
  return s;
}

std::string dump(const Corpus& c) {
  std::ostringstream out;
  write_jsonl(c, out);
  return out.str();
}

EmbeddingTable table_for(const Corpus& corpus) {
  std::vector<std::string> words;
  for (const auto& conv : corpus)
    for (const auto& t : conv.turns)
      for (auto& w : tokenize(t.text)) words.push_back(w);
  return oracles::oracle_table(words);
}

ModelParams params_with(Eigen::MatrixXd M) {
  ModelParams p;
  p.M = std::move(M);
  p.f_bounds = Bounds{-1.0, 1.0};
  p.g_bounds = Bounds{0.0, 1.0};
  p.config = default_config(ModelVariant::kSsrem);
  return p;
}

struct WarningCapture {
  std::vector<std::string> seen;
  WarningHandler previous;
  WarningCapture() {
    previous = set_warning_handler([this](std::string_view m) { seen.emplace_back(m); });
  }
  ~WarningCapture() { set_warning_handler(previous); }
};

ScoreRecord record(std::string id, int human, std::map<std::string, double> scores) {
  return {std::move(id), "s", "", human, std::move(scores)};
}

}  // namespace

TEST_CASE("synthetic corpus is deterministic per seed") {
  const auto a = synth_corpus(small_spec());
  const auto b = synth_corpus(small_spec());
  CHECK(dump(a.corpus) == dump(b.corpus));
  CHECK(a.table.sha256() == b.table.sha256());
  CHECK(a.responses.size() == b.responses.size());
  auto other = small_spec();
  other.seed = 8;
  CHECK(dump(synth_corpus(other).corpus) != dump(a.corpus));

  const auto s = small_spec();
  CHECK(a.corpus.size() == s.n_communities * 3 * s.convs_per_dyad);
  for (const auto& conv : a.corpus) CHECK(conv.turns.size() == s.turns);
  for (const auto& r : a.responses) {
    CHECK(r.human >= 1);
    CHECK(r.human <= 5);
    CHECK(r.planted > 0.0);
    CHECK(r.planted <= 1.0);
  }
}

TEST_CASE("synthetic spec validation and overlay") {
  auto s = small_spec();
  s.s_partner = s.s_conv;
  CHECK_THROWS_AS(s.validate(), UsageError);
  s = small_spec();
  s.community_size = 1;
  CHECK_THROWS_AS(s.validate(), UsageError);
  CHECK_THROWS_AS(apply_json(small_spec(), nlohmann::json{{"bogus", 1}}), UsageError);
  const auto t = apply_json(small_spec(), nlohmann::json{{"s_local", 0.5}, {"seed", 3}});
  CHECK(t.s_local == 0.5);
  CHECK(t.seed == 3);
  CHECK(to_json(apply_json(SynthSpec{}, to_json(t))) == to_json(t));
}

TEST_CASE("motivation ordering on a planted corpus") {
  SynthSpec s;
  s.s_conv = 0.1;
  s.s_partner = 0.3;
  s.s_speaker = 0.6;
  s.s_global = 1.0;
  s.s_local = 0.5;
  const auto synth = synth_corpus(s);
  const auto report = motivation(synth.corpus, synth.table, Similarity::kCosine, 5, 7, 64, 4);
  for (std::size_t c = 0; c + 1 < 4; ++c) {
    const auto& hi = *report.classes[c].ci;
    const auto& lo = *report.classes[c + 1].ci;
    CAPTURE(c);
    CHECK(hi.mean - hi.half_width > lo.mean + lo.half_width);
  }
}

TEST_CASE("motivation on identical utterances gives 1 with zero width") {
  auto corpus = fixtures::toy_corpus();
  for (auto& conv : corpus)
    for (auto& t : conv.turns) t.text = "same words here";
  const auto table = table_for(corpus);
  for (auto sim : {Similarity::kCosine, Similarity::kInvEuclid}) {
    const auto report = motivation(corpus, table, sim);
    for (const auto& c : report.classes) {
      REQUIRE(c.ci);
      CHECK(c.ci->mean == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(c.ci->half_width == doctest::Approx(0.0));
    }
  }
  std::ostringstream out;
  write_csv(motivation(corpus, table), out);
  CHECK(out.str().rfind("# similarity=cosine\nclass,sets,pairs,mean,half_width,level\n", 0) == 0);
  CHECK(parse_similarity("inv_euclid") == Similarity::kInvEuclid);
  CHECK_THROWS_AS(parse_similarity("dot"), UsageError);
}

TEST_CASE("identify with GT only and with a zero matrix") {
  const auto corpus = fixtures::toy_corpus();
  const auto table = table_for(corpus);
  const auto gt_only = identify(corpus, corpus, table, params_with(Eigen::MatrixXd::Identity(4, 4)),
                                std::vector{SampleClass::kGT}, 1);
  CHECK(gt_only.accuracy == 1.0);
  CHECK(gt_only.pairs_skipped == 0);
  CHECK(gt_only.rows.size() == gt_only.pairs_used);

  WarningCapture warnings;
  const std::vector classes{SampleClass::kGT, SampleClass::kSC, SampleClass::kRand};
  const auto zero = identify(corpus, corpus, table, params_with(Eigen::MatrixXd::Zero(4, 4)), classes, 1, 3);
  for (const auto& c : zero.classes) CHECK(c.ci.mean == 0.0);
  // ties are not wins
  CHECK(zero.accuracy == 0.0);

  CHECK_THROWS_AS(identify(corpus, corpus, table, params_with(Eigen::MatrixXd::Zero(3, 3)), classes, 1),
                  DataError);
  CHECK_THROWS_AS(identify(corpus, corpus, table, params_with(Eigen::MatrixXd::Zero(4, 4)),
                           std::vector<SampleClass>{}, 1),
                  UsageError);
}

TEST_CASE("identify drops classes no pair can populate") {
  const Corpus corpus{{"c1", {{"A", "one"}, {"B", "two"}, {"A", "three"}, {"B", "four"}}}};
  const auto table = table_for(corpus);
  WarningCapture warnings;
  const auto report = identify(corpus, corpus, table, params_with(Eigen::MatrixXd::Identity(4, 4)),
                               std::vector{SampleClass::kGT, SampleClass::kSP}, 1);
  CHECK(report.dropped == std::vector{SampleClass::kSP});
  CHECK(warnings.seen.size() == 1);
  CHECK(report.classes.size() == 1);
}

TEST_CASE("copy attack means") {
  const auto corpus = fixtures::toy_corpus();
  const auto table = table_for(corpus);
  const std::vector<std::pair<std::string, ModelParams>> models{
      {"id", params_with(Eigen::MatrixXd::Identity(4, 4))}, {"zero", params_with(Eigen::MatrixXd::Zero(4, 4))}};
  const auto rows = copy_attack(corpus, table, models, 2);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].delta == doctest::Approx(rows[0].context_mean - rows[0].gt_mean));
  CHECK(rows[0].raw_delta == doctest::Approx(rows[0].raw_context_mean - rows[0].raw_gt_mean));
  // bounds (-1, 1): normalized = (raw + 1) / 2
  CHECK(rows[0].context_mean == doctest::Approx((rows[0].raw_context_mean + 1) / 2));
  CHECK(rows[1].raw_delta == 0.0);
  CHECK(rows[1].context_mean == 0.5);

  // every eligible pair of one conversation, by hand
  const Corpus one{corpus[2]};
  const auto r = copy_attack(one, table, std::span(models).first(1));
  double expected = 0;
  std::size_t pairs = 0;
  for (std::size_t k = 2; k < one[0].turns.size(); ++k, ++pairs) {
    std::vector<std::string> ctx;
    for (std::size_t t = 0; t < k; ++t)
      for (auto& w : tokenize(one[0].turns[t].text)) ctx.push_back(w);
    const auto c = encode(table, ctx).values;
    double sum = 0;
    for (std::size_t t = 0; t < k; ++t) sum += std::tanh(c.dot(encode(table, tokenize(one[0].turns[t].text)).values));
    expected += sum / static_cast<double>(k);
  }
  CHECK(r[0].pairs == pairs);
  CHECK(r[0].raw_context_mean == doctest::Approx(expected / static_cast<double>(pairs)).epsilon(1e-12));
}

TEST_CASE("scatter jitter") {
  std::vector<ScoreRecord> records;
  for (int i = 0; i < 4000; ++i) records.push_back(record("p" + std::to_string(i), 1 + i % 5, {{"emb", 0.5 * (1 + i % 5) + 1}}));
  const auto plain = scatter_emit(records, "emb", 0.0, 1);
  REQUIRE(plain.size() == records.size());
  for (const auto& r : plain) CHECK(r.human_jittered == r.human);
  CHECK(plain[0].slope == doctest::Approx(0.5));
  CHECK(plain[0].intercept == doctest::Approx(1.0));

  const auto jittered = scatter_emit(records, "emb", 0.3, 1);
  std::vector<double> noise;
  for (const auto& r : jittered) noise.push_back(r.human_jittered - r.human);
  const auto ci = mean_ci(noise);
  CHECK(std::abs(ci.mean) < 0.02);
  double var = 0;
  for (double x : noise) var += (x - ci.mean) * (x - ci.mean);
  CHECK(std::sqrt(var / static_cast<double>(noise.size() - 1)) == doctest::Approx(0.3).epsilon(0.05));
  CHECK(jittered[0].slope == plain[0].slope);
  CHECK_THROWS_AS(scatter_emit(records, "emb", -1.0, 1), UsageError);
  WarningCapture warnings;
  CHECK(scatter_emit(records, "bleu", 0.0, 1).empty());
}

TEST_CASE("scores CSV round trip") {
  std::vector<ScoreRecord> records{record("conv1#1", 3, {{"bleu", 0.25}, {"ssrem", 0.1 + 0.2}}),
                                   {"conv1#2", "q,1", "", std::nullopt, {{"emb", -1e-300}}}};
  std::stringstream buf;
  write_scores_csv(records, buf);
  const auto back = read_scores_csv(buf);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].pair_id == records[i].pair_id);
    CHECK(back[i].source == records[i].source);
    CHECK(back[i].human == records[i].human);
    CHECK(back[i].scores == records[i].scores);
  }
  std::istringstream bad("pair_id,source,human\n");
  CHECK_THROWS_AS(read_scores_csv(bad), DataError);

  std::vector<PlantedResponse> planted{{"conv1#1", "q0", "hi, \"there\"", 0.2, 2}};
  std::stringstream resp;
  write_responses_csv(planted, resp);
  const auto parsed = read_responses_csv(resp);
  REQUIRE(parsed.size() == 1);
  CHECK(parsed[0].text == planted[0].text);
  CHECK(parsed[0].human == 2);
  std::istringstream out_of_range("pair_id,source,human,text\nconv1#1,x,6,hi\n");
  CHECK_THROWS_AS(read_responses_csv(out_of_range), DataError);
}

TEST_CASE("score_all with the reference as response") {
  const auto corpus = fixtures::toy_corpus();
  const auto table = table_for(corpus);
  std::vector<ScoreRecord> records{{"conv1#2", "gt", "movie tonight?", 4, {}},
                                   {"conv3#3", "gt", "fine thanks", 5, {}}};
  ScoreModels models;
  models.ssrem = params_with(Eigen::MatrixXd::Identity(4, 4));
  const std::vector<std::string> metrics{"rouge_l", "emb", "ssrem"};
  const auto scored = score_all(corpus, records, table, models, metrics, 2);
  for (const auto& r : scored) {
    CHECK(r.scores.at("rouge_l") == 1.0);
    CHECK(r.scores.at("emb") == doctest::Approx(1.0));
    // normalized g is 1; normalized f is (f + 1) / 2
    CHECK(r.scores.at("ssrem") > 0.5);
  }
  CHECK(score_all(corpus, records, table, models, std::span<const std::string>{}).front().scores.empty());
  const std::vector<std::string> unknown{"meteor"};
  CHECK_THROWS_AS(score_all(corpus, records, table, models, unknown), UsageError);
  const std::vector<std::string> rsrem{"rsrem"};
  CHECK_THROWS_AS(score_all(corpus, records, table, models, rsrem), DataError);
  records[0].pair_id = "conv9#1";
  CHECK_THROWS_AS(score_all(corpus, records, table, models, metrics), DataError);
}

TEST_CASE("correlate against human scores") {
  std::vector<ScoreRecord> records;
  for (int i = 0; i < 10; ++i)
    records.push_back(record("p" + std::to_string(i), 1 + i % 5, {{"bleu", 1.0 + i % 5}, {"emb", 0.7}}));
  WarningCapture warnings;
  const auto rows = correlate(records);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].metric == "bleu");
  CHECK(rows[0].spearman->coefficient == doctest::Approx(1.0));
  CHECK(rows[0].pearson->coefficient == doctest::Approx(1.0));
  CHECK(rows[1].flag == "zero_variance");
  CHECK_FALSE(rows[1].pearson);
  CHECK(warnings.seen.size() == 1);
  CHECK_THROWS_AS(correlate(std::span(records).first(2)), DataError);
}
