#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssrem/corpus.hpp"
#include "ssrem/embed.hpp"
#include "ssrem/model.hpp"
#include "ssrem/sampler.hpp"
#include "ssrem/stats.hpp"

namespace ssrem {

// Synthetic corpus. Speakers come in communities of `community_size`; every
// pair inside a community is a dyad with `convs_per_dyad` conversations. A
// turn mixes words from the speaker's topic pool (speaker + dyad +
// conversation latents), fresh lexicon words, and answer forms of the
// previous turn's fresh words. All scales are multiplied by 1/sqrt(d).
struct SynthSpec {
  std::size_t n_communities = 40;
  std::size_t community_size = 4;
  std::size_t convs_per_dyad = 4;
  std::size_t turns = 5;
  std::size_t d = 32;
  double s_conv = 0.7;
  double s_partner = 0.8;
  double s_speaker = 0.9;
  double s_global = 1.2;
  std::size_t lexicon = 2000;
  double s_local = 3.0;
  std::size_t pool_words = 8;
  double word_noise = 0.1;
  std::size_t topic_tokens = 4;
  std::size_t new_tokens = 3;
  std::size_t echo_tokens = 4;
  std::size_t responses_per_pair = 4;
  std::uint64_t seed = 7;

  std::size_t n_speakers() const { return n_communities * community_size; }
  // Throws UsageError unless s_conv < s_partner < s_speaker < s_global and
  // the sizes are usable.
  void validate() const;
};

nlohmann::json to_json(const SynthSpec& spec);
SynthSpec apply_json(SynthSpec base, const nlohmann::json& j);

// A held-out candidate response with a planted quality. `planted` decreases
// with the distance between the response's latent mean and the ideal latent
// for its context; `human` bins it into 1..5 by quintile.
struct PlantedResponse {
  std::string pair_id;
  std::string source;
  std::string text;
  double planted = 0.0;
  int human = 0;
};

struct SynthResult {
  Corpus corpus;
  EmbeddingTable table;
  SplitResult splits;
  std::vector<PlantedResponse> responses;  // test-split pairs only
};

SynthResult synth_corpus(const SynthSpec& spec);

enum class Similarity { kCosine, kInvEuclid };
Similarity parse_similarity(std::string_view name);
std::string_view to_string(Similarity s);

struct ClassSimilarity {
  SampleClass cls = SampleClass::kSC;
  std::size_t sets = 0;
  std::size_t pairs = 0;
  std::optional<MeanCI> ci;  // empty when fewer than 2 pairs
};

struct SetSimilarityReport {
  Similarity similarity = Similarity::kCosine;
  std::array<ClassSimilarity, 4> classes;  // SC, SP, SS, Rand
};

// Per speaker: one SC set per conversation, one SP set per partner group, one
// SS set, and `sets_per_speaker` Rand sets of the SS size drawn from all
// turns. Sets larger than `max_set_size` are subsampled. All within-set pairs
// are pooled per class.
SetSimilarityReport motivation(const Corpus& corpus, const EmbeddingTable& table,
                               Similarity similarity = Similarity::kCosine,
                               std::size_t sets_per_speaker = 5, std::uint64_t seed = 0,
                               std::size_t max_set_size = 64, std::size_t jobs = 1);
void write_csv(const SetSimilarityReport& report, std::ostream& out);

inline constexpr std::array<std::string_view, 6> kMetricColumns = {
    "bleu", "rouge_l", "emb", "ruber", "rsrem", "ssrem"};

struct ScoreRecord {
  std::string pair_id;
  std::string source;
  std::string text;
  std::optional<int> human;
  std::map<std::string, double> scores;
};

// Input rows: pair_id,source,human,text.
std::vector<ScoreRecord> read_responses_csv(std::istream& in);
void write_responses_csv(std::span<const PlantedResponse> responses, std::ostream& out);
// pair_id,source,human,bleu,rouge_l,emb,ruber,rsrem,ssrem
void write_scores_csv(std::span<const ScoreRecord> records, std::ostream& out);
std::vector<ScoreRecord> read_scores_csv(std::istream& in);

struct ScoreModels {
  std::optional<ModelParams> ssrem;
  std::optional<ModelParams> rsrem;
  std::optional<ModelParams> ruber;
};

// Fills the requested metrics (names from kMetricColumns). Context and
// reference come from the pair id ("<conversation>#<k>") in `corpus`.
std::vector<ScoreRecord> score_all(const Corpus& corpus, std::vector<ScoreRecord> records,
                                   const EmbeddingTable& table, const ScoreModels& models,
                                   std::span<const std::string> metrics, std::size_t jobs = 1);

struct CorrelationRow {
  std::string metric;
  std::size_t n = 0;
  std::optional<CorrelationResult> spearman;
  std::optional<CorrelationResult> pearson;
  std::string flag;
};

std::vector<CorrelationRow> correlate(std::span<const ScoreRecord> records);
void write_csv(std::span<const CorrelationRow> rows, std::ostream& out);

struct IdentifyRow {
  std::string pair_id;
  SampleClass cls = SampleClass::kGT;
  double f = 0.0;
};

struct ClassScore {
  SampleClass cls = SampleClass::kGT;
  MeanCI ci;  // half_width is NaN when n < 2
};

struct IdentifyReport {
  std::vector<ClassScore> classes;
  std::vector<SampleClass> dropped;
  std::vector<IdentifyRow> rows;
  std::size_t pairs_used = 0;
  std::size_t pairs_skipped = 0;
  // Share of used pairs where f(GT) beats every drawn negative.
  double accuracy = 0.0;
};

// Scores GT and one drawn turn per requested class for every pair of `test`.
// Negatives come from all of `corpus`. Classes no pair can populate are
// dropped with a warning; pairs missing any remaining class are skipped.
IdentifyReport identify(const Corpus& corpus, const Corpus& test, const EmbeddingTable& table,
                        const ModelParams& params, std::span<const SampleClass> classes,
                        std::uint64_t seed, std::size_t jobs = 1);
void write_summary_csv(const IdentifyReport& report, std::ostream& out);
void write_rows_csv(const IdentifyReport& report, std::ostream& out);

struct CopyAttackRow {
  std::string model;
  std::size_t pairs = 0;
  // Normalized f.
  double context_mean = 0.0;
  double gt_mean = 0.0;
  double delta = 0.0;
  // Raw f.
  double raw_context_mean = 0.0;
  double raw_gt_mean = 0.0;
  double raw_delta = 0.0;
};

// For each test pair with at least two context turns, scores every context
// turn as the response. Per-pair means are averaged over pairs.
std::vector<CopyAttackRow> copy_attack(
    const Corpus& test, const EmbeddingTable& table,
    std::span<const std::pair<std::string, ModelParams>> models, std::size_t jobs = 1);
void write_csv(std::span<const CopyAttackRow> rows, std::ostream& out);

struct ScatterRow {
  std::string metric;
  std::string pair_id;
  int human = 0;
  double human_jittered = 0.0;
  double score = 0.0;
  double slope = 0.0;
  double intercept = 0.0;
};

// Rows with a human score and the metric; the fit uses the original scores.
std::vector<ScatterRow> scatter_emit(std::span<const ScoreRecord> records,
                                     std::string_view metric, double jitter_sd,
                                     std::uint64_t seed);
void write_csv(std::span<const ScatterRow> rows, std::ostream& out);

}  // namespace ssrem
