#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "ssrem/corpus.hpp"
#include "ssrem/embed.hpp"
#include "ssrem/refmetrics.hpp"
#include "ssrem/sampler.hpp"

namespace ssrem {

enum class ModelVariant { kSsrem, kRsrem, kRuber };
enum class LossType { kSoftmax, kMargin };
enum class ReferenceKind { kMover, kEmbAverage };

ModelVariant parse_model_variant(std::string_view name);
std::string_view to_string(ModelVariant v);
std::string_view to_string(LossType l);
std::string_view to_string(ReferenceKind r);

struct Bounds {
  double lower = 0.0;
  double upper = 1.0;
  bool operator==(const Bounds&) const = default;
};

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 20;
  std::size_t patience = 3;
  bool operator==(const OptimizerConfig&) const = default;
};

struct ModelConfig {
  ModelVariant variant = ModelVariant::kSsrem;
  LossType loss = LossType::kSoftmax;
  // Speaker-sensitive sampling (SSREM) uses counts and backoff; the uniform
  // variants draw uniform_negatives Rand turns.
  ClassCounts counts;
  std::vector<SampleClass> backoff{kDefaultBackoff.begin(), kDefaultBackoff.end()};
  std::size_t uniform_negatives = 0;
  bool freeze_negatives = false;
  double margin = 0.5;
  ReferenceKind reference = ReferenceKind::kMover;
  MoverVariant mover = MoverVariant::kSWms;
  ContextPool context_pool = ContextPool::kTokens;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
};

// Defaults for each variant: SSREM softmax over one negative per class, RSREM
// softmax over four uniform negatives, RUBER-style margin loss over one.
ModelConfig default_config(ModelVariant variant);
nlohmann::json to_json(const ModelConfig& config);
// Overlays the keys present in `j` onto `base`; unknown keys are an error.
ModelConfig apply_json(ModelConfig base, const nlohmann::json& j);

struct ModelParams {
  Eigen::MatrixXd M;
  std::optional<Bounds> f_bounds;
  std::optional<Bounds> g_bounds;
  ModelConfig config;
  std::string embedding_sha256;

  std::size_t dim() const { return static_cast<std::size_t>(M.rows()); }
};

// Identity plus U[-0.01/sqrt(d), 0.01/sqrt(d)] noise.
Eigen::MatrixXd initial_matrix(std::size_t d, std::uint64_t seed);

// tanh(c^T M r).
double f_score(const Eigen::MatrixXd& M, const Eigen::VectorXd& context,
               const Eigen::VectorXd& response);
// Softmax over f of each row of `candidates`.
Eigen::VectorXd candidate_probability(const Eigen::MatrixXd& M, const Eigen::VectorXd& context,
                                      const Eigen::MatrixXd& candidates);

struct TrainingExample {
  Eigen::VectorXd context;
  Eigen::MatrixXd candidates;  // one row per candidate
  std::size_t gt = 0;
};

struct LossGradient {
  double loss = 0.0;
  Eigen::MatrixXd gradient;
};

// Summed loss and dM over the batch. Softmax: -log p(GT). Margin: for every
// non-GT candidate max(0, margin - f_gt + f_neg). Shards of fixed size are
// reduced in order, so the result does not depend on `jobs`.
LossGradient loss_and_gradient(const Eigen::MatrixXd& M, std::span<const TrainingExample> batch,
                               LossType loss = LossType::kSoftmax, double margin = 0.5,
                               std::size_t jobs = 1);

class Adam {
 public:
  Adam(Eigen::Index rows, Eigen::Index cols, const OptimizerConfig& config);
  void step(Eigen::MatrixXd& params, const Eigen::MatrixXd& gradient);

 private:
  OptimizerConfig config_;
  Eigen::MatrixXd m_;
  Eigen::MatrixXd v_;
  std::size_t t_ = 0;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;  // mean per example
  double valid_loss = 0.0;  // mean per example
  double valid_accuracy = 0.0;
  std::size_t train_examples = 0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;
  std::size_t skipped_train_pairs = 0;
  std::size_t valid_examples = 0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  ModelParams params;
  TrainReport report;
};

// Negatives for training pairs come from `train` only; validation pairs draw
// from train + valid. Bounds are the extrema of f and g over the validation
// candidates under the selected epoch's M.
TrainResult train(const Corpus& train, const Corpus& valid, const EmbeddingTable& table,
                  const ModelConfig& config, std::size_t jobs = 1);

// Linear scaling to [0, 1] with clamping.
double normalize(double value, const Bounds& bounds);

using ReferenceFn =
    std::function<MetricScore(std::span<const std::string> response,
                              std::span<const std::string> reference)>;
ReferenceFn reference_function(const EmbeddingTable& table, const ModelConfig& config);

// Tokenizes once and applies a trained model.
class Scorer {
 public:
  Scorer(const EmbeddingTable& table, ModelParams params);

  const ModelParams& params() const { return params_; }
  double unreferenced(std::span<const std::vector<std::string>> context,
                      std::span<const std::string> response) const;
  // Raw g; undefined inputs give the lower g bound (or 0 without bounds).
  double referenced(std::span<const std::string> response,
                    std::span<const std::string> reference) const;
  // Mean of normalized f and normalized g.
  double score(std::span<const std::vector<std::string>> context,
               std::span<const std::string> reference,
               std::span<const std::string> response) const;

 private:
  const EmbeddingTable* table_;
  ModelParams params_;
  ReferenceFn g_;
};

double ssrem_score(const ModelParams& params, const EmbeddingTable& table,
                   const std::vector<std::string>& context, const std::string& gt_response,
                   const std::string& generated_response, const ReferenceFn& g);

void save_params(const ModelParams& params, const std::filesystem::path& path);
std::string params_to_string(const ModelParams& params);
// Warns when expected_sha256 is given and differs from the stored hash.
ModelParams load_params(const std::filesystem::path& path,
                        std::optional<std::string> expected_sha256 = {});
ModelParams params_from_string(const std::string& text,
                               std::optional<std::string> expected_sha256 = {});

}  // namespace ssrem
