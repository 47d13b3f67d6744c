#include "ssrem/model.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "ssrem/common.hpp"
#include "ssrem/parallel.hpp"
#include "ssrem/rng.hpp"

namespace ssrem {
namespace {

using nlohmann::json;

// Examples per gradient shard. Fixed so the reduction order never depends on
// the worker count.
constexpr std::size_t kShardSize = 32;
constexpr int kFormatVersion = 1;

struct ExampleTerms {
  double loss = 0.0;
  bool correct = false;
  Eigen::VectorXd weights;  // dloss/d(c^T M r_i)
};

ExampleTerms example_terms(const Eigen::MatrixXd& M, const TrainingExample& ex, LossType loss,
                           double margin) {
  const auto k = ex.candidates.rows();
  if (k < 2) throw std::invalid_argument("candidate set needs at least 2 candidates");
  if (ex.context.size() != M.rows() || ex.candidates.cols() != M.cols()) {
    throw std::invalid_argument("dimension mismatch between M and example vectors");
  }
  const auto gt = static_cast<Eigen::Index>(ex.gt);
  const Eigen::VectorXd f = (ex.candidates * (M.transpose() * ex.context)).array().tanh().matrix();
  const Eigen::VectorXd slope = (1.0 - f.array().square()).matrix();

  ExampleTerms out;
  out.weights = Eigen::VectorXd::Zero(k);
  double best_other = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < k; ++i) {
    if (i != gt) best_other = std::max(best_other, f(i));
  }
  out.correct = f(gt) > best_other;

  if (loss == LossType::kSoftmax) {
    const double top = f.maxCoeff();
    const Eigen::ArrayXd e = (f.array() - top).exp();
    const double z = e.sum();
    out.loss = top + std::log(z) - f(gt);
    Eigen::VectorXd p = (e / z).matrix();
    p(gt) -= 1.0;
    out.weights = p.cwiseProduct(slope);
  } else {
    for (Eigen::Index i = 0; i < k; ++i) {
      if (i == gt) continue;
      const double hinge = margin - f(gt) + f(i);
      if (hinge <= 0.0) continue;
      out.loss += hinge;
      out.weights(gt) -= slope(gt);
      out.weights(i) += slope(i);
    }
  }
  return out;
}

struct BatchTotals {
  double loss = 0.0;
  std::size_t correct = 0;
};

BatchTotals evaluate(const Eigen::MatrixXd& M, std::span<const TrainingExample> examples,
                     LossType loss, double margin, std::size_t jobs) {
  const std::size_t shards = (examples.size() + kShardSize - 1) / kShardSize;
  std::vector<BatchTotals> partial(shards);
  parallel_for(shards, jobs, [&](std::size_t s) {
    const std::size_t end = std::min(examples.size(), (s + 1) * kShardSize);
    for (std::size_t i = s * kShardSize; i < end; ++i) {
      const auto terms = example_terms(M, examples[i], loss, margin);
      partial[s].loss += terms.loss;
      partial[s].correct += terms.correct ? 1 : 0;
    }
  });
  BatchTotals total;
  for (const auto& p : partial) {
    total.loss += p.loss;
    total.correct += p.correct;
  }
  return total;
}

std::string_view class_key(SampleClass c) { return to_string(c); }

LossType parse_loss(std::string_view name) {
  if (name == "softmax") return LossType::kSoftmax;
  if (name == "margin") return LossType::kMargin;
  throw UsageError("unknown loss '" + std::string(name) + "'");
}

ReferenceKind parse_reference(std::string_view name) {
  if (name == "mover") return ReferenceKind::kMover;
  if (name == "emb") return ReferenceKind::kEmbAverage;
  throw UsageError("unknown reference metric '" + std::string(name) + "'");
}

// Tokens and mean vectors of every turn of a corpus.
struct TurnCache {
  std::vector<std::vector<std::vector<std::string>>> tokens;
  std::vector<std::vector<Eigen::VectorXd>> vectors;

  TurnCache(const Corpus& corpus, const EmbeddingTable& table, std::size_t jobs)
      : tokens(corpus.size()), vectors(corpus.size()) {
    parallel_for(corpus.size(), jobs, [&](std::size_t c) {
      for (const auto& turn : corpus[c].turns) {
        tokens[c].push_back(tokenize(turn.text));
        vectors[c].push_back(encode(table, tokens[c].back()).values);
      }
    });
  }
  const Eigen::VectorXd& vector(TurnRef r) const { return vectors[r.conversation][r.position]; }
};

struct PairPool {
  const SpeakerIndex* index;
  const TurnCache* cache;
  std::vector<ContextResponsePair> pairs;
  std::vector<Eigen::VectorXd> contexts;
};

PairPool make_pool(const SpeakerIndex& index, const TurnCache& cache,
                   std::vector<ContextResponsePair> pairs, const EmbeddingTable& table,
                   ContextPool pool, std::size_t jobs) {
  PairPool out{&index, &cache, std::move(pairs), {}};
  out.contexts.resize(out.pairs.size());
  parallel_for(out.pairs.size(), jobs, [&](std::size_t i) {
    const auto& p = out.pairs[i];
    const auto& turns = cache.tokens[p.conversation];
    out.contexts[i] = encode_context(table, std::span(turns.data(), p.k), pool).values;
  });
  return out;
}

std::optional<CandidateSet> draw_for(const PairPool& pool, std::size_t i,
                                     const ModelConfig& config, std::uint64_t seed,
                                     std::string& reason) {
  const auto& pair = pool.pairs[i];
  if (config.variant == ModelVariant::kSsrem) {
    const auto sets = speaker_sets(*pool.index, pair);
    auto drawn = draw_candidates(*pool.index, pair, sets, seed, config.counts, config.backoff);
    if (!drawn.set) reason = drawn.skip_reason;
    return std::move(drawn.set);
  }
  try {
    return uniform_candidates(*pool.index, pair, seed, config.uniform_negatives);
  } catch (const DataError& e) {
    reason = e.what();
    return std::nullopt;
  }
}

TrainingExample to_example(const PairPool& pool, std::size_t i, const CandidateSet& set) {
  const auto d = pool.contexts[i].size();
  TrainingExample ex{pool.contexts[i],
                     Eigen::MatrixXd(static_cast<Eigen::Index>(set.candidates.size()), d), 0};
  for (std::size_t c = 0; c < set.candidates.size(); ++c) {
    ex.candidates.row(static_cast<Eigen::Index>(c)) = pool.cache->vector(set.candidates[c].source);
  }
  return ex;
}

struct DrawnExamples {
  std::vector<TrainingExample> examples;
  std::vector<CandidateSet> sets;
  std::vector<std::size_t> pair_index;
  std::size_t skipped = 0;
  std::string first_reason;
};

DrawnExamples draw_examples(const PairPool& pool, const ModelConfig& config, std::uint64_t seed,
                            bool keep_sets, std::size_t jobs) {
  std::vector<std::optional<CandidateSet>> sets(pool.pairs.size());
  std::vector<std::string> reasons(pool.pairs.size());
  parallel_for(pool.pairs.size(), jobs,
               [&](std::size_t i) { sets[i] = draw_for(pool, i, config, seed, reasons[i]); });
  DrawnExamples out;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (!sets[i]) {
      if (out.skipped++ == 0) out.first_reason = reasons[i];
      continue;
    }
    out.examples.push_back(to_example(pool, i, *sets[i]));
    out.pair_index.push_back(i);
    if (keep_sets) out.sets.push_back(std::move(*sets[i]));
  }
  return out;
}

Bounds extrema(const std::vector<double>& values, Bounds fallback, std::string_view what) {
  if (values.empty()) {
    warn(std::string(what) + " bounds: no validation scores, using fallback");
    return fallback;
  }
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (!(*lo < *hi)) {
    warn(std::string(what) + " bounds: degenerate validation range, using fallback");
    return fallback;
  }
  return {*lo, *hi};
}

json bounds_json(const std::optional<Bounds>& b) {
  if (!b) return nullptr;
  return json::array({b->lower, b->upper});
}

std::optional<Bounds> bounds_from(const json& j, std::string_view key) {
  if (j.is_null()) return std::nullopt;
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw DataError("parameter file: '" + std::string(key) + "' must be [lower, upper]");
  }
  Bounds b{j[0].get<double>(), j[1].get<double>()};
  if (!(b.lower < b.upper)) {
    throw DataError("parameter file: '" + std::string(key) + "' has lower >= upper");
  }
  return b;
}

}  // namespace

ModelVariant parse_model_variant(std::string_view name) {
  if (name == "ssrem") return ModelVariant::kSsrem;
  if (name == "rsrem") return ModelVariant::kRsrem;
  if (name == "ruber") return ModelVariant::kRuber;
  throw UsageError("unknown model variant '" + std::string(name) + "'");
}

std::string_view to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::kSsrem: return "ssrem";
    case ModelVariant::kRsrem: return "rsrem";
    case ModelVariant::kRuber: return "ruber";
  }
  return "?";
}

std::string_view to_string(LossType l) { return l == LossType::kSoftmax ? "softmax" : "margin"; }

std::string_view to_string(ReferenceKind r) {
  return r == ReferenceKind::kMover ? "mover" : "emb";
}

ModelConfig default_config(ModelVariant variant) {
  ModelConfig c;
  c.variant = variant;
  if (variant == ModelVariant::kRsrem) {
    c.counts.values = {0, 0, 0, 0, 0};
    c.uniform_negatives = 4;
  } else if (variant == ModelVariant::kRuber) {
    c.counts.values = {0, 0, 0, 0, 0};
    c.uniform_negatives = 1;
    c.loss = LossType::kMargin;
    c.reference = ReferenceKind::kEmbAverage;
  }
  return c;
}

json to_json(const ModelConfig& c) {
  json counts = json::object();
  for (SampleClass k : kAllClasses) {
    if (k != SampleClass::kGT) counts[std::string(class_key(k))] = c.counts[k];
  }
  json backoff = json::array();
  for (SampleClass k : c.backoff) backoff.push_back(to_string(k));
  return {
      {"variant", to_string(c.variant)},
      {"loss", to_string(c.loss)},
      {"counts", counts},
      {"backoff", backoff},
      {"uniform_negatives", c.uniform_negatives},
      {"freeze_negatives", c.freeze_negatives},
      {"margin", c.margin},
      {"reference", to_string(c.reference)},
      {"mover_variant", to_string(c.mover)},
      {"context_pool", to_string(c.context_pool)},
      {"optimizer",
       {{"learning_rate", c.optimizer.learning_rate},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"epsilon", c.optimizer.epsilon},
        {"batch_size", c.optimizer.batch_size},
        {"max_epochs", c.optimizer.max_epochs},
        {"patience", c.optimizer.patience}}},
      {"seed", c.seed},
  };
}

ModelConfig apply_json(ModelConfig c, const json& j) {
  if (!j.is_object()) throw UsageError("model config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "variant") {
        c.variant = parse_model_variant(value.get<std::string>());
      } else if (key == "loss") {
        c.loss = parse_loss(value.get<std::string>());
      } else if (key == "counts") {
        for (const auto& [name, count] : value.items()) {
          const SampleClass k = parse_sample_class(name);
          if (k == SampleClass::kGT) throw UsageError("GT count is fixed at 1");
          c.counts[k] = count.get<std::size_t>();
        }
      } else if (key == "backoff") {
        c.backoff.clear();
        for (const auto& name : value) c.backoff.push_back(parse_sample_class(name.get<std::string>()));
      } else if (key == "uniform_negatives") {
        c.uniform_negatives = value.get<std::size_t>();
      } else if (key == "freeze_negatives") {
        c.freeze_negatives = value.get<bool>();
      } else if (key == "margin") {
        c.margin = value.get<double>();
      } else if (key == "reference") {
        c.reference = parse_reference(value.get<std::string>());
      } else if (key == "mover_variant") {
        c.mover = parse_mover_variant(value.get<std::string>());
      } else if (key == "context_pool") {
        c.context_pool = parse_context_pool(value.get<std::string>());
      } else if (key == "seed") {
        c.seed = value.get<std::uint64_t>();
      } else if (key == "optimizer") {
        for (const auto& [name, v] : value.items()) {
          auto& o = c.optimizer;
          if (name == "learning_rate") o.learning_rate = v.get<double>();
          else if (name == "beta1") o.beta1 = v.get<double>();
          else if (name == "beta2") o.beta2 = v.get<double>();
          else if (name == "epsilon") o.epsilon = v.get<double>();
          else if (name == "batch_size") o.batch_size = v.get<std::size_t>();
          else if (name == "max_epochs") o.max_epochs = v.get<std::size_t>();
          else if (name == "patience") o.patience = v.get<std::size_t>();
          else throw UsageError("unknown optimizer key '" + name + "'");
        }
      } else {
        throw UsageError("unknown model config key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("invalid model config: ") + e.what());
  }
  return c;
}

Eigen::MatrixXd initial_matrix(std::size_t d, std::uint64_t seed) {
  const auto n = static_cast<Eigen::Index>(d);
  const double scale = 0.01 / std::sqrt(static_cast<double>(d));
  Rng rng(derive_seed(seed, std::string_view("init")));
  Eigen::MatrixXd M = Eigen::MatrixXd::Identity(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) M(i, j) += scale * (2.0 * rng.uniform01() - 1.0);
  }
  return M;
}

double f_score(const Eigen::MatrixXd& M, const Eigen::VectorXd& context,
               const Eigen::VectorXd& response) {
  if (context.size() != M.rows() || response.size() != M.cols()) {
    throw std::invalid_argument("f_score: dimension mismatch");
  }
  return std::tanh(context.dot(M * response));
}

Eigen::VectorXd candidate_probability(const Eigen::MatrixXd& M, const Eigen::VectorXd& context,
                                      const Eigen::MatrixXd& candidates) {
  if (candidates.rows() < 2) throw std::invalid_argument("need at least 2 candidates");
  if (context.size() != M.rows() || candidates.cols() != M.cols()) {
    throw std::invalid_argument("candidate_probability: dimension mismatch");
  }
  const Eigen::VectorXd f = (candidates * (M.transpose() * context)).array().tanh().matrix();
  const Eigen::ArrayXd e = (f.array() - f.maxCoeff()).exp();
  return (e / e.sum()).matrix();
}

LossGradient loss_and_gradient(const Eigen::MatrixXd& M, std::span<const TrainingExample> batch,
                               LossType loss, double margin, std::size_t jobs) {
  if (batch.empty()) throw std::invalid_argument("loss_and_gradient: empty batch");
  const std::size_t shards = (batch.size() + kShardSize - 1) / kShardSize;
  std::vector<LossGradient> partial(shards);
  parallel_for(shards, jobs, [&](std::size_t s) {
    LossGradient& out = partial[s];
    out.gradient = Eigen::MatrixXd::Zero(M.rows(), M.cols());
    const std::size_t end = std::min(batch.size(), (s + 1) * kShardSize);
    for (std::size_t i = s * kShardSize; i < end; ++i) {
      const auto& ex = batch[i];
      const auto terms = example_terms(M, ex, loss, margin);
      out.loss += terms.loss;
      out.gradient.noalias() += ex.context * (ex.candidates.transpose() * terms.weights).transpose();
    }
  });
  LossGradient total{0.0, Eigen::MatrixXd::Zero(M.rows(), M.cols())};
  for (const auto& p : partial) {
    total.loss += p.loss;
    total.gradient += p.gradient;
  }
  return total;
}

Adam::Adam(Eigen::Index rows, Eigen::Index cols, const OptimizerConfig& config)
    : config_(config), m_(Eigen::MatrixXd::Zero(rows, cols)), v_(Eigen::MatrixXd::Zero(rows, cols)) {}

void Adam::step(Eigen::MatrixXd& params, const Eigen::MatrixXd& gradient) {
  ++t_;
  m_ = config_.beta1 * m_ + (1.0 - config_.beta1) * gradient;
  v_ = config_.beta2 * v_ + (1.0 - config_.beta2) * gradient.cwiseProduct(gradient);
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  params.array() -= config_.learning_rate * (m_.array() / c1) /
                    ((v_.array() / c2).sqrt() + config_.epsilon);
}

TrainResult train(const Corpus& train_corpus, const Corpus& valid_corpus,
                  const EmbeddingTable& table, const ModelConfig& config, std::size_t jobs) {
  if (train_corpus.empty() || valid_corpus.empty()) throw DataError("train: empty split");
  if (table.dim() == 0) throw DataError("train: embedding table not loaded");
  if (config.optimizer.batch_size == 0) throw UsageError("batch size must be positive");
  if (config.variant != ModelVariant::kSsrem && config.uniform_negatives == 0) {
    throw UsageError("uniform variants need at least one negative");
  }

  const SpeakerIndex train_index(train_corpus);
  const TurnCache train_cache(train_corpus, table, jobs);
  const PairPool train_pool = make_pool(train_index, train_cache, context_response_pairs(train_corpus),
                                        table, config.context_pool, jobs);

  Corpus merged = train_corpus;
  merged.insert(merged.end(), valid_corpus.begin(), valid_corpus.end());
  const SpeakerIndex valid_index(merged);
  const TurnCache valid_cache(merged, table, jobs);
  const PairPool valid_pool = make_pool(valid_index, valid_cache,
                                        context_response_pairs(merged, valid_corpus), table,
                                        config.context_pool, jobs);
  const DrawnExamples valid =
      draw_examples(valid_pool, config, derive_seed(config.seed, std::string_view("valid")), true, jobs);
  if (valid.examples.empty()) throw DataError("train: no usable validation pairs");

  TrainResult result;
  TrainReport& report = result.report;
  report.valid_examples = valid.examples.size();
  Eigen::MatrixXd M = initial_matrix(table.dim(), config.seed);
  Eigen::MatrixXd best_M = M;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  Adam adam(M.rows(), M.cols(), config.optimizer);

  std::optional<DrawnExamples> frozen;
  for (std::size_t epoch = 1; epoch <= config.optimizer.max_epochs; ++epoch) {
    const std::uint64_t draw_seed =
        derive_seed(config.seed, config.freeze_negatives ? std::uint64_t{0} : epoch);
    if (!frozen || !config.freeze_negatives) {
      frozen = draw_examples(train_pool, config, draw_seed, false, jobs);
    }
    const DrawnExamples& drawn = *frozen;
    if (drawn.examples.empty()) throw DataError("train: no usable training pairs");
    if (epoch == 1 && drawn.skipped > 0) {
      warn("skipped " + std::to_string(drawn.skipped) + " training pairs (" + drawn.first_reason + ")");
    }
    report.skipped_train_pairs = drawn.skipped;

    std::vector<std::size_t> order(drawn.examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffler(derive_seed(config.seed, "order/" + std::to_string(epoch)));
    shuffler.shuffle(order);

    double epoch_loss = 0.0;
    std::vector<TrainingExample> batch;
    for (std::size_t start = 0, b = 0; start < order.size(); start += config.optimizer.batch_size, ++b) {
      const std::size_t end = std::min(order.size(), start + config.optimizer.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(drawn.examples[order[i]]);
      const auto lg = loss_and_gradient(M, batch, config.loss, config.margin, jobs);
      if (!std::isfinite(lg.loss) || !lg.gradient.allFinite()) {
        throw TrainingError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(b) + " (loss " + std::to_string(lg.loss) + ")");
      }
      epoch_loss += lg.loss;
      adam.step(M, lg.gradient);
      if (!M.allFinite()) {
        throw TrainingError("training diverged at epoch " + std::to_string(epoch) +
                            ": non-finite parameters");
      }
    }

    const auto totals = evaluate(M, valid.examples, config.loss, config.margin, jobs);
    const double n_valid = static_cast<double>(valid.examples.size());
    report.epochs.push_back({epoch, epoch_loss / static_cast<double>(drawn.examples.size()),
                             totals.loss / n_valid, static_cast<double>(totals.correct) / n_valid,
                             drawn.examples.size()});
    if (!std::isfinite(totals.loss)) {
      throw TrainingError("validation loss is not finite at epoch " + std::to_string(epoch));
    }
    if (report.epochs.back().valid_loss < best_loss) {
      best_loss = report.epochs.back().valid_loss;
      best_M = M;
      report.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.optimizer.patience) {
      break;
    }
  }

  ModelParams& params = result.params;
  params.M = best_M;
  params.config = config;
  params.embedding_sha256 = table.sha256();

  const ReferenceFn g = reference_function(table, config);
  std::vector<std::vector<double>> f_parts(valid.sets.size()), g_parts(valid.sets.size());
  parallel_for(valid.sets.size(), jobs, [&](std::size_t s) {
    const auto& set = valid.sets[s];
    const auto& ex = valid.examples[s];
    const auto& gt_tokens = valid_cache.tokens[set.pair.conversation][set.pair.k];
    for (std::size_t c = 0; c < set.candidates.size(); ++c) {
      f_parts[s].push_back(f_score(best_M, ex.context, ex.candidates.row(static_cast<Eigen::Index>(c)).transpose()));
      const auto& src = set.candidates[c].source;
      const MetricScore gs = g(valid_cache.tokens[src.conversation][src.position], gt_tokens);
      if (gs.well_defined) g_parts[s].push_back(gs.value);
    }
  });
  std::vector<double> f_values, g_values;
  for (std::size_t s = 0; s < valid.sets.size(); ++s) {
    f_values.insert(f_values.end(), f_parts[s].begin(), f_parts[s].end());
    g_values.insert(g_values.end(), g_parts[s].begin(), g_parts[s].end());
  }
  params.f_bounds = extrema(f_values, {-1.0, 1.0}, "f");
  params.g_bounds = extrema(
      g_values, config.reference == ReferenceKind::kMover ? Bounds{0.0, 1.0} : Bounds{-1.0, 1.0}, "g");
  return result;
}

double normalize(double value, const Bounds& bounds) {
  if (!(bounds.lower < bounds.upper)) throw std::invalid_argument("normalize: lower >= upper");
  return std::clamp((value - bounds.lower) / (bounds.upper - bounds.lower), 0.0, 1.0);
}

ReferenceFn reference_function(const EmbeddingTable& table, const ModelConfig& config) {
  if (config.reference == ReferenceKind::kEmbAverage) {
    return [&table](std::span<const std::string> response, std::span<const std::string> reference) {
      return emb_average(table, reference, response);
    };
  }
  const MoverVariant variant = config.mover;
  return [&table, variant](std::span<const std::string> response,
                           std::span<const std::string> reference) {
    try {
      return mover_similarity(reference, response, table, variant);
    } catch (const MetricError&) {
      return MetricScore{"mover_" + std::string(to_string(variant)), 0.0, false};
    }
  };
}

Scorer::Scorer(const EmbeddingTable& table, ModelParams params)
    : table_(&table), params_(std::move(params)), g_(reference_function(table, params_.config)) {
  if (params_.dim() != table.dim()) {
    throw DataError("model dimension " + std::to_string(params_.dim()) +
                    " does not match embedding dimension " + std::to_string(table.dim()));
  }
}

double Scorer::unreferenced(std::span<const std::vector<std::string>> context,
                            std::span<const std::string> response) const {
  return f_score(params_.M, encode_context(*table_, context, params_.config.context_pool).values,
                 encode(*table_, response).values);
}

double Scorer::referenced(std::span<const std::string> response,
                          std::span<const std::string> reference) const {
  const MetricScore g = g_(response, reference);
  if (g.well_defined) return g.value;
  return params_.g_bounds ? params_.g_bounds->lower : 0.0;
}

double Scorer::score(std::span<const std::vector<std::string>> context,
                     std::span<const std::string> reference,
                     std::span<const std::string> response) const {
  if (!params_.f_bounds || !params_.g_bounds) {
    throw DataError("model has no normalization bounds (untrained parameters)");
  }
  return 0.5 * (normalize(unreferenced(context, response), *params_.f_bounds) +
                normalize(referenced(response, reference), *params_.g_bounds));
}

double ssrem_score(const ModelParams& params, const EmbeddingTable& table,
                   const std::vector<std::string>& context, const std::string& gt_response,
                   const std::string& generated_response, const ReferenceFn& g) {
  if (!params.f_bounds || !params.g_bounds) {
    throw DataError("model has no normalization bounds (untrained parameters)");
  }
  std::vector<std::vector<std::string>> ctx;
  for (const auto& turn : context) ctx.push_back(tokenize(turn));
  const auto gt = tokenize(gt_response);
  const auto generated = tokenize(generated_response);
  const double f = f_score(params.M, encode_context(table, ctx, params.config.context_pool).values,
                           encode(table, generated).values);
  const MetricScore gs = g(generated, gt);
  const double g_value = gs.well_defined ? gs.value : params.g_bounds->lower;
  return 0.5 * (normalize(f, *params.f_bounds) + normalize(g_value, *params.g_bounds));
}

std::string params_to_string(const ModelParams& params) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < params.M.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < params.M.cols(); ++j) row.push_back(params.M(i, j));
    rows.push_back(std::move(row));
  }
  const json doc = {
      {"format_version", kFormatVersion},
      {"d", params.dim()},
      {"embedding_sha256", params.embedding_sha256},
      {"M", rows},
      {"f_bounds", bounds_json(params.f_bounds)},
      {"g_bounds", bounds_json(params.g_bounds)},
      {"config", to_json(params.config)},
  };
  return doc.dump(1) + "\n";
}

void save_params(const ModelParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << params_to_string(params);
  if (!out) throw DataError("failed writing " + path.string());
}

ModelParams params_from_string(const std::string& text,
                               std::optional<std::string> expected_sha256) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("corrupt parameter file: ") + e.what());
  }
  if (!doc.is_object()) throw DataError("corrupt parameter file: not an object");
  const auto version = doc.find("format_version");
  if (version == doc.end() || !version->is_number_integer()) {
    throw DataError("corrupt parameter file: missing format_version");
  }
  if (version->get<int>() != kFormatVersion) {
    throw DataError("unsupported parameter format version " + std::to_string(version->get<int>()));
  }
  ModelParams params;
  try {
    const auto d = doc.at("d").get<std::size_t>();
    const json& rows = doc.at("M");
    if (!rows.is_array() || rows.size() != d) throw DataError("corrupt parameter file: M shape");
    const auto n = static_cast<Eigen::Index>(d);
    params.M.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const json& row = rows[static_cast<std::size_t>(i)];
      if (!row.is_array() || row.size() != d) throw DataError("corrupt parameter file: M shape");
      for (Eigen::Index j = 0; j < n; ++j) params.M(i, j) = row[static_cast<std::size_t>(j)].get<double>();
    }
    if (!params.M.allFinite()) throw DataError("corrupt parameter file: non-finite M");
    params.embedding_sha256 = doc.at("embedding_sha256").get<std::string>();
    params.f_bounds = bounds_from(doc.at("f_bounds"), "f_bounds");
    params.g_bounds = bounds_from(doc.at("g_bounds"), "g_bounds");
    params.config = apply_json(ModelConfig{}, doc.at("config"));
  } catch (const json::exception& e) {
    throw DataError(std::string("corrupt parameter file: ") + e.what());
  } catch (const UsageError& e) {
    throw DataError(std::string("corrupt parameter file: ") + e.what());
  }
  if (expected_sha256 && *expected_sha256 != params.embedding_sha256) {
    warn("parameters were trained with a different embedding file (sha256 " +
         params.embedding_sha256.substr(0, 12) + "...)");
  }
  return params;
}

ModelParams load_params(const std::filesystem::path& path,
                        std::optional<std::string> expected_sha256) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read parameter file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return params_from_string(buffer.str(), std::move(expected_sha256));
}

}  // namespace ssrem
