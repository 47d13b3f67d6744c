#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fixtures.hpp"
#include "ssrem/common.hpp"
#include "ssrem/model.hpp"
#include "ssrem/rng.hpp"

using namespace ssrem;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

TrainingExample random_example(Rng& rng, Eigen::Index d, Eigen::Index k) {
  TrainingExample ex{Eigen::VectorXd(d), Eigen::MatrixXd(k, d),
                     static_cast<std::size_t>(rng.uniform_index(static_cast<std::uint64_t>(k)))};
  for (Eigen::Index i = 0; i < d; ++i) ex.context(i) = rng.normal(0.0, 0.5);
  for (Eigen::Index r = 0; r < k; ++r)
    for (Eigen::Index i = 0; i < d; ++i) ex.candidates(r, i) = rng.normal(0.0, 0.5);
  return ex;
}

Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index d) {
  Eigen::MatrixXd M(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) M(i, j) = rng.normal(0.0, 0.5);
  return M;
}

double max_relative_fd_error(const Eigen::MatrixXd& M, const std::vector<TrainingExample>& batch,
                             LossType loss) {
  const auto analytic = loss_and_gradient(M, batch, loss).gradient;
  const double eps = 1e-5;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
      Eigen::MatrixXd plus = M, minus = M;
      plus(i, j) += eps;
      minus(i, j) -= eps;
      const double fd = (loss_and_gradient(plus, batch, loss).loss -
                         loss_and_gradient(minus, batch, loss).loss) / (2 * eps);
      const double err = std::abs(fd - analytic(i, j)) / std::max(1e-6, std::abs(fd) + std::abs(analytic(i, j)));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

EmbeddingTable toy_table() {
  EmbeddingTable t(2);
  const char* words[] = {"hi", "b", "hey", "a", "movie", "tonight", "sure", "great", "lunch",
                         "yes", "please", "noon", "see", "you", "hello", "c", "how", "are",
                         "fine", "thanks"};
  double x = 0.1;
  for (const char* w : words) {
    t.add(w, std::vector<double>{std::cos(x), std::sin(3 * x)});
    x += 0.37;
  }
  return t;
}

}  // namespace

TEST_CASE("f_score examples") {
  const Eigen::VectorXd e1 = vec({1, 0});
  CHECK(f_score(Eigen::MatrixXd::Identity(2, 2), e1, e1) == doctest::Approx(0.76159415595576).epsilon(1e-12));
  CHECK(f_score(Eigen::MatrixXd::Zero(2, 2), e1, vec({3, 4})) == 0.0);
  CHECK(std::abs(f_score(100 * Eigen::MatrixXd::Identity(2, 2), e1, e1)) <= 1.0);
  CHECK_THROWS_AS(f_score(Eigen::MatrixXd::Identity(2, 2), vec({1, 0, 0}), e1), std::invalid_argument);
}

TEST_CASE("candidate_probability examples") {
  // f = tanh(c^T M r); choose rows so that f is (t, -t, -t, -t, -t) with t = tanh(atanh(1)) -> use M=I, c=e1.
  Eigen::MatrixXd cands(5, 2);
  const double a = std::atanh(std::tanh(1.0));
  cands << a, 0, -a, 0, -a, 0, -a, 0, -a, 0;
  // f = tanh(+-1), so p1 = e^tanh(1)/(e^tanh(1) + 4 e^-tanh(1)).
  const double t = std::tanh(1.0);
  const auto p = candidate_probability(Eigen::MatrixXd::Identity(2, 2), vec({1, 0}), cands);
  CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p(0) == doctest::Approx(std::exp(t) / (std::exp(t) + 4 * std::exp(-t))).epsilon(1e-12));

  // Softmax over f = (1, -1, -1, -1, -1) directly.
  const double p1 = std::exp(1.0) / (std::exp(1.0) + 4 * std::exp(-1.0));
  CHECK(p1 == doctest::Approx(0.6488).epsilon(1e-4));

  const auto uniform = candidate_probability(Eigen::MatrixXd::Zero(2, 2), vec({1, 1}), cands);
  for (Eigen::Index i = 0; i < 5; ++i) CHECK(uniform(i) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK_THROWS_AS(candidate_probability(Eigen::MatrixXd::Identity(2, 2), vec({1, 0}), cands.topRows(1)),
                  std::invalid_argument);
}

TEST_CASE("probability ordering follows raw f") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto ex = random_example(rng, 4, 6);
    const auto M = random_matrix(rng, 4);
    const auto p = candidate_probability(M, ex.context, ex.candidates);
    for (Eigen::Index i = 0; i < 6; ++i) {
      for (Eigen::Index j = 0; j < 6; ++j) {
        const double fi = f_score(M, ex.context, ex.candidates.row(i).transpose());
        const double fj = f_score(M, ex.context, ex.candidates.row(j).transpose());
        if (fi > fj) CHECK(p(i) > p(j));
      }
    }
  }
}

TEST_CASE("loss at M = 0 is |batch| ln K") {
  Rng rng(11);
  std::vector<TrainingExample> batch;
  for (int i = 0; i < 7; ++i) batch.push_back(random_example(rng, 3, 5));
  const auto lg = loss_and_gradient(Eigen::MatrixXd::Zero(3, 3), batch);
  CHECK(lg.loss == doctest::Approx(7 * std::log(5.0)).epsilon(1e-12));
  CHECK_THROWS_AS(loss_and_gradient(Eigen::MatrixXd::Zero(3, 3), {}), std::invalid_argument);
}

TEST_CASE("analytic gradient matches finite differences") {
  Rng rng(2024);
  for (int trial = 0; trial < 30; ++trial) {
    const Eigen::Index d = std::array<Eigen::Index, 3>{4, 8, 16}[trial % 3];
    const auto k = static_cast<Eigen::Index>(2 + rng.uniform_index(5));
    std::vector<TrainingExample> batch;
    for (int b = 0; b < 3; ++b) batch.push_back(random_example(rng, d, k));
    const auto M = random_matrix(rng, d);
    CHECK(max_relative_fd_error(M, batch, LossType::kSoftmax) < 1e-4);
    CHECK(max_relative_fd_error(M, batch, LossType::kMargin) < 1e-4);
  }
}

TEST_CASE("sharded gradient is independent of the worker count") {
  Rng rng(3);
  std::vector<TrainingExample> batch;
  for (int b = 0; b < 100; ++b) batch.push_back(random_example(rng, 5, 5));
  const auto M = random_matrix(rng, 5);
  const auto one = loss_and_gradient(M, batch, LossType::kSoftmax, 0.5, 1);
  const auto many = loss_and_gradient(M, batch, LossType::kSoftmax, 0.5, 8);
  CHECK(one.loss == many.loss);
  CHECK(one.gradient == many.gradient);
}

TEST_CASE("Adam reaches a stationary point on a one-pair batch") {
  // Only M(0,0) = m matters; the loss -tanh(m) + log(e^tanh(m) + e^tanh(2m)) has a
  // local minimum at m = -acosh((sqrt(2) + sqrt(10)) / 4).
  TrainingExample ex{vec({1, 0}), Eigen::MatrixXd(2, 2), 0};
  ex.candidates << 1, 0, 2, 0;
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(2, 2);
  OptimizerConfig cfg;
  cfg.learning_rate = 0.01;
  Adam adam(2, 2, cfg);
  const std::vector<TrainingExample> batch{ex};
  for (int step = 0; step < 20000; ++step) adam.step(M, loss_and_gradient(M, batch).gradient);
  CHECK(M(0, 0) == doctest::Approx(-std::acosh((std::sqrt(2.0) + std::sqrt(10.0)) / 4)).epsilon(1e-8));
  CHECK(loss_and_gradient(M, batch).gradient.norm() < 1e-8);
}

TEST_CASE("normalize") {
  const Bounds b{-2.0, 6.0};
  CHECK(normalize(-2.0, b) == 0.0);
  CHECK(normalize(6.0, b) == 1.0);
  CHECK(normalize(2.0, b) == 0.5);
  CHECK(normalize(7.0, b) == 1.0);
  CHECK(normalize(-9.0, b) == 0.0);
  CHECK_THROWS_AS(normalize(0.0, Bounds{1.0, 1.0}), std::invalid_argument);
}

TEST_CASE("initial matrix is identity plus small noise and seeded") {
  const auto M = initial_matrix(16, 9);
  CHECK(M == initial_matrix(16, 9));
  CHECK(M != initial_matrix(16, 10));
  CHECK((M - Eigen::MatrixXd::Identity(16, 16)).cwiseAbs().maxCoeff() <= 0.01 / 4.0);
}

TEST_CASE("model config JSON overlay") {
  auto c = default_config(ModelVariant::kRuber);
  CHECK(c.loss == LossType::kMargin);
  CHECK(c.uniform_negatives == 1);
  CHECK(c.reference == ReferenceKind::kEmbAverage);
  CHECK(default_config(ModelVariant::kRsrem).uniform_negatives == 4);

  const auto base = default_config(ModelVariant::kSsrem);
  const auto round = apply_json(ModelConfig{}, to_json(base));
  CHECK(to_json(round) == to_json(base));

  const auto tuned = apply_json(base, nlohmann::json::parse(
      R"({"optimizer": {"learning_rate": 0.01}, "counts": {"SC": 2}, "seed": 5})"));
  CHECK(tuned.optimizer.learning_rate == 0.01);
  CHECK(tuned.counts[SampleClass::kSC] == 2);
  CHECK(tuned.seed == 5);
  CHECK_THROWS_AS(apply_json(base, nlohmann::json::parse(R"({"bogus": 1})")), UsageError);
  CHECK_THROWS_AS(apply_json(base, nlohmann::json::parse(R"({"loss": "hinge"})")), UsageError);
}

TEST_CASE("parameter file round trip and corruption") {
  ModelParams p;
  Rng rng(8);
  p.M = random_matrix(rng, 3);
  p.M(0, 0) = 0.1 + 0.2;  // not exactly representable in short decimal
  p.f_bounds = Bounds{-0.25, 0.75};
  p.g_bounds = Bounds{0.1, 0.9};
  p.config = default_config(ModelVariant::kSsrem);
  p.config.seed = 18446744073709551615ULL;
  p.embedding_sha256 = "abc";

  const auto dir = std::filesystem::temp_directory_path() / "ssrem_model_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "params.json";
  save_params(p, path);
  const auto q = load_params(path);
  CHECK(q.M == p.M);
  CHECK(q.f_bounds == p.f_bounds);
  CHECK(q.g_bounds == p.g_bounds);
  CHECK(q.embedding_sha256 == p.embedding_sha256);
  CHECK(to_json(q.config) == to_json(p.config));
  CHECK(params_to_string(q) == params_to_string(p));

  const std::string text = params_to_string(p);
  CHECK_THROWS_AS(params_from_string(text.substr(0, text.size() / 2)), DataError);
  auto doc = nlohmann::json::parse(text);
  doc["format_version"] = 2;
  CHECK_THROWS_AS(params_from_string(doc.dump()), DataError);
  doc = nlohmann::json::parse(text);
  doc["f_bounds"] = {1.0, 0.0};
  CHECK_THROWS_AS(params_from_string(doc.dump()), DataError);
  CHECK_THROWS_AS(load_params(dir / "missing.json"), DataError);

  std::vector<std::string> warnings;
  set_warning_handler([&](std::string_view w) { warnings.emplace_back(w); });
  const auto other = params_from_string(text, std::string("def"));
  set_warning_handler(nullptr);
  CHECK(other.M == p.M);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("different embedding") != std::string::npos);
}

TEST_CASE("ssrem_score combines normalized halves") {
  ModelParams p;
  p.M = Eigen::MatrixXd::Zero(2, 2);
  p.f_bounds = Bounds{-1.0, 1.0};  // f = 0 -> 0.5
  p.g_bounds = Bounds{0.0, 1.0};
  const auto table = toy_table();
  const ReferenceFn fixed = [](std::span<const std::string>, std::span<const std::string>) {
    return MetricScore{"fixed", 0.7, true};
  };
  CHECK(ssrem_score(p, table, {"hi b"}, "hey a", "sure", fixed) == doctest::Approx(0.6).epsilon(1e-15));
  const ReferenceFn low = [](std::span<const std::string>, std::span<const std::string>) {
    return MetricScore{"fixed", -3.0, true};
  };
  p.f_bounds = Bounds{0.5, 1.0};
  CHECK(ssrem_score(p, table, {"hi b"}, "hey a", "sure", low) == 0.0);
  p.g_bounds.reset();
  CHECK_THROWS_AS(ssrem_score(p, table, {"hi b"}, "hey a", "sure", low), DataError);
}

TEST_CASE("Scorer reaches 1 when response equals reference at the f ceiling") {
  const auto table = toy_table();
  ModelParams p;
  p.M = Eigen::MatrixXd::Identity(2, 2);
  p.config = default_config(ModelVariant::kSsrem);
  const std::vector<std::vector<std::string>> ctx{fixtures::toks("hello a")};
  const auto response = fixtures::toks("hello c");
  Scorer probe(table, p);
  const double f = probe.unreferenced(ctx, response);
  p.f_bounds = Bounds{f - 1.0, f};
  p.g_bounds = Bounds{0.0, 1.0};
  const Scorer scorer(table, p);
  CHECK(scorer.score(ctx, response, response) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(scorer.referenced(fixtures::toks("zzz"), response) == 0.0);
}

TEST_CASE("training on the toy corpus") {
  const auto table = toy_table();
  const auto corpus = fixtures::toy_corpus();
  const Corpus train_split{corpus[0], corpus[1]};
  const Corpus valid_split{corpus[2]};
  auto config = default_config(ModelVariant::kSsrem);
  config.optimizer.batch_size = 8;
  config.optimizer.max_epochs = 4;
  config.optimizer.patience = 10;
  config.seed = 3;

  SUBCASE("deterministic and jobs-independent") {
    const auto a = train(train_split, valid_split, table, config, 1);
    const auto b = train(train_split, valid_split, table, config, 8);
    CHECK(params_to_string(a.params) == params_to_string(b.params));
    CHECK(a.report.epochs.size() == 4);
    CHECK(a.params.f_bounds.has_value());
    CHECK(a.params.f_bounds->lower < a.params.f_bounds->upper);
    for (const auto& e : a.report.epochs) {
      CHECK(std::isfinite(e.train_loss));
      CHECK(e.valid_accuracy >= 0.0);
      CHECK(e.valid_accuracy <= 1.0);
    }
  }
  SUBCASE("zero learning rate keeps M and the loss constant") {
    config.optimizer.learning_rate = 0.0;
    config.freeze_negatives = true;
    const auto r = train(train_split, valid_split, table, config);
    CHECK(r.params.M == initial_matrix(2, config.seed));
    for (const auto& e : r.report.epochs) {
      CHECK(e.valid_loss == r.report.epochs.front().valid_loss);
      CHECK(e.train_loss == r.report.epochs.front().train_loss);
    }
  }
  SUBCASE("uniform variants") {
    auto ruber = default_config(ModelVariant::kRuber);
    ruber.optimizer = config.optimizer;
    const auto r = train(train_split, valid_split, table, ruber);
    CHECK(r.report.best_epoch >= 1);
    CHECK(r.params.g_bounds.has_value());
  }
  SUBCASE("empty split is rejected") {
    CHECK_THROWS_AS(train({}, valid_split, table, config), DataError);
  }
}
