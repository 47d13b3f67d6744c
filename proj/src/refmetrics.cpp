#include "ssrem/refmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "ssrem/common.hpp"
#include "ssrem/transport.hpp"

namespace ssrem {
namespace {

using Tokens = std::span<const std::string>;

std::map<std::vector<std::string_view>, std::size_t> ngram_counts(Tokens tokens,
                                                                  std::size_t n) {
  std::map<std::vector<std::string_view>, std::size_t> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::vector<std::string_view> gram;
    gram.reserve(n);
    for (std::size_t k = 0; k < n; ++k) gram.emplace_back(tokens[i + k]);
    ++counts[gram];
  }
  return counts;
}

struct Precision {
  double numerator;
  double denominator;
  double value() const { return numerator / denominator; }
};

// Clipped n-gram matches over max(1, candidate n-gram count).
Precision modified_precision(Tokens reference, Tokens candidate, std::size_t n) {
  const auto cand = ngram_counts(candidate, n);
  const auto ref = ngram_counts(reference, n);
  std::size_t matched = 0;
  std::size_t total = 0;
  for (const auto& [gram, count] : cand) {
    total += count;
    const auto it = ref.find(gram);
    if (it != ref.end()) matched += std::min(count, it->second);
  }
  return {static_cast<double>(matched), static_cast<double>(std::max<std::size_t>(1, total))};
}

// NLTK's method 5 always appends the order-5 precision, whatever max_n is.
constexpr std::size_t kMethod5ExtraOrder = 5;
constexpr double kMethod4K = 5.0;

std::vector<double> smooth_method7(const std::vector<Precision>& raw, Tokens reference,
                                   Tokens candidate, BleuSmoothing smoothing) {
  const double hyp_len = static_cast<double>(candidate.size());
  std::vector<double> p(raw.size());
  int incvnt = 1;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    p[i] = raw[i].value();
    if (raw[i].numerator != 0.0 || hyp_len <= 1.0) continue;
    if (smoothing == BleuSmoothing::kChenCherry7) {
      p[i] = 1.0 / (std::pow(2.0, incvnt) * kMethod4K / std::log(hyp_len)) / raw[i].denominator;
      ++incvnt;
    } else {
      p[i] = 1.0 / (static_cast<double>(i) + kMethod4K / std::log(hyp_len));
    }
  }
  std::vector<double> next = p;
  next.push_back(modified_precision(reference, candidate, kMethod5ExtraOrder).value());
  double previous = p[0] + 1.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = (previous + p[i] + next[i + 1]) / 3.0;
    previous = p[i];
  }
  return p;
}

double lcs_length(Tokens a, Tokens b) {
  std::vector<std::size_t> row(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = 0;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = a[i - 1] == b[j - 1] ? diag + 1 : std::max(row[j], row[j - 1]);
      diag = up;
    }
  }
  return static_cast<double>(row[b.size()]);
}

struct Bag {
  std::vector<const double*> points;
  std::vector<double> mass;
  Eigen::VectorXd sentence;
};

Bag make_bag(Tokens tokens, const EmbeddingTable& table, MoverVariant variant) {
  std::map<std::string_view, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& t : tokens) {
    if (table.find(t) == nullptr) continue;
    ++counts[t];
    ++total;
  }
  if (total == 0) throw MetricError("mover similarity: no in-vocabulary tokens");
  Bag bag;
  bag.sentence = encode(table, tokens).values;
  if (variant == MoverVariant::kSms) return bag;
  const double scale = variant == MoverVariant::kSWms ? 0.5 : 1.0;
  for (const auto& [token, count] : counts) {
    bag.points.push_back(table.find(token));
    bag.mass.push_back(scale * static_cast<double>(count) / static_cast<double>(total));
  }
  return bag;
}

}  // namespace

MetricScore bleu(Tokens reference, Tokens candidate, const BleuOptions& options) {
  if (reference.empty() || candidate.empty()) throw MetricError("bleu: empty token list");
  if (options.max_n == 0) throw MetricError("bleu: max_n must be positive");
  std::vector<Precision> raw;
  for (std::size_t n = 1; n <= options.max_n; ++n) {
    raw.push_back(modified_precision(reference, candidate, n));
  }
  MetricScore score{"bleu", 0.0, true};
  if (raw[0].numerator == 0.0) return score;

  const double r = static_cast<double>(reference.size());
  const double c = static_cast<double>(candidate.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  const auto p = smooth_method7(raw, reference, candidate, options.smoothing);
  const double w = 1.0 / static_cast<double>(options.max_n);
  double log_sum = 0.0;
  for (double p_i : p) {
    if (p_i > 0.0) log_sum += w * std::log(p_i);
  }
  score.value = bp * std::exp(log_sum);
  return score;
}

MetricScore rouge_l(Tokens reference, Tokens candidate, double beta) {
  if (reference.empty() || candidate.empty()) throw MetricError("rouge_l: empty token list");
  const double lcs = lcs_length(reference, candidate);
  MetricScore score{"rouge_l", 0.0, true};
  if (lcs == 0.0) return score;
  const double precision = lcs / static_cast<double>(candidate.size());
  const double recall = lcs / static_cast<double>(reference.size());
  const double b2 = beta * beta;
  score.value = (1.0 + b2) * precision * recall / (recall + b2 * precision);
  return score;
}

MetricScore emb_average(const EmbeddingTable& table, Tokens reference, Tokens candidate) {
  const UtteranceVector a = encode(table, reference);
  const UtteranceVector b = encode(table, candidate);
  const double na = a.values.norm();
  const double nb = b.values.norm();
  if (na == 0.0 || nb == 0.0) return {"emb", 0.0, false};
  const double cosine = a.values.dot(b.values) / (na * nb);
  return {"emb", std::clamp(cosine, -1.0, 1.0), true};
}

MoverVariant parse_mover_variant(std::string_view name) {
  if (name == "wms") return MoverVariant::kWms;
  if (name == "sms") return MoverVariant::kSms;
  if (name == "s_wms" || name == "s+wms") return MoverVariant::kSWms;
  throw UsageError("unknown mover variant '" + std::string(name) + "'");
}

std::string_view to_string(MoverVariant variant) {
  switch (variant) {
    case MoverVariant::kWms: return "wms";
    case MoverVariant::kSms: return "sms";
    case MoverVariant::kSWms: return "s_wms";
  }
  return "?";
}

double mover_distance(Tokens reference, Tokens candidate, const EmbeddingTable& table,
                      MoverVariant variant) {
  const Bag a = make_bag(reference, table, variant);
  const Bag b = make_bag(candidate, table, variant);
  const bool sentence = variant != MoverVariant::kWms;
  const double sentence_mass = variant == MoverVariant::kSms ? 1.0 : 0.5;
  const auto m = static_cast<Eigen::Index>(a.points.size() + (sentence ? 1 : 0));
  const auto n = static_cast<Eigen::Index>(b.points.size() + (sentence ? 1 : 0));
  const auto d = static_cast<Eigen::Index>(table.dim());

  auto point = [&](const Bag& bag, Eigen::Index i) -> Eigen::VectorXd {
    if (i < static_cast<Eigen::Index>(bag.points.size())) {
      return Eigen::Map<const Eigen::VectorXd>(bag.points[static_cast<std::size_t>(i)], d);
    }
    return bag.sentence;
  };
  auto masses = [&](const Bag& bag, Eigen::Index size) {
    Eigen::VectorXd out(size);
    for (std::size_t i = 0; i < bag.mass.size(); ++i) out(static_cast<Eigen::Index>(i)) = bag.mass[i];
    if (sentence) out(size - 1) = sentence_mass;
    return out;
  };
  Eigen::MatrixXd cost(m, n);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::VectorXd pi = point(a, i);
    for (Eigen::Index j = 0; j < n; ++j) cost(i, j) = (pi - point(b, j)).norm();
  }
  return solve_transport(masses(a, m), masses(b, n), cost).cost;
}

MetricScore mover_similarity(Tokens reference, Tokens candidate, const EmbeddingTable& table,
                             MoverVariant variant) {
  return {"mover_" + std::string(to_string(variant)),
          std::exp(-mover_distance(reference, candidate, table, variant)), true};
}

}  // namespace ssrem
