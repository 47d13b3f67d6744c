#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

#include "ssrem/embed.hpp"

namespace ssrem {

struct MetricScore {
  std::string metric;
  double value = 0.0;
  bool well_defined = true;  // false when a convention value was substituted
};

// Raised when a metric is undefined for its inputs (empty token lists, empty
// in-vocabulary bags). Callers pick the convention value.
class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class BleuSmoothing {
  kChenCherry7,   // NLTK >= 3.6 method7
  kNltkLegacy7,   // NLTK 3.2.2 to 3.4.5 method7
};

struct BleuOptions {
  std::size_t max_n = 4;
  BleuSmoothing smoothing = BleuSmoothing::kChenCherry7;
};

// Sentence BLEU against a single reference with uniform weights 1/max_n,
// following NLTK's sentence_bleu with smoothing method 7.
MetricScore bleu(std::span<const std::string> reference,
                 std::span<const std::string> candidate, const BleuOptions& options = {});

MetricScore rouge_l(std::span<const std::string> reference,
                    std::span<const std::string> candidate, double beta = 1.0);

MetricScore emb_average(const EmbeddingTable& table, std::span<const std::string> reference,
                        std::span<const std::string> candidate);

enum class MoverVariant { kWms, kSms, kSWms };

MoverVariant parse_mover_variant(std::string_view name);
std::string_view to_string(MoverVariant variant);

// Earth mover's distance between the embedded bags (Euclidean ground cost).
// Word masses are count / N; sms uses a single sentence node of mass 1; s_wms
// halves the word masses and adds a sentence node of mass 1/2.
double mover_distance(std::span<const std::string> reference,
                      std::span<const std::string> candidate, const EmbeddingTable& table,
                      MoverVariant variant = MoverVariant::kSWms);
// exp(-mover_distance).
MetricScore mover_similarity(std::span<const std::string> reference,
                             std::span<const std::string> candidate,
                             const EmbeddingTable& table,
                             MoverVariant variant = MoverVariant::kSWms);

}  // namespace ssrem
