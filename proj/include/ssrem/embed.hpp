#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

namespace ssrem {

// Lowercases ASCII letters, splits on Unicode whitespace and peels leading and
// trailing punctuation off each chunk as one-character tokens. Apostrophes
// inside a word stay put, so "let's" survives as a single token.
std::vector<std::string> tokenize(std::string_view text);

class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim) : dim_(dim) {}

  // Reads GloVe text format. A leading "<count> <dim>" header is skipped with a
  // warning. Duplicate tokens keep the first vector.
  static EmbeddingTable load(const std::filesystem::path& path,
                             std::optional<std::size_t> expected_dim = {});

  // Returns false (and leaves the table unchanged) if the token already exists.
  bool add(std::string token, std::span<const double> values);
  void save(const std::filesystem::path& path) const;

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  // Null when the token is out of vocabulary.
  const double* find(std::string_view token) const;

  // SHA-256 of the loaded file, or of the canonical serialization for tables
  // built in memory.
  std::string sha256() const;

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> tokens_;
  std::vector<double> values_;
  std::unordered_map<std::string, std::size_t> index_;
  std::string file_sha256_;
};

struct UtteranceVector {
  Eigen::VectorXd values;
  std::size_t in_vocab_count = 0;
};

enum class ContextPool { kTokens, kTurns };

ContextPool parse_context_pool(std::string_view name);
std::string_view to_string(ContextPool pool);

UtteranceVector encode(const EmbeddingTable& table,
                       std::span<const std::string> tokens);
// kTokens averages over the concatenated token list; kTurns averages the
// per-turn means of turns that have at least one in-vocabulary token.
UtteranceVector encode_context(const EmbeddingTable& table,
                               std::span<const std::vector<std::string>> turns,
                               ContextPool pool = ContextPool::kTokens);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace ssrem
