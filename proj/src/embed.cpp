#include "ssrem/embed.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "ssrem/common.hpp"
#include "ssrem/format.hpp"

namespace ssrem {
namespace {

// Decodes one UTF-8 code point starting at text[i]; invalid bytes decode as
// themselves so tokenization never fails.
char32_t decode_utf8(std::string_view text, std::size_t i, std::size_t& len) {
  const auto b0 = static_cast<unsigned char>(text[i]);
  auto cont = [&](std::size_t k) {
    return i + k < text.size() &&
           (static_cast<unsigned char>(text[i + k]) & 0xC0) == 0x80;
  };
  auto byte = [&](std::size_t k) {
    return static_cast<char32_t>(static_cast<unsigned char>(text[i + k]) & 0x3F);
  };
  if (b0 < 0x80) {
    len = 1;
    return b0;
  }
  if ((b0 & 0xE0) == 0xC0 && cont(1)) {
    len = 2;
    return (static_cast<char32_t>(b0 & 0x1F) << 6) | byte(1);
  }
  if ((b0 & 0xF0) == 0xE0 && cont(1) && cont(2)) {
    len = 3;
    return (static_cast<char32_t>(b0 & 0x0F) << 12) | (byte(1) << 6) | byte(2);
  }
  if ((b0 & 0xF8) == 0xF0 && cont(1) && cont(2) && cont(3)) {
    len = 4;
    return (static_cast<char32_t>(b0 & 0x07) << 18) | (byte(1) << 12) |
           (byte(2) << 6) | byte(3);
  }
  len = 1;
  return b0;
}

bool is_space(char32_t c) {
  return (c >= 0x09 && c <= 0x0D) || c == 0x20 || c == 0x85 || c == 0xA0 ||
         c == 0x1680 || (c >= 0x2000 && c <= 0x200A) || c == 0x2028 ||
         c == 0x2029 || c == 0x202F || c == 0x205F || c == 0x3000;
}

bool is_punct(char32_t c) {
  if (c < 0x80) {
    return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) ||
           (c >= 0x5B && c <= 0x60) || (c >= 0x7B && c <= 0x7E);
  }
  return c == 0xA1 || c == 0xAB || c == 0xBB || c == 0xBF ||
         (c >= 0x2010 && c <= 0x2027) || (c >= 0x3001 && c <= 0x3003);
}

struct CodePoint {
  char32_t value;
  std::size_t offset;
  std::size_t length;
};

void split_chunk(std::string_view chunk, std::vector<std::string>& out) {
  std::vector<CodePoint> cps;
  for (std::size_t i = 0; i < chunk.size();) {
    std::size_t len = 1;
    const char32_t c = decode_utf8(chunk, i, len);
    cps.push_back({c, i, len});
    i += len;
  }
  std::size_t lo = 0;
  std::size_t hi = cps.size();
  while (lo < hi && is_punct(cps[lo].value)) ++lo;
  while (hi > lo && is_punct(cps[hi - 1].value)) --hi;
  auto piece = [&](std::size_t a, std::size_t b) {
    const std::size_t begin = cps[a].offset;
    const std::size_t end = cps[b - 1].offset + cps[b - 1].length;
    return std::string(chunk.substr(begin, end - begin));
  };
  for (std::size_t k = 0; k < lo; ++k) out.push_back(piece(k, k + 1));
  if (lo < hi) out.push_back(piece(lo, hi));
  for (std::size_t k = hi; k < cps.size(); ++k) out.push_back(piece(k, k + 1));
}

std::string canonical_line(std::string_view token, std::span<const double> v) {
  std::string line(token);
  for (double x : v) {
    line += ' ';
    line += format_double(x);
  }
  line += '\n';
  return line;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::string lowered(text);
  for (char& c : lowered) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  std::vector<std::string> tokens;
  std::size_t start = std::string::npos;
  for (std::size_t i = 0; i < lowered.size();) {
    std::size_t len = 1;
    const char32_t c = decode_utf8(lowered, i, len);
    if (is_space(c)) {
      if (start != std::string::npos) {
        split_chunk(std::string_view(lowered).substr(start, i - start), tokens);
        start = std::string::npos;
      }
    } else if (start == std::string::npos) {
      start = i;
    }
    i += len;
  }
  if (start != std::string::npos) {
    split_chunk(std::string_view(lowered).substr(start), tokens);
  }
  return tokens;
}

EmbeddingTable EmbeddingTable::load(const std::filesystem::path& path,
                                    std::optional<std::size_t> expected_dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read embedding file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string content = buffer.str();

  EmbeddingTable table;
  std::size_t dim = expected_dim.value_or(0);
  std::size_t line_no = 0;
  std::vector<double> values;
  std::size_t pos = 0;
  while (pos < content.size()) {
    std::size_t end = content.find('\n', pos);
    if (end == std::string::npos) end = content.size();
    std::string_view line(content.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;

    std::vector<std::string_view> fields;
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && line[i] == ' ') ++i;
      const std::size_t j = line.find(' ', i);
      const std::size_t stop = j == std::string_view::npos ? line.size() : j;
      if (stop > i) fields.push_back(line.substr(i, stop - i));
      i = stop;
    }
    if (fields.empty()) continue;

    if (line_no == 1 && fields.size() == 2) {
      long long a = 0, b = 0;
      const auto ra = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), a);
      const auto rb = std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), b);
      if (ra.ec == std::errc() && ra.ptr == fields[0].data() + fields[0].size() &&
          rb.ec == std::errc() && rb.ptr == fields[1].data() + fields[1].size()) {
        warn("skipping word2vec header line in " + path.string());
        continue;
      }
    }

    const std::size_t n = fields.size() - 1;
    if (n == 0) {
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": token without vector");
    }
    if (dim == 0) dim = n;
    if (n != dim) {
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": expected " + std::to_string(dim) + " values, found " +
                      std::to_string(n));
    }
    if (table.dim_ == 0) table.dim_ = dim;
    values.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      const auto f = fields[k + 1];
      const auto r = std::from_chars(f.data(), f.data() + f.size(), values[k]);
      if (r.ec != std::errc() || r.ptr != f.data() + f.size()) {
        throw DataError(path.string() + ":" + std::to_string(line_no) +
                        ": non-numeric field '" + std::string(f) + "'");
      }
    }
    if (!table.add(std::string(fields[0]), values)) {
      warn(path.string() + ":" + std::to_string(line_no) + ": duplicate token '" +
           std::string(fields[0]) + "' ignored");
    }
  }
  if (table.size() == 0) throw DataError("embedding file " + path.string() + " is empty");
  table.file_sha256_ = sha256_hex(content);
  return table;
}

bool EmbeddingTable::add(std::string token, std::span<const double> values) {
  if (dim_ == 0) dim_ = values.size();
  if (values.size() != dim_) {
    throw DataError("embedding for '" + token + "' has dimension " +
                    std::to_string(values.size()) + ", expected " +
                    std::to_string(dim_));
  }
  if (index_.count(token)) return false;
  index_.emplace(token, tokens_.size());
  tokens_.push_back(std::move(token));
  values_.insert(values_.end(), values.begin(), values.end());
  file_sha256_.clear();
  return true;
}

void EmbeddingTable::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    out << canonical_line(tokens_[i], std::span(values_).subspan(i * dim_, dim_));
  }
  if (!out) throw DataError("failed writing " + path.string());
}

const double* EmbeddingTable::find(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? nullptr : values_.data() + it->second * dim_;
}

std::string EmbeddingTable::sha256() const {
  if (!file_sha256_.empty()) return file_sha256_;
  std::string text;
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    text += canonical_line(tokens_[i], std::span(values_).subspan(i * dim_, dim_));
  }
  return sha256_hex(text);
}

ContextPool parse_context_pool(std::string_view name) {
  if (name == "tokens") return ContextPool::kTokens;
  if (name == "turns") return ContextPool::kTurns;
  throw UsageError("unknown context pool '" + std::string(name) + "'");
}

std::string_view to_string(ContextPool pool) {
  return pool == ContextPool::kTokens ? "tokens" : "turns";
}

UtteranceVector encode(const EmbeddingTable& table,
                       std::span<const std::string> tokens) {
  UtteranceVector out{Eigen::VectorXd::Zero(static_cast<Eigen::Index>(table.dim())), 0};
  for (const auto& token : tokens) {
    const double* v = table.find(token);
    if (v == nullptr) continue;
    out.values += Eigen::Map<const Eigen::VectorXd>(v, out.values.size());
    ++out.in_vocab_count;
  }
  if (out.in_vocab_count > 0) out.values /= static_cast<double>(out.in_vocab_count);
  return out;
}

UtteranceVector encode_context(const EmbeddingTable& table,
                               std::span<const std::vector<std::string>> turns,
                               ContextPool pool) {
  if (pool == ContextPool::kTokens) {
    std::vector<std::string> all;
    for (const auto& turn : turns) all.insert(all.end(), turn.begin(), turn.end());
    return encode(table, all);
  }
  UtteranceVector out{Eigen::VectorXd::Zero(static_cast<Eigen::Index>(table.dim())), 0};
  std::size_t used = 0;
  for (const auto& turn : turns) {
    const UtteranceVector v = encode(table, turn);
    if (v.in_vocab_count == 0) continue;
    out.values += v.values;
    out.in_vocab_count += v.in_vocab_count;
    ++used;
  }
  if (used > 0) out.values /= static_cast<double>(used);
  return out;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    hex += kHex[digest[i] >> 4];
    hex += kHex[digest[i] & 0xF];
  }
  return hex;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return sha256_hex(buffer.str());
}

}  // namespace ssrem
