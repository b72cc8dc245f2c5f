#pragma once

#include <charconv>
#include <cmath>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "divseq/core.hpp"

namespace divseq {

// Dense vectors for a subset of the vocabulary, indexed by TokenId.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::size_t vocab_size, std::size_t dim)
      : dim_(dim), data_(vocab_size * dim, 0.0), present_(vocab_size, false), norms_(vocab_size, 0.0) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t vocab_size() const noexcept { return present_.size(); }

  std::size_t num_entries() const noexcept {
    std::size_t n = 0;
    for (bool p : present_) n += p;
    return n;
  }

  bool has(TokenId id) const noexcept { return id < present_.size() && present_[id]; }

  void set(TokenId id, std::span<const double> vec) {
    if (vec.size() != dim_) throw Error(Errc::InconsistentDimension, "embedding has wrong dimension");
    if (id >= present_.size()) throw Error(Errc::InvalidTokenId, "embedding id out of range");
    std::copy(vec.begin(), vec.end(), data_.begin() + static_cast<std::ptrdiff_t>(id * dim_));
    double sq = 0.0;
    for (double x : vec) sq += x * x;
    norms_[id] = std::sqrt(sq);
    present_[id] = true;
  }

  std::span<const double> vector(TokenId id) const {
    return std::span<const double>(data_).subspan(id * dim_, dim_);
  }

  // Cosine similarity; 0 when either side lacks an entry or has zero norm.
  double cosine(TokenId a, TokenId b) const {
    if (!has(a) || !has(b) || norms_[a] == 0.0 || norms_[b] == 0.0) return 0.0;
    const auto va = vector(a);
    const auto vb = vector(b);
    double dot = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) dot += va[i] * vb[i];
    return dot / (norms_[a] * norms_[b]);
  }

 private:
  std::size_t dim_ = 0;
  std::vector<double> data_;
  std::vector<bool> present_;
  std::vector<double> norms_;
};

struct LoadedEmbeddings {
  EmbeddingTable table;
  std::size_t skipped = 0;  // lines whose token is not in the vocabulary
};

/// Parses word2vec text format: one "token v1 ... vd" line per token. An
/// optional leading "count dim" header line is recognized and skipped. Every
/// line must agree on d, including the ones that get skipped.
inline LoadedEmbeddings load_embeddings(std::string_view text, const Vocab& vocab) {
  std::vector<std::vector<std::string>> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto fields = split_tokens(text.substr(start, end - start));
    if (!fields.empty()) lines.push_back(std::move(fields));
    start = end + 1;
  }
  if (lines.empty()) throw Error(Errc::EmptyFile, "embedding file has no entries");

  auto parse_number = [](const std::string& s) -> std::optional<double> {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
  };
  auto is_count = [](const std::string& s) {
    return !s.empty() && s.find_first_not_of("0123456789") == std::string::npos;
  };

  std::size_t first = 0;
  if (lines.size() > 1 && lines[0].size() == 2 && is_count(lines[0][0]) && is_count(lines[0][1]) &&
      lines[1].size() >= 2 && std::to_string(lines[1].size() - 1) == lines[0][1]) {
    first = 1;
  }
  const std::size_t dim = lines[first].size() - 1;
  if (dim == 0) throw Error(Errc::InconsistentDimension, "line 1 has no components");

  LoadedEmbeddings out{EmbeddingTable(vocab.size(), dim), 0};
  std::vector<double> vec(dim);
  for (std::size_t i = first; i < lines.size(); ++i) {
    const auto& f = lines[i];
    if (f.size() - 1 != dim) {
      std::ostringstream msg;
      msg << "line " << (i + 1) << " has " << (f.size() - 1) << " components, expected " << dim;
      throw Error(Errc::InconsistentDimension, msg.str());
    }
    for (std::size_t j = 0; j < dim; ++j) {
      auto v = parse_number(f[j + 1]);
      if (!v) {
        throw Error(Errc::NonNumericComponent,
                    "line " + std::to_string(i + 1) + ": '" + f[j + 1] + "' is not a number");
      }
      vec[j] = *v;
    }
    auto id = vocab.find(f[0]);
    if (!id) {
      ++out.skipped;
      continue;
    }
    out.table.set(*id, vec);
  }
  return out;
}

}  // namespace divseq
