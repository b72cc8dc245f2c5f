#pragma once

#include <cmath>
#include <concepts>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "divseq/core.hpp"

namespace divseq {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Token-level log-probability model. `score_into` writes log P(v | ctx, prefix)
// for every v in the vocabulary into `out` (length vocab().size()). Rows must
// be normalized, give BOS -inf, and be deterministic. Implementations must be
// safe to call concurrently on a const instance.
template <class S>
concept Scorer = requires(const S& s, const DecodeContext& ctx, std::span<const TokenId> prefix,
                          std::span<double> out) {
  { s.vocab() } -> std::convertible_to<const Vocab&>;
  s.score_into(ctx, prefix, out);
};

inline void check_prefix(const Vocab& vocab, std::span<const TokenId> prefix) {
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (!vocab.valid(prefix[i])) {
      throw Error(Errc::InvalidTokenId, "prefix id " + std::to_string(prefix[i]) +
                                            " outside vocabulary of size " +
                                            std::to_string(vocab.size()));
    }
    if (prefix[i] == kEos) throw Error(Errc::PrefixAfterEOS, "prefix contains EOS");
  }
}

// Checked entry point. The decoders call score_into directly on prefixes they
// built themselves.
template <Scorer S>
std::vector<double> score_next(const S& model, const DecodeContext& ctx,
                               std::span<const TokenId> prefix) {
  check_prefix(model.vocab(), prefix);
  check_prefix(model.vocab(), ctx.tokens);
  std::vector<double> row(model.vocab().size());
  model.score_into(ctx, prefix, row);
  return row;
}

// |1 - sum(exp(row))|
inline double normalization_error(std::span<const double> row) {
  double total = 0.0;
  for (double lp : row) total += std::exp(lp);
  return std::abs(1.0 - total);
}

inline std::vector<double> log_row(std::span<const double> probs) {
  std::vector<double> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    out[i] = probs[i] > 0 ? std::log(probs[i]) : kNegInf;
  }
  return out;
}

/// Explicit lookup table from (context text, prefix) to a log-prob row.
///
/// Prefixes without a stored row get the fallback row, which defaults to the
/// uniform distribution over every non-BOS token.
class TableScorer {
 public:
  static constexpr double kRowTolerance = 1e-9;

  explicit TableScorer(Vocab vocab) : vocab_(std::move(vocab)) {
    const auto n = vocab_.size();
    fallback_.assign(n, std::log(1.0 / static_cast<double>(n - 1)));
    fallback_[kBos] = kNegInf;
  }

  const Vocab& vocab() const noexcept { return vocab_; }

  void set_row(const std::string& ctx_text, std::vector<TokenId> prefix,
               std::vector<double> logprobs) {
    check_prefix(vocab_, prefix);
    check_row(logprobs);
    rows_.insert_or_assign(Key{ctx_text, std::move(prefix)}, std::move(logprobs));
  }

  void set_row(std::vector<TokenId> prefix, std::vector<double> logprobs) {
    set_row(std::string{}, std::move(prefix), std::move(logprobs));
  }

  // Convenience for hand-written tables: probabilities rather than logs.
  void set_probs(std::vector<TokenId> prefix, std::span<const double> probs) {
    set_row(std::move(prefix), log_row(probs));
  }

  void set_fallback(std::vector<double> logprobs) {
    check_row(logprobs);
    fallback_ = std::move(logprobs);
  }

  std::size_t num_rows() const noexcept { return rows_.size(); }

  void score_into(const DecodeContext& ctx, std::span<const TokenId> prefix,
                  std::span<double> out) const {
    if (out.size() != vocab_.size()) {
      throw Error(Errc::RowLengthMismatch, "output row has wrong length");
    }
    Key key{ctx.text, std::vector<TokenId>(prefix.begin(), prefix.end())};
    auto it = rows_.find(key);
    const auto& row = it == rows_.end() ? fallback_ : it->second;
    std::copy(row.begin(), row.end(), out.begin());
  }

 private:
  using Key = std::pair<std::string, std::vector<TokenId>>;

  void check_row(std::span<const double> row) const {
    if (row.size() != vocab_.size()) {
      throw Error(Errc::RowLengthMismatch, "row length " + std::to_string(row.size()) +
                                               " != vocab size " +
                                               std::to_string(vocab_.size()));
    }
    if (row[kBos] != kNegInf) throw Error(Errc::UnnormalizedRow, "BOS must have zero probability");
    if (normalization_error(row) > kRowTolerance) {
      throw Error(Errc::UnnormalizedRow, "row does not sum to one");
    }
  }

  Vocab vocab_;
  std::vector<double> fallback_;
  std::map<Key, std::vector<double>> rows_;
};

static_assert(Scorer<TableScorer>);

}  // namespace divseq
