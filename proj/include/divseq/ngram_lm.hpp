#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "divseq/core.hpp"
#include "divseq/scorers.hpp"

namespace divseq {

/// Add-k smoothed n-gram model with backoff on unseen contexts.
///
/// P(w | c) = (count(c, w) + k) / (count(c) + k * |V'|), where V' is the
/// vocabulary without BOS and c is the longest suffix of the history (at most
/// order-1 tokens) that was observed in training. The history is BOS followed
/// by the context tokens of the decode job and then the prefix. The empty
/// context (unigram) is always observed, so backoff terminates there.
///
/// Contexts live in a suffix trie keyed most-recent-token first: finding the
/// longest observed context is a single walk with no allocation.
class NGramLM {
 public:
  struct Continuation {
    TokenId token;
    std::uint64_t count;
    double logprob = 0.0;
  };

  NGramLM(Vocab vocab, std::size_t order, double k)
      : vocab_(std::move(vocab)), order_(order), k_(k) {
    if (order_ < 1) throw Error(Errc::BadOrder, "order must be >= 1");
    if (!(k_ >= 0) || !std::isfinite(k_)) throw Error(Errc::BadSmoothing, "add-k constant must be >= 0");
    nodes_.emplace_back();
  }

  const Vocab& vocab() const noexcept { return vocab_; }
  std::size_t order() const noexcept { return order_; }
  double add_k() const noexcept { return k_; }

  // Adds `count` observations of `target` after `context` (oldest token first).
  void add_count(std::span<const TokenId> context, TokenId target, std::uint64_t count = 1) {
    if (context.size() >= order_) throw Error(Errc::BadOrder, "context longer than order - 1");
    if (!vocab_.valid(target) || target == kBos) {
      throw Error(Errc::InvalidTokenId, "bad n-gram target " + std::to_string(target));
    }
    std::uint32_t node = 0;
    for (std::size_t i = context.size(); i-- > 0;) {
      if (!vocab_.valid(context[i])) throw Error(Errc::InvalidTokenId, "bad context id");
      node = child_or_create(node, context[i]);
    }
    auto& conts = nodes_[node].continuations;
    auto it = std::lower_bound(conts.begin(), conts.end(), target,
                               [](const Continuation& c, TokenId t) { return c.token < t; });
    if (it != conts.end() && it->token == target) {
      it->count += count;
    } else {
      conts.insert(it, Continuation{target, count});
    }
    nodes_[node].total += count;
    finalized_ = false;
  }

  // Precomputes log probabilities. Called by the trainer and the loader.
  void finalize() {
    const double generable = static_cast<double>(vocab_.size() - 1);
    for (auto& n : nodes_) {
      if (n.total == 0) continue;
      const double denom = static_cast<double>(n.total) + k_ * generable;
      n.log_floor = k_ > 0 ? std::log(k_ / denom) : kNegInf;
      for (auto& c : n.continuations) {
        c.logprob = std::log((static_cast<double>(c.count) + k_) / denom);
      }
    }
    finalized_ = true;
  }

  void score_into(const DecodeContext& ctx, std::span<const TokenId> prefix,
                  std::span<double> out) const {
    if (out.size() != vocab_.size()) throw Error(Errc::RowLengthMismatch, "output row has wrong length");
    if (!finalized_) throw Error(Errc::UnsupportedModel, "n-gram model used before finalize()");
    // Walk the history backwards: prefix, then ctx tokens, then BOS.
    const std::size_t hist_len = prefix.size() + ctx.tokens.size() + 1;
    const std::size_t max_depth = std::min(order_ - 1, hist_len);
    auto history_at = [&](std::size_t back) -> TokenId {  // back = 0 is the newest token
      if (back < prefix.size()) return prefix[prefix.size() - 1 - back];
      back -= prefix.size();
      if (back < ctx.tokens.size()) return ctx.tokens[ctx.tokens.size() - 1 - back];
      return kBos;
    };
    std::uint32_t best = 0;
    std::uint32_t node = 0;
    for (std::size_t depth = 0; depth < max_depth; ++depth) {
      auto next = find_child(node, history_at(depth));
      if (!next) break;
      node = *next;
      if (nodes_[node].total > 0) best = node;
    }
    const Node& n = nodes_[best];
    std::fill(out.begin(), out.end(), n.log_floor);
    out[kBos] = kNegInf;
    for (const auto& c : n.continuations) out[c.token] = c.logprob;
  }

  // Visits every context with observations, in lexicographic order of the
  // context id sequence (oldest token first). Shorter contexts sort first when
  // one is a prefix of the other.
  void for_each_context(
      const std::function<void(std::span<const TokenId>, std::span<const Continuation>)>& fn) const {
    std::vector<std::pair<std::vector<TokenId>, std::uint32_t>> all;
    std::vector<TokenId> reversed;
    collect(0, reversed, all);
    for (auto& [ctx, id] : all) std::reverse(ctx.begin(), ctx.end());
    std::sort(all.begin(), all.end());
    for (const auto& [ctx, id] : all) fn(ctx, nodes_[id].continuations);
  }

  // Number of distinct observed n-grams whose context has `context_len` tokens.
  std::size_t num_ngrams(std::size_t context_len) const {
    std::size_t n = 0;
    for_each_context([&](std::span<const TokenId> ctx, std::span<const Continuation> conts) {
      if (ctx.size() == context_len) n += conts.size();
    });
    return n;
  }

 private:
  struct Node {
    std::uint64_t total = 0;
    double log_floor = kNegInf;
    std::vector<Continuation> continuations;     // sorted by token
    std::vector<std::pair<TokenId, std::uint32_t>> children;  // sorted by token
  };

  std::optional<std::uint32_t> find_child(std::uint32_t node, TokenId token) const {
    const auto& ch = nodes_[node].children;
    auto it = std::lower_bound(ch.begin(), ch.end(), token,
                               [](const auto& p, TokenId t) { return p.first < t; });
    if (it == ch.end() || it->first != token) return std::nullopt;
    return it->second;
  }

  std::uint32_t child_or_create(std::uint32_t node, TokenId token) {
    if (auto found = find_child(node, token)) return *found;
    const auto id = static_cast<std::uint32_t>(nodes_.size());
    nodes_.emplace_back();
    auto& ch = nodes_[node].children;
    auto it = std::lower_bound(ch.begin(), ch.end(), token,
                               [](const auto& p, TokenId t) { return p.first < t; });
    ch.insert(it, {token, id});
    return id;
  }

  void collect(std::uint32_t node, std::vector<TokenId>& path,
               std::vector<std::pair<std::vector<TokenId>, std::uint32_t>>& out) const {
    if (nodes_[node].total > 0) out.emplace_back(path, node);
    for (const auto& [token, child] : nodes_[node].children) {
      path.push_back(token);
      collect(child, path, out);
      path.pop_back();
    }
  }

  Vocab vocab_;
  std::size_t order_;
  double k_;
  std::vector<Node> nodes_;
  bool finalized_ = false;
};

static_assert(Scorer<NGramLM>);

// Each line is wrapped as BOS line EOS; out-of-vocabulary tokens count as UNK.
// Blank lines are ignored.
inline NGramLM train_ngram_lm(const std::vector<std::string>& corpus, std::size_t order, double k,
                              const Vocab& vocab) {
  NGramLM lm(vocab, order, k);
  std::vector<TokenId> seq;
  bool any = false;
  for (const auto& line : corpus) {
    auto ids = encode(vocab, line);
    if (ids.empty()) continue;
    any = true;
    seq.assign(1, kBos);
    seq.insert(seq.end(), ids.begin(), ids.end());
    seq.push_back(kEos);
    for (std::size_t i = 1; i < seq.size(); ++i) {
      const std::size_t max_ctx = std::min(order - 1, i);
      for (std::size_t len = 0; len <= max_ctx; ++len) {
        lm.add_count(std::span<const TokenId>(seq).subspan(i - len, len), seq[i]);
      }
    }
  }
  if (!any) throw Error(Errc::EmptyCorpus, "corpus has no non-empty lines");
  lm.finalize();
  return lm;
}

// Vocabulary of a corpus in first-appearance order.
inline Vocab vocab_from_corpus(const std::vector<std::string>& corpus) {
  std::vector<std::string> tokens;
  std::unordered_map<std::string, bool> seen;
  for (const auto& line : corpus) {
    for (auto& tok : split_tokens(line)) {
      if (tok == kBosString || tok == kEosString || tok == kUnkString) continue;
      if (seen.emplace(tok, true).second) tokens.push_back(std::move(tok));
    }
  }
  if (tokens.empty()) throw Error(Errc::EmptyCorpus, "corpus has no tokens");
  return Vocab(tokens);
}

}  // namespace divseq
