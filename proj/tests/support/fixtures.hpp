#pragma once

// Test-only scorer generators and brute-force helpers.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "divseq/divseq.hpp"

namespace divseq::testing {

// Ids in the 5-token vocab {a, b}: BOS=0, EOS=1, UNK=2, a=3, b=4.
inline constexpr TokenId kA = 3;
inline constexpr TokenId kB = 4;

// Row as probabilities over (a, b, EOS); BOS and UNK get zero.
inline std::vector<double> abe_row(double pa, double pb, double peos) {
  std::vector<double> p(5, 0.0);
  p[kA] = pa;
  p[kB] = pb;
  p[kEos] = peos;
  return p;
}

// The three-row table used throughout the worked examples:
// P(.|BOS) = (0.6, 0.3, 0.1), P(.|a) = (0.1, 0.7, 0.2), P(.|b) = (0.5, 0.4, 0.1)
// over (a, b, EOS).
inline TableScorer make_s1() {
  TableScorer s(Vocab({"a", "b"}));
  s.set_probs({}, abe_row(0.6, 0.3, 0.1));
  s.set_probs({kA}, abe_row(0.1, 0.7, 0.2));
  s.set_probs({kB}, abe_row(0.5, 0.4, 0.1));
  return s;
}

inline std::vector<std::string> word_list(std::size_t n, const std::string& stem = "w") {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(stem + std::to_string(i));
  return out;
}

// Random normalized row over `generable` ids; BOS and every other id get zero.
// Some generable ids are zeroed at random, but at least one survives.
inline std::vector<double> random_log_row(std::mt19937_64& rng, std::size_t vocab_size,
                                          const std::vector<TokenId>& generable, double sparsity) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double spread = 0.5 + 2.0 * unit(rng);
  std::vector<double> p(vocab_size, 0.0);
  double total = 0.0;
  for (TokenId t : generable) {
    if (unit(rng) < sparsity) continue;
    p[t] = std::exp(spread * gauss(rng));
    total += p[t];
  }
  if (total == 0.0) {
    p[generable[rng() % generable.size()]] = 1.0;
    total = 1.0;
  }
  for (double& x : p) x /= total;
  return log_row(p);
}

struct RandomTable {
  TableScorer scorer;
  std::size_t max_len;
};

// Complete table for every reachable prefix shorter than max_len. All
// non-BOS ids (EOS and UNK included) are generable.
inline RandomTable random_table_scorer(std::mt19937_64& rng, std::size_t vocab_size, std::size_t max_len,
                                       double sparsity = 0.15) {
  TableScorer scorer(Vocab(word_list(vocab_size - kNumReserved)));
  std::vector<TokenId> generable;
  for (TokenId t = 1; t < vocab_size; ++t) generable.push_back(t);
  std::vector<TokenId> continuing;
  for (TokenId t : generable) {
    if (t != kEos) continuing.push_back(t);
  }
  std::vector<std::vector<TokenId>> frontier{{}};
  for (std::size_t depth = 0; depth < max_len; ++depth) {
    std::vector<std::vector<TokenId>> next;
    for (auto& prefix : frontier) {
      scorer.set_row(prefix, random_log_row(rng, vocab_size, generable, sparsity));
      if (depth + 1 < max_len) {
        for (TokenId t : continuing) {
          auto p = prefix;
          p.push_back(t);
          next.push_back(std::move(p));
        }
      }
    }
    frontier = std::move(next);
  }
  return {std::move(scorer), max_len};
}

// The fixed suite of random table scorers: |V| in [4, 8], T in [2, 6].
inline std::vector<RandomTable> scorer_suite(std::uint64_t seed, std::size_t count) {
  std::mt19937_64 rng(seed);
  std::vector<RandomTable> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t v = 4 + rng() % 5;
    std::size_t t = 2 + rng() % 5;
    // Cap the table at ~10k rows.
    while (t > 2 && std::pow(static_cast<double>(v - 2), static_cast<double>(t - 1)) > 8000) --t;
    out.push_back(random_table_scorer(rng, v, t));
  }
  return out;
}

// Exactly three generable ids over a 3-word vocab (|V| = 6), full table to
// depth `max_len`. With `eos_generable`, EOS is one of the three.
inline TableScorer three_way_scorer(std::mt19937_64& rng, std::size_t max_len, bool eos_generable) {
  TableScorer scorer(Vocab(word_list(3)));
  std::vector<TokenId> generable = eos_generable ? std::vector<TokenId>{kEos, 3, 4}
                                                 : std::vector<TokenId>{3, 4, 5};
  std::vector<TokenId> continuing;
  for (TokenId t : generable) {
    if (t != kEos) continuing.push_back(t);
  }
  std::vector<std::vector<TokenId>> frontier{{}};
  for (std::size_t depth = 0; depth < max_len; ++depth) {
    std::vector<std::vector<TokenId>> next;
    for (auto& prefix : frontier) {
      scorer.set_row(prefix, random_log_row(rng, 6, generable, 0.0));
      for (TokenId t : continuing) {
        auto p = prefix;
        p.push_back(t);
        next.push_back(std::move(p));
      }
    }
    frontier = std::move(next);
  }
  return scorer;
}

// Random corpus of `lines` sentences over `words` distinct tokens.
inline std::vector<std::string> random_corpus(std::mt19937_64& rng, std::size_t words, std::size_t lines,
                                              std::size_t min_len, std::size_t max_len) {
  const auto vocab = word_list(words);
  // Zipf-like word choice so the model has clear modes.
  std::vector<double> weights;
  for (std::size_t i = 0; i < words; ++i) weights.push_back(1.0 / static_cast<double>(i + 1));
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::vector<std::string> out;
  for (std::size_t l = 0; l < lines; ++l) {
    const std::size_t len = min_len + rng() % (max_len - min_len + 1);
    std::string line;
    for (std::size_t i = 0; i < len; ++i) {
      if (i) line += ' ';
      line += vocab[pick(rng)];
    }
    out.push_back(std::move(line));
  }
  return out;
}

inline NGramLM random_ngram_lm(std::mt19937_64& rng, std::size_t words, std::size_t lines,
                               std::size_t order, double k) {
  auto corpus = random_corpus(rng, words, lines, 3, 9);
  return train_ngram_lm(corpus, order, k, Vocab(word_list(words)));
}

}  // namespace divseq::testing
