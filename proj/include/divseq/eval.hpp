#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "divseq/core.hpp"

namespace divseq {

namespace detail {

template <class T>
std::map<std::vector<T>, std::size_t> ngram_counts(std::span<const T> seq, std::size_t n) {
  std::map<std::vector<T>, std::size_t> counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) ++counts[std::vector<T>(seq.begin() + i, seq.begin() + i + n)];
  return counts;
}

}  // namespace detail

/// Sentence-level BLEU with uniform weights over orders 1..max_n.
///
/// Orders where the candidate has no n-grams are dropped and the weights
/// renormalized. An order with n-grams but no clipped matches is smoothed to
/// 1/(total+1), except unigrams: no unigram match means a score of 0. The
/// brevity penalty uses the reference length closest to the candidate's
/// (shorter wins a tie).
template <class T>
double sentence_bleu(std::span<const T> candidate, std::span<const std::vector<T>> references,
                     std::size_t max_n = 4) {
  if (candidate.empty()) throw Error(Errc::EmptyCandidate, "candidate is empty");
  if (std::none_of(references.begin(), references.end(), [](const auto& r) { return !r.empty(); })) {
    throw Error(Errc::NoReferences, "no non-empty reference");
  }
  if (max_n < 1) throw Error(Errc::BadN, "max_n must be >= 1");

  double log_sum = 0.0;
  std::size_t orders = 0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    if (candidate.size() < n) break;
    const auto cand = detail::ngram_counts(candidate, n);
    std::map<std::vector<T>, std::size_t> max_ref;
    for (const auto& ref : references) {
      for (const auto& [gram, count] : detail::ngram_counts(std::span<const T>(ref), n)) {
        auto& m = max_ref[gram];
        m = std::max(m, count);
      }
    }
    std::size_t matches = 0;
    for (const auto& [gram, count] : cand) {
      auto it = max_ref.find(gram);
      if (it != max_ref.end()) matches += std::min(count, it->second);
    }
    const std::size_t total = candidate.size() - n + 1;
    double p;
    if (matches == 0) {
      if (n == 1) return 0.0;
      p = 1.0 / static_cast<double>(total + 1);
    } else {
      p = static_cast<double>(matches) / static_cast<double>(total);
    }
    log_sum += std::log(p);
    ++orders;
  }

  const auto c = candidate.size();
  std::size_t r = 0;
  std::size_t best_diff = std::numeric_limits<std::size_t>::max();
  for (const auto& ref : references) {
    if (ref.empty()) continue;
    const std::size_t diff = ref.size() > c ? ref.size() - c : c - ref.size();
    if (diff < best_diff || (diff == best_diff && ref.size() < r)) {
      best_diff = diff;
      r = ref.size();
    }
  }
  const double bp = c < r ? std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c)) : 1.0;
  return bp * std::exp(log_sum / static_cast<double>(orders));
}

template <class T>
double sentence_bleu(const std::vector<T>& candidate, const std::vector<std::vector<T>>& references,
                     std::size_t max_n = 4) {
  return sentence_bleu(std::span<const T>(candidate), std::span<const std::vector<T>>(references), max_n);
}

// Max over the first min(k, size) metric values.
inline double oracle_at_k(std::span<const double> values, std::size_t k) {
  if (values.empty()) throw Error(Errc::EmptyList, "empty hypothesis list");
  if (k < 1) throw Error(Errc::BadN, "k must be >= 1");
  const auto end = values.begin() + static_cast<std::ptrdiff_t>(std::min(k, values.size()));
  return *std::max_element(values.begin(), end);
}

template <class Seq, class Refs, class Metric>
double oracle_at_k(std::span<const Seq> ranked, const Refs& refs, Metric&& metric, std::size_t k) {
  if (ranked.empty()) throw Error(Errc::EmptyList, "empty hypothesis list");
  std::vector<double> values;
  for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) values.push_back(metric(ranked[i], refs));
  return oracle_at_k(values, k);
}

/// Distinct n-grams across the whole list divided by the total token count.
/// Callers strip EOS beforehand (the Hypothesis overload does it).
template <class T>
double distinct_n(std::span<const std::vector<T>> list, std::size_t n) {
  if (list.empty()) throw Error(Errc::EmptyList, "empty list");
  if (n < 1) throw Error(Errc::BadN, "n must be >= 1");
  std::set<std::vector<T>> grams;
  std::size_t words = 0;
  for (const auto& seq : list) {
    words += seq.size();
    for (std::size_t i = 0; i + n <= seq.size(); ++i) grams.emplace(seq.begin() + i, seq.begin() + i + n);
  }
  if (words == 0) return 0.0;
  return static_cast<double>(grams.size()) / static_cast<double>(words);
}

template <class T>
double distinct_n(const std::vector<std::vector<T>>& list, std::size_t n) {
  return distinct_n(std::span<const std::vector<T>>(list), n);
}

// Token ids without BOS/EOS.
inline std::vector<TokenId> words_of(const Hypothesis& h) {
  std::vector<TokenId> out;
  for (TokenId t : h.tokens) {
    if (t != kEos && t != kBos) out.push_back(t);
  }
  return out;
}

inline double distinct_n(std::span<const Hypothesis> list, std::size_t n) {
  std::vector<std::vector<TokenId>> words;
  for (const auto& h : list) words.push_back(words_of(h));
  return distinct_n(std::span<const std::vector<TokenId>>(words), n);
}

inline constexpr std::size_t kDistinctOrders = 4;

// Statistics of one ranked output list. `oracle` is empty when no
// references were available.
struct ListMetrics {
  std::vector<double> oracle;  // one per requested k
  double distinct[kDistinctOrders] = {};
  double mean_len = 0.0;
  double top1_logprob = 0.0;
};

/// `words` are the list's hypotheses without BOS/EOS, in ranked order;
/// `logprobs` the matching pure log-probabilities. With references present,
/// oracle values use sentence BLEU.
template <class T>
ListMetrics list_metrics(const std::vector<std::vector<T>>& words, std::span<const double> logprobs,
                         const std::vector<std::vector<T>>* references, std::span<const std::size_t> ks) {
  if (words.empty()) throw Error(Errc::EmptyList, "empty hypothesis list");
  ListMetrics m;
  for (std::size_t n = 1; n <= kDistinctOrders; ++n) m.distinct[n - 1] = distinct_n(words, n);
  double total = 0.0;
  for (const auto& w : words) total += static_cast<double>(w.size());
  m.mean_len = total / static_cast<double>(words.size());
  m.top1_logprob = logprobs.empty() ? 0.0 : logprobs.front();
  if (references) {
    std::vector<double> bleu;
    bleu.reserve(words.size());
    for (const auto& w : words) bleu.push_back(w.empty() ? 0.0 : sentence_bleu(w, *references));
    for (std::size_t k : ks) m.oracle.push_back(oracle_at_k(bleu, k));
  }
  return m;
}

/// One TSV row: the averaged metrics of many lists plus the labels that
/// identify the decoding configuration.
struct MetricReport {
  std::string method;
  std::string beam_width;
  std::string groups;
  std::string lambda;
  std::string diversity;
  std::vector<std::size_t> ks;
  std::optional<std::vector<double>> oracle;  // mean oracle@k, absent without references
  double distinct[kDistinctOrders] = {};
  double mean_len = 0.0;
  double top1_logprob = 0.0;
  std::size_t lists = 0;

  void add(const ListMetrics& m) {
    const double n = static_cast<double>(++lists);
    auto running = [n](double& mean, double x) { mean += (x - mean) / n; };
    for (std::size_t i = 0; i < kDistinctOrders; ++i) running(distinct[i], m.distinct[i]);
    running(mean_len, m.mean_len);
    running(top1_logprob, m.top1_logprob);
    if (!m.oracle.empty()) {
      if (!oracle) oracle.emplace(m.oracle.size(), 0.0);
      for (std::size_t i = 0; i < m.oracle.size(); ++i) running((*oracle)[i], m.oracle[i]);
    }
  }
};

inline std::string format_metric(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

inline std::string tsv_header(std::span<const std::size_t> ks) {
  std::string h = "method\tB\tG\tlambda\tdiversity";
  for (std::size_t k : ks) h += "\toracle@" + std::to_string(k);
  for (std::size_t n = 1; n <= kDistinctOrders; ++n) h += "\tdistinct-" + std::to_string(n);
  h += "\tmean_len\ttop1_logprob";
  return h;
}

inline std::string tsv_row(const MetricReport& r) {
  std::string row = r.method + '\t' + r.beam_width + '\t' + r.groups + '\t' + r.lambda + '\t' + r.diversity;
  for (std::size_t i = 0; i < r.ks.size(); ++i) {
    row += '\t';
    row += r.oracle ? format_metric((*r.oracle)[i]) : "NA";
  }
  for (double d : r.distinct) row += '\t' + format_metric(d);
  row += '\t' + format_metric(r.mean_len);
  row += '\t' + format_metric(r.top1_logprob);
  return row;
}

}  // namespace divseq
