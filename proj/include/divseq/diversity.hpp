#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "divseq/core.hpp"
#include "divseq/embeddings.hpp"

namespace divseq {

// One entry per vocabulary id. Added to candidate scores as lambda * delta.
// Hamming, n-gram and embedding entries are <= 0; cumulative entries are a
// dissimilarity reward in (0, 1].
using PenaltyVector = std::vector<double>;

// The live beams of one earlier group at time t: each is that beam's full
// prefix (length t). Beams frozen at EOS before t are not part of the trace.
struct GroupTrace {
  std::vector<std::vector<TokenId>> beams;

  std::size_t steps() const { return beams.empty() ? 0 : beams.front().size(); }

  // Tokens chosen at the latest step, one per beam.
  std::vector<TokenId> time_slice() const {
    std::vector<TokenId> out;
    out.reserve(beams.size());
    for (const auto& b : beams) {
      if (!b.empty()) out.push_back(b.back());
    }
    return out;
  }
};

// delta[v] = -(number of times v was selected)
inline PenaltyVector hamming_penalty(std::span<const TokenId> prev_tokens, std::size_t vocab_size) {
  PenaltyVector delta(vocab_size, 0.0);
  for (TokenId t : prev_tokens) delta.at(t) -= 1.0;
  return delta;
}

/// Cumulative diversity against one earlier group.
///
/// M(v) counts, over every beam b of the trace and every step tau <= t, the
/// positions where the trace token equals the candidate's token. The candidate
/// is `current_prefix` (length t-1) extended by v. delta[v] = exp(-M(v)/Gamma).
inline PenaltyVector cumulative_penalty(const GroupTrace& trace,
                                        std::span<const TokenId> current_prefix,
                                        double temperature, std::size_t vocab_size) {
  if (!(temperature > 0)) throw Error(Errc::BadTemperature, "temperature must be > 0");
  const std::size_t t = current_prefix.size() + 1;
  double shared = 0.0;  // matches over tau < t
  std::vector<double> at_t(vocab_size, 0.0);
  for (const auto& beam : trace.beams) {
    if (beam.size() < t) {
      throw Error(Errc::LengthMismatch, "trace has fewer steps than the candidate");
    }
    for (std::size_t tau = 0; tau + 1 < t; ++tau) shared += beam[tau] == current_prefix[tau];
    at_t.at(beam[t - 1]) += 1.0;
  }
  PenaltyVector delta(vocab_size);
  for (std::size_t v = 0; v < vocab_size; ++v) delta[v] = std::exp(-(shared + at_t[v]) / temperature);
  return delta;
}

/// n-gram diversity: delta[v] = -(occurrences, anywhere in the earlier groups'
/// prefixes, of the n-gram made of the last n-1 prefix tokens followed by v).
/// A prefix shorter than n-1 yields the zero vector.
inline PenaltyVector ngram_penalty(std::span<const GroupTrace> traces,
                                   std::span<const TokenId> current_prefix, std::size_t n,
                                   std::size_t vocab_size) {
  if (n < 1) throw Error(Errc::BadN, "n-gram order must be >= 1");
  PenaltyVector delta(vocab_size, 0.0);
  if (current_prefix.size() < n - 1) return delta;
  const auto ctx = current_prefix.last(n - 1);
  for (const auto& trace : traces) {
    for (const auto& seq : trace.beams) {
      for (std::size_t end = n - 1; end < seq.size(); ++end) {
        bool match = true;
        for (std::size_t j = 0; j + 1 < n && match; ++j) match = seq[end - (n - 1) + j] == ctx[j];
        if (match) delta.at(seq[end]) -= 1.0;
      }
    }
  }
  return delta;
}

inline PenaltyVector ngram_penalty(const GroupTrace& trace, std::span<const TokenId> current_prefix,
                                   std::size_t n, std::size_t vocab_size) {
  return ngram_penalty(std::span<const GroupTrace>(&trace, 1), current_prefix, n, vocab_size);
}

// delta[v] = -sum over u in prev_tokens of cos(e(u), e(v))
inline PenaltyVector embedding_penalty(std::span<const TokenId> prev_tokens,
                                       const EmbeddingTable& table, std::size_t vocab_size) {
  PenaltyVector delta(vocab_size, 0.0);
  for (TokenId u : prev_tokens) {
    if (!table.has(u)) continue;
    for (std::size_t v = 0; v < vocab_size; ++v) delta[v] -= table.cosine(u, static_cast<TokenId>(v));
  }
  return delta;
}

inline PenaltyVector aggregate_penalty(std::span<const PenaltyVector> per_group,
                                       std::size_t vocab_size) {
  PenaltyVector sum(vocab_size, 0.0);
  for (const auto& p : per_group) {
    if (p.size() != vocab_size) throw Error(Errc::LengthMismatch, "penalty vectors differ in length");
    for (std::size_t v = 0; v < vocab_size; ++v) sum[v] += p[v];
  }
  return sum;
}

inline PenaltyVector aggregate_penalty(std::span<const PenaltyVector> per_group) {
  if (per_group.empty()) return {};
  return aggregate_penalty(per_group, per_group.front().size());
}

struct DiversitySpec {
  DiversityKind kind = DiversityKind::Hamming;
  double temperature = 1.0;
  std::size_t ngram_n = 2;
  const EmbeddingTable* embeddings = nullptr;
};

/// Running sum of the earlier groups' diversity terms within one time step.
///
/// The decoder calls begin_step() at the start of each step, then for each
/// group asks penalty_for() on every live beam before stepping it, and
/// add_group() with the group's freshly extended beams afterwards. Hamming and
/// embedding terms depend only on the earlier groups' latest tokens, so they
/// are kept as one running vector. Cumulative and n-gram terms depend on the
/// candidate's own prefix and are evaluated per beam.
class GroupPenalty {
 public:
  GroupPenalty(const DiversitySpec& spec, std::size_t vocab_size)
      : spec_(spec), vocab_size_(vocab_size), row_(vocab_size, 0.0) {
    if (spec_.kind == DiversityKind::Embedding) {
      if (!spec_.embeddings) throw Error(Errc::UnsupportedModel, "embedding diversity needs a table");
      if (spec_.embeddings->vocab_size() != vocab_size) {
        throw Error(Errc::VocabMismatch, "embedding table built for another vocabulary");
      }
    }
    if (spec_.kind == DiversityKind::Cumulative && !(spec_.temperature > 0)) {
      throw Error(Errc::BadTemperature, "temperature must be > 0");
    }
    if (spec_.kind == DiversityKind::NGram && spec_.ngram_n < 1) {
      throw Error(Errc::BadN, "n-gram order must be >= 1");
    }
  }

  void begin_step() {
    if (spec_.kind == DiversityKind::Hamming) {
      for (TokenId t : touched_) row_[t] = 0.0;
    } else if (spec_.kind == DiversityKind::Embedding && groups_ > 0) {
      std::fill(row_.begin(), row_.end(), 0.0);
    }
    touched_.clear();
    traces_.clear();
    groups_ = 0;
  }

  bool empty() const { return groups_ == 0; }

  // `beams` are the group's beams extended at this step (length t each).
  void add_group(std::span<const std::span<const TokenId>> beams) {
    if (beams.empty()) return;
    ++groups_;
    switch (spec_.kind) {
      case DiversityKind::Hamming:
        for (const auto& b : beams) {
          row_[b.back()] -= 1.0;
          touched_.push_back(b.back());
        }
        break;
      case DiversityKind::Embedding:
        for (const auto& b : beams) {
          const TokenId u = b.back();
          if (!spec_.embeddings->has(u)) continue;
          for (std::size_t v = 0; v < vocab_size_; ++v) {
            row_[v] -= spec_.embeddings->cosine(u, static_cast<TokenId>(v));
          }
        }
        break;
      case DiversityKind::Cumulative:
      case DiversityKind::NGram: {
        GroupTrace trace;
        for (const auto& b : beams) trace.beams.emplace_back(b.begin(), b.end());
        traces_.push_back(std::move(trace));
        break;
      }
    }
  }

  void add_group(const GroupTrace& trace) {
    std::vector<std::span<const TokenId>> beams(trace.beams.begin(), trace.beams.end());
    add_group(beams);
  }

  // Valid until the next call on this object.
  std::span<const double> penalty_for(std::span<const TokenId> prefix) {
    switch (spec_.kind) {
      case DiversityKind::Hamming:
      case DiversityKind::Embedding:
        return row_;
      case DiversityKind::NGram:
        scratch_ = ngram_penalty(traces_, prefix, spec_.ngram_n, vocab_size_);
        return scratch_;
      case DiversityKind::Cumulative:
        cumulative_into(prefix);
        return scratch_;
    }
    return row_;
  }

 private:
  // Sum over groups of exp(-(shared_h + count_h[v]) / Gamma), written as a
  // per-group constant plus corrections on the few tokens each group used.
  void cumulative_into(std::span<const TokenId> prefix) {
    const std::size_t t = prefix.size() + 1;
    const double inv_temp = 1.0 / spec_.temperature;
    double base = 0.0;
    for (const auto& trace : traces_) {
      double shared = 0.0;
      for (const auto& beam : trace.beams) {
        for (std::size_t tau = 0; tau + 1 < t; ++tau) shared += beam[tau] == prefix[tau];
      }
      base += std::exp(-shared * inv_temp);
    }
    scratch_.assign(vocab_size_, base);
    for (const auto& trace : traces_) {
      double shared = 0.0;
      for (const auto& beam : trace.beams) {
        for (std::size_t tau = 0; tau + 1 < t; ++tau) shared += beam[tau] == prefix[tau];
      }
      // Visit each distinct token of this group's slice once.
      const auto slice = trace.time_slice();
      for (std::size_t i = 0; i < slice.size(); ++i) {
        bool seen = false;
        for (std::size_t j = 0; j < i && !seen; ++j) seen = slice[j] == slice[i];
        if (seen) continue;
        double count = 0.0;
        for (TokenId s : slice) count += s == slice[i];
        scratch_[slice[i]] += std::exp(-(shared + count) * inv_temp) - std::exp(-shared * inv_temp);
      }
    }
  }

  DiversitySpec spec_;
  std::size_t vocab_size_;
  PenaltyVector row_;
  PenaltyVector scratch_;
  std::vector<TokenId> touched_;
  std::vector<GroupTrace> traces_;
  std::size_t groups_ = 0;
};

}  // namespace divseq
