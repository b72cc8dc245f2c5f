#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <queue>
#include <span>
#include <vector>

#include "divseq/core.hpp"
#include "divseq/diversity.hpp"
#include "divseq/scorers.hpp"

namespace divseq {

// Beams of one search (or one DBS group) after `t` steps. Kept sorted by
// selection score with the deterministic tie-break of select_top.
struct BeamState {
  std::size_t t = 0;
  std::vector<Hypothesis> hyps;

  static BeamState initial() { return BeamState{0, {Hypothesis{}}}; }

  bool all_finished() const {
    return std::all_of(hyps.begin(), hyps.end(), [](const Hypothesis& h) { return h.finished; });
  }

  std::size_t num_live() const {
    return static_cast<std::size_t>(
        std::count_if(hyps.begin(), hyps.end(), [](const Hypothesis& h) { return !h.finished; }));
  }
};

namespace detail {

inline constexpr std::uint32_t kCarryOver = std::numeric_limits<std::uint32_t>::max();

struct Candidate {
  double select;
  double score;      // objective stored on the new hypothesis
  std::uint32_t parent;
  std::uint32_t token;  // kCarryOver for a finished hypothesis kept as is

  // Selection score descending, then parent index, then token id.
  friend bool operator<(const Candidate& a, const Candidate& b) {
    if (a.select != b.select) return a.select > b.select;
    if (a.parent != b.parent) return a.parent < b.parent;
    return a.token < b.token;
  }
};

// Scratch space reused across steps of one decode.
struct StepBuffers {
  std::vector<Candidate> candidates;
  std::vector<double> rows;  // live x |V|, row-major
};

/// One step of (augmented) beam search.
///
/// `rows` holds one log-prob row per live hypothesis of `state`, in order.
/// `adjust(i, v, theta)` returns {selection increment, stored objective
/// increment} for extending live hypothesis i by token v; the stored logprob
/// always grows by theta alone. Finished hypotheses compete at their frozen
/// score. Candidates with theta = -inf are never selected.
template <class Adjust>
BeamState select_top(const BeamState& state, std::span<const double> rows, std::size_t vocab_size,
                     std::size_t width, Adjust&& adjust, std::vector<Candidate>& cands) {
  if (state.hyps.empty()) throw Error(Errc::EmptyState, "cannot step an empty beam");
  if (rows.size() != state.num_live() * vocab_size) {
    throw Error(Errc::RowLengthMismatch, "expected one row of length " + std::to_string(vocab_size) +
                                             " per live hypothesis");
  }
  cands.clear();
  std::size_t live = 0;
  for (std::size_t i = 0; i < state.hyps.size(); ++i) {
    const auto& h = state.hyps[i];
    const auto parent = static_cast<std::uint32_t>(i);
    if (h.finished) {
      cands.push_back({h.score, h.score, parent, kCarryOver});
      continue;
    }
    const double* row = rows.data() + live * vocab_size;
    for (std::size_t v = 0; v < vocab_size; ++v) {
      const double theta = row[v];
      if (theta == kNegInf) continue;
      const auto [sel_inc, score_inc] = adjust(live, static_cast<TokenId>(v), theta);
      cands.push_back({h.score + sel_inc, h.score + score_inc, parent, static_cast<std::uint32_t>(v)});
    }
    ++live;
  }

  const std::size_t keep = std::min(width, cands.size());
  if (keep < cands.size()) {
    std::nth_element(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end());
  }
  std::sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep));

  BeamState next{state.t + 1, {}};
  next.hyps.reserve(keep);
  std::size_t row_index = 0;
  std::vector<std::size_t> live_row(state.hyps.size(), 0);
  for (std::size_t i = 0; i < state.hyps.size(); ++i) {
    if (!state.hyps[i].finished) live_row[i] = row_index++;
  }
  for (std::size_t c = 0; c < keep; ++c) {
    const auto& cand = cands[c];
    const auto& parent = state.hyps[cand.parent];
    if (cand.token == kCarryOver) {
      next.hyps.push_back(parent);
      continue;
    }
    Hypothesis h;
    h.tokens.reserve(parent.tokens.size() + 1);
    h.tokens = parent.tokens;
    h.tokens.push_back(cand.token);
    h.logprob = parent.logprob + rows[live_row[cand.parent] * vocab_size + cand.token];
    h.score = cand.score;
    h.finished = cand.token == kEos;
    next.hyps.push_back(std::move(h));
  }
  return next;
}

template <Scorer S>
void score_live(const S& model, const DecodeContext& ctx, const BeamState& state,
                std::vector<double>& rows) {
  const std::size_t n = model.vocab().size();
  rows.resize(state.num_live() * n);
  std::size_t live = 0;
  for (const auto& h : state.hyps) {
    if (h.finished) continue;
    model.score_into(ctx, h.tokens, std::span<double>(rows).subspan(live * n, n));
    ++live;
  }
}

struct PureIncrement {
  std::pair<double, double> operator()(std::size_t, TokenId, double theta) const {
    return {theta, theta};
  }
};

}  // namespace detail

/// Extends every live hypothesis by every token and keeps the `width` best by
/// Theta + theta + lambda * aug[i][v]. Stored scores exclude the lambda term.
/// `aug`, when given, has one penalty row per live hypothesis.
inline BeamState beam_step(const BeamState& state, std::span<const std::vector<double>> rows,
                           std::size_t width,
                           std::optional<std::span<const PenaltyVector>> aug = std::nullopt,
                           double lambda = 0.0) {
  if (state.hyps.empty()) throw Error(Errc::EmptyState, "cannot step an empty beam");
  const std::size_t live = state.num_live();
  if (rows.size() != live) throw Error(Errc::RowLengthMismatch, "need one row per live hypothesis");
  if (aug && aug->size() != live) throw Error(Errc::RowLengthMismatch, "need one penalty per live hypothesis");
  const std::size_t n = rows.empty() ? 0 : rows.front().size();
  std::vector<double> flat;
  flat.reserve(live * n);
  for (std::size_t i = 0; i < live; ++i) {
    if (rows[i].size() != n || (aug && (*aug)[i].size() != n)) {
      throw Error(Errc::RowLengthMismatch, "rows differ in length");
    }
    flat.insert(flat.end(), rows[i].begin(), rows[i].end());
  }
  std::vector<detail::Candidate> cands;
  if (!aug || lambda == 0.0) return detail::select_top(state, flat, n, width, detail::PureIncrement{}, cands);
  return detail::select_top(
      state, flat, n, width,
      [&](std::size_t i, TokenId v, double theta) {
        return std::pair{theta + lambda * (*aug)[i][v], theta};
      },
      cands);
}

/// Plain beam search of width cfg.beam_width. Returns the final beams ranked
/// by log-probability.
template <Scorer S>
std::vector<Hypothesis> beam_search(const S& model, const DecodeContext& ctx, const DecodeConfig& cfg) {
  const std::size_t n = model.vocab().size();
  detail::StepBuffers buf;
  BeamState state = BeamState::initial();
  for (std::size_t t = 0; t < cfg.max_len && !state.all_finished(); ++t) {
    detail::score_live(model, ctx, state, buf.rows);
    state = detail::select_top(state, buf.rows, n, cfg.beam_width, detail::PureIncrement{},
                               buf.candidates);
  }
  rank_hypotheses(state.hyps, cfg.length_normalize);
  return std::move(state.hyps);
}

/// Diverse beam search: G groups of width B/G stepped in order at every time
/// step. Group 1 is plain beam search; group g adds lambda times the summed
/// diversity terms of groups 1..g-1 (already extended at this step) to its
/// selection scores. Hypotheses that finished at an earlier step neither emit
/// tokens nor contribute diversity.
template <Scorer S>
GroupedRankedList diverse_beam_search(const S& model, const DecodeContext& ctx,
                                      const DecodeConfig& cfg, const DiversitySpec& diversity) {
  const DecodeConfig c = validate_config(cfg);
  const std::size_t n = model.vocab().size();
  std::vector<BeamState> groups(c.groups, BeamState::initial());
  GroupPenalty penalty(diversity, n);
  detail::StepBuffers buf;
  std::vector<double> aug;  // live x |V|
  std::vector<std::span<const TokenId>> extended;

  auto all_done = [&] {
    return std::all_of(groups.begin(), groups.end(), [](const BeamState& s) { return s.all_finished(); });
  };
  for (std::size_t t = 1; t <= c.max_len && !all_done(); ++t) {
    penalty.begin_step();
    for (auto& group : groups) {
      if (!group.all_finished()) {
        detail::score_live(model, ctx, group, buf.rows);
        if (penalty.empty() || c.lambda == 0.0) {
          group = detail::select_top(group, buf.rows, n, c.group_width, detail::PureIncrement{},
                                     buf.candidates);
        } else {
          aug.resize(group.num_live() * n);
          std::size_t live = 0;
          for (const auto& h : group.hyps) {
            if (h.finished) continue;
            auto p = penalty.penalty_for(h.tokens);
            std::copy(p.begin(), p.end(), aug.begin() + static_cast<std::ptrdiff_t>(live * n));
            ++live;
          }
          const double lambda = c.lambda;
          group = detail::select_top(
              group, buf.rows, n, c.group_width,
              [&](std::size_t i, TokenId v, double theta) {
                return std::pair{theta + lambda * aug[i * n + v], theta};
              },
              buf.candidates);
        }
      }
      extended.clear();
      for (const auto& h : group.hyps) {
        if (h.tokens.size() == t) extended.emplace_back(h.tokens);
      }
      penalty.add_group(extended);
    }
  }

  GroupedRankedList out;
  out.groups.reserve(groups.size());
  for (auto& g : groups) {
    rank_hypotheses(g.hyps, c.length_normalize);
    out.groups.push_back(std::move(g.hyps));
  }
  return out;
}

/// Beam search with the intra-sibling rank penalty: each extension's selection
/// score is Theta + theta - gamma * rank, where rank (from 1) orders a parent's
/// children by theta descending, ties by token id. Stored scores stay pure.
template <Scorer S>
std::vector<Hypothesis> decode_li2016(const S& model, const DecodeContext& ctx, const DecodeConfig& cfg) {
  const std::size_t n = model.vocab().size();
  const double gamma = cfg.gamma_li;
  if (!(gamma >= 0)) throw Error(Errc::NegativeStrength, "gamma must be >= 0");
  detail::StepBuffers buf;
  std::vector<double> rank;  // live x |V|
  std::vector<TokenId> order(n);
  BeamState state = BeamState::initial();
  for (std::size_t t = 0; t < cfg.max_len && !state.all_finished(); ++t) {
    detail::score_live(model, ctx, state, buf.rows);
    const std::size_t live = state.num_live();
    rank.assign(live * n, 0.0);
    for (std::size_t i = 0; i < live; ++i) {
      const double* row = buf.rows.data() + i * n;
      for (std::size_t v = 0; v < n; ++v) order[v] = static_cast<TokenId>(v);
      std::stable_sort(order.begin(), order.end(),
                       [row](TokenId a, TokenId b) { return row[a] > row[b]; });
      for (std::size_t r = 0; r < n; ++r) rank[i * n + order[r]] = static_cast<double>(r + 1);
    }
    state = detail::select_top(
        state, buf.rows, n, cfg.beam_width,
        [&](std::size_t i, TokenId v, double theta) {
          return std::pair{theta - gamma * rank[i * n + v], theta};
        },
        buf.candidates);
  }
  rank_hypotheses(state.hyps, cfg.length_normalize);
  return std::move(state.hyps);
}

/// MMI-style decoding: each token adds theta - lambda_mmi * theta_U to the
/// objective, with theta_U from an unconditioned model scored on the prefix
/// alone. Hypothesis::score carries that objective, Hypothesis::logprob the
/// pure model score; the final ranking uses the objective.
template <Scorer S, Scorer U>
std::vector<Hypothesis> decode_mmi(const S& model, const U& unconditioned, const DecodeContext& ctx,
                                   const DecodeConfig& cfg) {
  if (!(model.vocab() == unconditioned.vocab())) {
    throw Error(Errc::VocabMismatch, "unconditioned model uses a different vocabulary");
  }
  const double lambda = cfg.lambda_mmi;
  if (!(lambda >= 0)) throw Error(Errc::NegativeStrength, "lambda_mmi must be >= 0");
  if (lambda == 0.0) return beam_search(model, ctx, cfg);
  const std::size_t n = model.vocab().size();
  const DecodeContext no_ctx{};
  detail::StepBuffers buf;
  std::vector<double> u_rows;
  BeamState state = BeamState::initial();
  for (std::size_t t = 0; t < cfg.max_len && !state.all_finished(); ++t) {
    detail::score_live(model, ctx, state, buf.rows);
    detail::score_live(unconditioned, no_ctx, state, u_rows);
    state = detail::select_top(
        state, buf.rows, n, cfg.beam_width,
        [&](std::size_t i, TokenId v, double theta) {
          const double theta_u = u_rows[i * n + v];
          if (theta_u == kNegInf) {
            throw Error(Errc::UnsupportedModel,
                        "unconditioned model gives zero probability to a generable token; "
                        "train it with add-k > 0");
          }
          const double inc = theta - lambda * theta_u;
          return std::pair{inc, inc};
        },
        buf.candidates);
  }
  rank_hypotheses(state.hyps, cfg.length_normalize);
  return std::move(state.hyps);
}

inline constexpr double kMaxExhaustiveSpace = 1e7;

/// Exact top-k by enumeration of every sequence that ends at EOS or reaches
/// length T. Ordered by logprob descending, ties by lexicographic token ids.
template <Scorer S>
std::vector<Hypothesis> exhaustive_topk(const S& model, const DecodeContext& ctx, std::size_t max_len,
                                        std::size_t k) {
  const std::size_t n = model.vocab().size();
  if (std::pow(static_cast<double>(n), static_cast<double>(max_len)) > kMaxExhaustiveSpace) {
    throw Error(Errc::SearchSpaceTooLarge, "|V|^T exceeds " + std::to_string(kMaxExhaustiveSpace));
  }
  auto better = [](const Hypothesis& a, const Hypothesis& b) {
    if (a.logprob != b.logprob) return a.logprob > b.logprob;
    return a.tokens < b.tokens;
  };
  // Max-heap on "worse", so top() is the weakest kept sequence.
  std::priority_queue<Hypothesis, std::vector<Hypothesis>, decltype(better)> kept(better);
  if (k == 0) return {};

  std::vector<std::vector<double>> rows(max_len, std::vector<double>(n));
  Hypothesis current;
  auto offer = [&](const Hypothesis& h) {
    if (kept.size() < k) {
      kept.push(h);
    } else if (better(h, kept.top())) {
      kept.pop();
      kept.push(h);
    }
  };
  auto visit = [&](auto& self, std::size_t depth) -> void {
    auto& row = rows[depth];
    model.score_into(ctx, current.tokens, row);
    for (std::size_t v = 0; v < n; ++v) {
      if (row[v] == kNegInf) continue;
      const double before = current.logprob;
      current.tokens.push_back(static_cast<TokenId>(v));
      current.logprob = before + row[v];
      current.score = current.logprob;
      current.finished = v == kEos;
      if (current.finished || depth + 1 == max_len) {
        offer(current);
      } else {
        self(self, depth + 1);
      }
      current.tokens.pop_back();
      current.logprob = before;
      current.finished = false;
    }
  };
  visit(visit, 0);

  std::vector<Hypothesis> out;
  out.reserve(kept.size());
  while (!kept.empty()) {
    out.push_back(kept.top());
    kept.pop();
  }
  std::reverse(out.begin(), out.end());
  return out;
}

// Optional inputs some methods need.
template <Scorer U = TableScorer>
struct DecodeResources {
  const U* unconditioned = nullptr;
  const EmbeddingTable* embeddings = nullptr;
};

/// Runs the method selected in `cfg`. Single-list methods come back as one
/// group.
template <Scorer S, Scorer U = TableScorer>
GroupedRankedList decode(const S& model, const DecodeContext& ctx, const DecodeConfig& cfg,
                         const DecodeResources<U>& res = {}) {
  const DecodeConfig c = validate_config(cfg);
  GroupedRankedList out;
  switch (c.method) {
    case Method::BeamSearch:
      out.groups.push_back(beam_search(model, ctx, c));
      break;
    case Method::DiverseBeamSearch:
      return diverse_beam_search(
          model, ctx, c, DiversitySpec{c.diversity, c.temperature, c.div_ngram_n, res.embeddings});
    case Method::Li2016:
      out.groups.push_back(decode_li2016(model, ctx, c));
      break;
    case Method::Mmi:
      if (!res.unconditioned) throw Error(Errc::UnsupportedModel, "mmi decoding needs an unconditioned model");
      out.groups.push_back(decode_mmi(model, *res.unconditioned, ctx, c));
      break;
    case Method::Exhaustive:
      out.groups.push_back(exhaustive_topk(model, ctx, c.max_len, c.beam_width));
      break;
  }
  return out;
}

}  // namespace divseq
