#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "divseq/error.hpp"

namespace divseq {

using TokenId = std::uint32_t;

inline constexpr TokenId kBos = 0;
inline constexpr TokenId kEos = 1;
inline constexpr TokenId kUnk = 2;
inline constexpr std::size_t kNumReserved = 3;

inline constexpr std::string_view kBosString = "<s>";
inline constexpr std::string_view kEosString = "</s>";
inline constexpr std::string_view kUnkString = "<unk>";

// Bidirectional token <-> id map. Ids 0..2 are BOS, EOS and UNK; user tokens
// follow in insertion order.
class Vocab {
 public:
  Vocab() : Vocab(std::vector<std::string>{}, /*allow_empty=*/true) {}

  // Builds from user tokens (reserved entries are prepended).
  explicit Vocab(const std::vector<std::string>& tokens) : Vocab(tokens, false) {}

  // Restores a vocab from a full id-ordered token list that already starts with
  // the reserved entries, as stored in model files.
  static Vocab from_id_order(const std::vector<std::string>& all_tokens) {
    if (all_tokens.size() < kNumReserved || all_tokens[kBos] != kBosString ||
        all_tokens[kEos] != kEosString || all_tokens[kUnk] != kUnkString) {
      throw Error(Errc::CorruptPayload, "vocab block lacks the reserved tokens");
    }
    return Vocab(std::vector<std::string>(all_tokens.begin() + kNumReserved, all_tokens.end()),
                 true);
  }

  std::size_t size() const noexcept { return tokens_.size(); }

  bool contains(std::string_view token) const { return ids_.contains(std::string(token)); }

  std::optional<TokenId> find(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  TokenId id(std::string_view token) const {
    auto found = find(token);
    if (!found) throw Error(Errc::InvalidTokenId, "unknown token '" + std::string(token) + "'");
    return *found;
  }

  TokenId id_or_unk(std::string_view token) const { return find(token).value_or(kUnk); }

  const std::string& lookup(TokenId id) const {
    if (id >= tokens_.size()) {
      throw Error(Errc::InvalidTokenId, "id " + std::to_string(id) + " out of range");
    }
    return tokens_[id];
  }

  bool valid(TokenId id) const noexcept { return id < tokens_.size(); }

  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  Vocab(const std::vector<std::string>& user_tokens, bool allow_empty) {
    if (user_tokens.empty() && !allow_empty) {
      throw Error(Errc::EmptyTokenList, "vocabulary needs at least one token");
    }
    tokens_.reserve(user_tokens.size() + kNumReserved);
    for (auto reserved : {kBosString, kEosString, kUnkString}) add(std::string(reserved));
    for (const auto& token : user_tokens) add(token);
  }

  void add(const std::string& token) {
    auto [it, inserted] = ids_.emplace(token, static_cast<TokenId>(tokens_.size()));
    if (!inserted) throw Error(Errc::DuplicateToken, "duplicate token '" + token + "'");
    tokens_.push_back(token);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

inline Vocab build_vocab(const std::vector<std::string>& tokens) { return Vocab(tokens); }

// Splits on ASCII whitespace.
inline std::vector<std::string> split_tokens(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    std::size_t j = i;
    while (j < line.size() && !is_space(line[j])) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::vector<TokenId> encode(const Vocab& vocab, std::string_view line) {
  std::vector<TokenId> ids;
  for (const auto& token : split_tokens(line)) ids.push_back(vocab.id_or_unk(token));
  return ids;
}

// Space-joined surface form. EOS is kept so finished and unfinished
// hypotheses stay distinguishable.
inline std::string decode_tokens(const Vocab& vocab, std::span<const TokenId> ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += vocab.lookup(ids[i]);
  }
  return out;
}

/// A decoded (partial) sequence.
///
/// `logprob` is the pure model score: the sum of the per-token log
/// probabilities that produced `tokens`. `score` is the decoder's ranking
/// objective. It equals `logprob` for every method except MMI decoding, where
/// it carries the accumulated modified objective.
struct Hypothesis {
  std::vector<TokenId> tokens;
  double logprob = 0.0;
  double score = 0.0;
  bool finished = false;

  std::size_t length() const noexcept { return tokens.size(); }

  friend bool operator==(const Hypothesis&, const Hypothesis&) = default;
};

struct DecodeContext {
  std::string text;
  std::vector<TokenId> tokens;
};

enum class Method { BeamSearch, DiverseBeamSearch, Li2016, Mmi, Exhaustive };
enum class DiversityKind { Hamming, Cumulative, NGram, Embedding };

constexpr std::string_view method_name(Method m) noexcept {
  switch (m) {
    case Method::BeamSearch: return "bs";
    case Method::DiverseBeamSearch: return "dbs";
    case Method::Li2016: return "li2016";
    case Method::Mmi: return "mmi";
    case Method::Exhaustive: return "exhaustive";
  }
  return "?";
}

constexpr std::string_view diversity_name(DiversityKind d) noexcept {
  switch (d) {
    case DiversityKind::Hamming: return "hamming";
    case DiversityKind::Cumulative: return "cumulative";
    case DiversityKind::NGram: return "ngram";
    case DiversityKind::Embedding: return "embedding";
  }
  return "?";
}

inline std::optional<Method> parse_method(std::string_view s) {
  for (auto m : {Method::BeamSearch, Method::DiverseBeamSearch, Method::Li2016, Method::Mmi,
                 Method::Exhaustive}) {
    if (method_name(m) == s) return m;
  }
  return std::nullopt;
}

inline std::optional<DiversityKind> parse_diversity(std::string_view s) {
  for (auto d : {DiversityKind::Hamming, DiversityKind::Cumulative, DiversityKind::NGram,
                 DiversityKind::Embedding}) {
    if (diversity_name(d) == s) return d;
  }
  return std::nullopt;
}

struct DecodeConfig {
  std::size_t beam_width = 1;      // B
  std::size_t groups = 1;          // G
  double lambda = 0.0;             // diversity strength, shared by all groups
  double gamma_li = 0.0;           // intra-sibling rank penalty
  double lambda_mmi = 0.0;         // weight of the unconditioned LM
  double temperature = 1.0;        // cumulative-diversity temperature
  std::size_t div_ngram_n = 2;
  std::size_t max_len = 20;        // T
  Method method = Method::BeamSearch;
  DiversityKind diversity = DiversityKind::Hamming;
  // Rank final lists by logprob / length. Off unless asked for.
  bool length_normalize = false;

  // Filled in by validate_config.
  std::size_t group_width = 0;     // B' = B / G
};

inline DecodeConfig validate_config(DecodeConfig cfg) {
  if (cfg.beam_width < 1) throw Error(Errc::ZeroBeam, "beam width must be >= 1");
  if (cfg.groups < 1 || cfg.groups > cfg.beam_width || cfg.beam_width % cfg.groups != 0) {
    throw Error(Errc::NonDivisibleBeam, "beam width " + std::to_string(cfg.beam_width) +
                                            " is not divisible into " +
                                            std::to_string(cfg.groups) + " groups");
  }
  // Written as !(x >= 0) so NaN is rejected too.
  if (!(cfg.lambda >= 0) || !(cfg.gamma_li >= 0) || !(cfg.lambda_mmi >= 0)) {
    throw Error(Errc::NegativeStrength, "diversity / rank / mmi strengths must be >= 0");
  }
  if (!(cfg.temperature > 0)) throw Error(Errc::BadTemperature, "temperature must be > 0");
  if (cfg.max_len < 1) throw Error(Errc::ZeroLength, "max length must be >= 1");
  if (cfg.div_ngram_n < 1) throw Error(Errc::BadN, "n-gram diversity order must be >= 1");
  cfg.group_width = cfg.beam_width / cfg.groups;
  return cfg;
}

// Final ordering shared by every decoder: objective descending, then the
// position the hypothesis held before ranking.
inline void rank_hypotheses(std::vector<Hypothesis>& hyps, bool length_normalize = false) {
  auto key = [length_normalize](const Hypothesis& h) {
    if (!length_normalize || h.tokens.empty()) return h.score;
    return h.score / static_cast<double>(h.tokens.size());
  };
  std::stable_sort(hyps.begin(), hyps.end(),
                   [&](const Hypothesis& a, const Hypothesis& b) { return key(a) > key(b); });
}

/// Output of diverse decoding: G groups of up to B' hypotheses, each group
/// ranked internally.
struct GroupedRankedList {
  std::vector<std::vector<Hypothesis>> groups;

  std::size_t size() const noexcept {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.size();
    return n;
  }

  struct Entry {
    std::size_t group;          // 0-based
    std::size_t rank_in_group;  // 0-based
    const Hypothesis* hyp;
  };

  // All hypotheses ranked by objective; ties keep group-major order.
  std::vector<Entry> flattened(bool length_normalize = false) const {
    std::vector<Entry> out;
    out.reserve(size());
    for (std::size_t g = 0; g < groups.size(); ++g) {
      for (std::size_t r = 0; r < groups[g].size(); ++r) out.push_back({g, r, &groups[g][r]});
    }
    auto key = [length_normalize](const Hypothesis& h) {
      if (!length_normalize || h.tokens.empty()) return h.score;
      return h.score / static_cast<double>(h.tokens.size());
    };
    std::stable_sort(out.begin(), out.end(),
                     [&](const Entry& a, const Entry& b) { return key(*a.hyp) > key(*b.hyp); });
    return out;
  }

  std::vector<Hypothesis> flattened_hypotheses(bool length_normalize = false) const {
    std::vector<Hypothesis> out;
    for (const auto& e : flattened(length_normalize)) out.push_back(*e.hyp);
    return out;
  }
};

}  // namespace divseq
