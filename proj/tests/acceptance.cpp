// Acceptance checks. Prints one PASS/FAIL line per check and exits non-zero
// if any check fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "divseq/cli.hpp"
#include "support/fixtures.hpp"

namespace {

using namespace divseq;
using Clock = std::chrono::steady_clock;

constexpr double kScoreTol = 1e-9;

DecodeConfig config(std::size_t b, std::size_t g, double lambda, std::size_t t,
                    DiversityKind kind = DiversityKind::Hamming) {
  DecodeConfig c;
  c.beam_width = b;
  c.groups = g;
  c.lambda = lambda;
  c.max_len = t;
  c.diversity = kind;
  return validate_config(c);
}

bool same_list(const std::vector<Hypothesis>& a, const std::vector<Hypothesis>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].tokens != b[i].tokens) return false;
    if (std::abs(a[i].logprob - b[i].logprob) > kScoreTol) return false;
  }
  return true;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Result {
  bool pass;
  std::string detail;
};

// The shared random table-scorer suite: 100 scorers, |V| in [4, 8], T in [2, 6].
const std::vector<testing::RandomTable>& suite() {
  static const auto s = testing::scorer_suite(20160101, 100);
  return s;
}

Result one_group_equivalence() {
  const auto start = Clock::now();
  std::size_t mismatches = 0, runs = 0;
  for (const auto& [scorer, t] : suite()) {
    for (std::size_t b : {2u, 4u}) {
      const auto dbs = diverse_beam_search(scorer, {}, config(b, 1, 0.5, t), DiversitySpec{});
      const auto bs = beam_search(scorer, {}, config(b, 1, 0.0, t));
      ++runs;
      if (dbs.groups.size() != 1 || !same_list(dbs.groups[0], bs)) ++mismatches;
    }
  }
  const double secs = seconds_since(start);
  std::ostringstream d;
  d << runs << " decodes, " << mismatches << " mismatches, " << secs << " s (limit 10 s)";
  return {mismatches == 0 && secs < 10.0, d.str()};
}

Result zero_strength_decoupling() {
  std::size_t mismatches = 0, runs = 0;
  for (const auto& [scorer, t] : suite()) {
    const auto dbs = diverse_beam_search(scorer, {}, config(4, 2, 0.0, t), DiversitySpec{});
    const auto bs = beam_search(scorer, {}, config(2, 1, 0.0, t));
    ++runs;
    for (const auto& g : dbs.groups) mismatches += !same_list(g, bs);
  }
  std::ostringstream d;
  d << runs << " scorers, " << mismatches << " group mismatches";
  return {mismatches == 0, d.str()};
}

Result oracle_equivalence() {
  std::mt19937_64 rng(27);
  std::size_t mismatches = 0;
  for (int i = 0; i < 100; ++i) {
    const auto scorer = testing::three_way_scorer(rng, 3, i % 2 == 0);
    const auto bs = beam_search(scorer, {}, config(27, 1, 0.0, 3));
    const auto ex = exhaustive_topk(scorer, {}, 3, 27);
    std::set<std::vector<TokenId>> a, b;
    for (const auto& h : bs) a.insert(h.tokens);
    for (const auto& h : ex) b.insert(h.tokens);
    bool ok = a == b && bs.size() == ex.size();
    // Scores agree and the ranked order matches up to exact ties.
    for (std::size_t k = 0; ok && k < bs.size(); ++k) ok = std::abs(bs[k].logprob - ex[k].logprob) <= kScoreTol;
    mismatches += !ok;
  }
  std::ostringstream d;
  d << "100 scorers, " << mismatches << " mismatches";
  return {mismatches == 0, d.str()};
}

EmbeddingTable random_embeddings(std::mt19937_64& rng, std::size_t vocab_size) {
  EmbeddingTable table(vocab_size, 4);
  std::normal_distribution<double> gauss;
  for (TokenId t = 1; t < vocab_size; ++t) {
    table.set(t, std::vector<double>{gauss(rng), gauss(rng), gauss(rng), gauss(rng)});
  }
  return table;
}

Result group_width_guarantee() {
  std::mt19937_64 rng(33);
  std::size_t violations = 0, runs = 0;
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& [scorer, t] : suite()) {
    const auto table = random_embeddings(rng, scorer.vocab().size());
    const double base = beam_search(scorer, {}, config(2, 1, 0.0, t)).front().logprob;
    for (double lambda : {0.1, 0.5, 2.0}) {
      for (auto kind : {DiversityKind::Hamming, DiversityKind::Cumulative, DiversityKind::NGram,
                        DiversityKind::Embedding}) {
        const auto out = diverse_beam_search(scorer, {}, config(4, 2, lambda, t, kind),
                                             DiversitySpec{kind, 1.0, 2, &table});
        const double top = out.flattened().front().hyp->logprob;
        ++runs;
        worst = std::min(worst, top - base);
        violations += top < base - kScoreTol;
      }
    }
  }
  std::ostringstream d;
  d << runs << " decodes, " << violations << " violations, min margin " << worst;
  return {violations == 0, d.str()};
}

// Two copies of one sentence family over disjoint vocabularies. Family A is
// repeated 11 times per line, family B 10 times, so every B sentence is
// exactly 10/11 as likely as its A counterpart under a k = 0 bigram model.
struct Bimodal {
  NGramLM lm;
  std::set<std::string> mode_a_words;
};

Bimodal make_bimodal(std::mt19937_64& rng) {
  const std::size_t len = 5 + rng() % 3;
  // Two slots with three alternatives each; the rest is fixed.
  std::size_t p1 = 1 + rng() % (len - 3);
  std::size_t p2 = p1 + 2 + rng() % (len - p1 - 2);
  std::vector<std::vector<std::string>> slots(len);
  for (std::size_t i = 0; i < len; ++i) {
    const std::size_t alts = i == p1 || i == p2 ? 3 : 1;
    for (std::size_t j = 0; j < alts; ++j) slots[i].push_back("s" + std::to_string(i) + "_" + std::to_string(j));
  }
  auto weights = [&] {
    std::vector<std::size_t> w{20, 19 + rng() % 2, 19 + rng() % 2};  // ratios >= 0.95 > 10/11
    std::sort(w.rbegin(), w.rend());
    return w;
  };
  const auto w1 = weights();
  const auto w2 = weights();

  std::vector<std::string> corpus;
  std::set<std::string> words_a;
  auto emit = [&](const std::string& prefix, std::size_t copies) {
    for (std::size_t a = 0; a < 3; ++a) {
      for (std::size_t b = 0; b < 3; ++b) {
        std::string line;
        for (std::size_t i = 0; i < len; ++i) {
          const std::size_t pick = i == p1 ? a : i == p2 ? b : 0;
          const auto word = prefix + slots[i][pick];
          if (prefix == "A") words_a.insert(word);
          if (i) line += ' ';
          line += word;
        }
        for (std::size_t c = 0; c < copies * w1[a] * w2[b]; ++c) corpus.push_back(line);
      }
    }
  };
  emit("A", 11);
  emit("B", 10);
  return {train_ngram_lm(corpus, 2, 0.0, vocab_from_corpus(corpus)), words_a};
}

bool is_mode_a(const Vocab& v, const Hypothesis& h, const std::set<std::string>& words_a) {
  for (TokenId t : h.tokens) {
    if (t == kEos) continue;
    if (!words_a.contains(v.lookup(t))) return false;
  }
  return true;
}

Result mode_recovery() {
  std::size_t successes = 0;
  std::size_t bs_only_a = 0, dbs_found_b = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(5000 + seed);
    const auto [lm, words_a] = make_bimodal(rng);
    const auto bs = beam_search(lm, {}, config(4, 1, 0.0, 8));
    const auto dbs = diverse_beam_search(lm, {}, config(4, 4, 0.4, 8), DiversitySpec{});
    const bool all_a = std::all_of(bs.begin(), bs.end(), [&](const Hypothesis& h) {
      return is_mode_a(lm.vocab(), h, words_a);
    });
    bool found_b = false;
    for (const auto& e : dbs.flattened()) found_b |= !is_mode_a(lm.vocab(), *e.hyp, words_a);
    bs_only_a += all_a;
    dbs_found_b += found_b;
    successes += all_a && found_b;
  }
  std::ostringstream d;
  d << successes << "/100 constructions (need >= 90); beam search mode-A only in " << bs_only_a
    << ", diverse search reached mode B in " << dbs_found_b;
  return {successes >= 90, d.str()};
}

double mean_distinct2(const std::vector<Hypothesis>& list) {
  return distinct_n(std::span<const Hypothesis>(list), 2);
}

Result distinct_direction() {
  std::mt19937_64 rng(66);
  constexpr std::size_t B = 6;
  double sum_bs = 0, sum_dbs = 0;
  for (int i = 0; i < 50; ++i) {
    const auto lm = testing::random_ngram_lm(rng, 30, 200, 2, 0.05);
    const auto bs = beam_search(lm, {}, config(B, 1, 0.0, 12));
    const auto dbs = diverse_beam_search(lm, {}, config(B, B, 0.5, 12), DiversitySpec{});
    sum_bs += mean_distinct2(bs);
    sum_dbs += mean_distinct2(dbs.flattened_hypotheses());
  }
  const double margin = (sum_dbs - sum_bs) / 50.0;
  std::ostringstream d;
  d << "mean distinct-2 bs " << sum_bs / 50 << ", dbs " << sum_dbs / 50 << ", margin " << margin;
  return {margin > 0.0, d.str()};
}

Result metric_examples() {
  using W = std::vector<std::string>;
  auto w = [](const char* s) { return split_tokens(s); };
  std::vector<std::string> failed;
  auto check = [&](bool ok, const char* name) {
    if (!ok) failed.emplace_back(name);
  };
  check(sentence_bleu(w("a b c d"), std::vector<W>{w("a b c d")}) == 1.0, "bleu-identical");
  check(sentence_bleu(w("a b"), std::vector<W>{w("c d")}) == 0.0, "bleu-disjoint");
  check(std::abs(sentence_bleu(w("a a a"), std::vector<W>{w("a b")}) - 0.381) <= 1e-3, "bleu-smoothed");
  const std::vector<double> v{0.2, 0.5, 0.3};
  check(oracle_at_k(v, 1) == 0.2, "oracle@1");
  check(oracle_at_k(v, 2) == 0.5, "oracle@2");
  check(oracle_at_k(v, 10) == 0.5, "oracle-clamp");
  const std::vector<W> ab_ac{w("a b"), w("a c")};
  const std::vector<W> ab_ab{w("a b"), w("a b")};
  check(distinct_n(ab_ac, 1) == 0.75, "distinct-1");
  check(distinct_n(ab_ac, 2) == 0.5, "distinct-2");
  check(distinct_n(ab_ab, 1) == 0.5, "distinct-dup");
  std::string d = "9 examples";
  for (const auto& f : failed) d += ", failed " + f;
  return {failed.empty(), d};
}

Result runtime_parity() {
  std::mt19937_64 rng(88);
  const auto lm = testing::random_ngram_lm(rng, 200, 2000, 3, 0.01);
  const auto& vocab = lm.vocab();
  std::vector<DecodeContext> prompts;
  for (int i = 0; i < 1000; ++i) {
    DecodeContext ctx;
    const std::size_t len = 1 + rng() % 2;
    for (std::size_t j = 0; j < len; ++j) ctx.tokens.push_back(kNumReserved + static_cast<TokenId>(rng() % 200));
    ctx.text = decode_tokens(vocab, ctx.tokens);
    prompts.push_back(std::move(ctx));
  }
  const auto bs_cfg = config(20, 1, 0.0, 15);
  const auto dbs_cfg = config(20, 20, 0.5, 15);
  double sink = 0.0;
  auto time_bs = [&] {
    const auto start = Clock::now();
    for (const auto& p : prompts) sink += beam_search(lm, p, bs_cfg).front().logprob;
    return seconds_since(start);
  };
  auto time_dbs = [&] {
    const auto start = Clock::now();
    for (const auto& p : prompts) sink += diverse_beam_search(lm, p, dbs_cfg, DiversitySpec{}).groups[0][0].logprob;
    return seconds_since(start);
  };
  double best_bs = 1e300, best_dbs = 1e300;
  for (int rep = 0; rep < 3; ++rep) {
    best_bs = std::min(best_bs, time_bs());
    best_dbs = std::min(best_dbs, time_dbs());
  }
  const double ratio = best_dbs / best_bs;
  std::ostringstream d;
  d << "1000 decodes: bs " << best_bs << " s, dbs " << best_dbs << " s, ratio " << ratio << " (limit 1.5)";
  if (!std::isfinite(sink)) d << " (non-finite scores)";
  return {ratio <= 1.5, d.str()};
}

Result repeatable_decode() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "divseq_acceptance_decode";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream corpus(dir / "corpus.txt");
    std::mt19937_64 rng(99);
    for (const auto& line : testing::random_corpus(rng, 40, 300, 3, 10)) corpus << line << '\n';
    std::ofstream prompts(dir / "prompts.txt");
    prompts << "w0 w1\nw3\n\nw7 w2 w1\nunknown words here\n";
  }
  auto run = [&](std::vector<std::string> args) {
    args.insert(args.begin(), "divseq");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    return cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  };
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  const std::string lm = (dir / "lm.bin").string();
  bool ok = run({"train-lm", (dir / "corpus.txt").string(), "--order", "3", "--add-k", "0.1", "--out", lm}) == 0;
  std::size_t compared = 0, differing = 0;
  const std::vector<std::vector<std::string>> variants{
      {"--method", "dbs", "-B", "6", "-G", "3", "--lambda", "0.5", "--diversity", "hamming"},
      {"--method", "dbs", "-B", "6", "-G", "6", "--lambda", "0.8", "--diversity", "cumulative"},
      {"--method", "dbs", "-B", "4", "-G", "2", "--lambda", "0.3", "--diversity", "ngram", "--div-n", "2"},
      {"--method", "bs", "-B", "5"},
      {"--method", "li2016", "-B", "4", "--gamma-li", "0.5"},
      {"--method", "mmi", "-B", "3", "--lambda-mmi", "0.4", "--u-lm", lm},
  };
  for (std::size_t v = 0; ok && v < variants.size(); ++v) {
    std::vector<std::string> outputs;
    for (const char* threads : {"1", "4", "4"}) {
      ::setenv("DIVSEQ_THREADS", threads, 1);
      const auto out = (dir / ("out" + std::to_string(outputs.size()) + ".jsonl")).string();
      std::vector<std::string> args{"decode", "--lm", lm, "--input", (dir / "prompts.txt").string(), "--out", out,
                                    "-T", "12"};
      args.insert(args.end(), variants[v].begin(), variants[v].end());
      ok = ok && run(args) == 0;
      outputs.push_back(slurp(out));
    }
    ++compared;
    differing += outputs[0].empty() || outputs[0] != outputs[1] || outputs[1] != outputs[2];
  }
  ::unsetenv("DIVSEQ_THREADS");
  fs::remove_all(dir);
  std::ostringstream d;
  d << compared << " configurations decoded 3x each, " << differing << " differing";
  return {ok && differing == 0 && compared == variants.size(), d.str()};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Result()>>> checks{
      {"one_group_equals_beam_search", one_group_equivalence},
      {"zero_lambda_decouples_groups", zero_strength_decoupling},
      {"beam_search_matches_exhaustive", oracle_equivalence},
      {"top1_at_least_narrow_beam", group_width_guarantee},
      {"mode_recovery", mode_recovery},
      {"distinct2_increases", distinct_direction},
      {"metric_examples", metric_examples},
      {"runtime_parity", runtime_parity},
      {"decode_is_repeatable", repeatable_decode},
  };
  int failures = 0;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    Result r{false, ""};
    try {
      r = checks[i].second();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    failures += !r.pass;
    std::printf("%zu %-32s %s  %s\n", i + 1, checks[i].first, r.pass ? "PASS" : "FAIL", r.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
