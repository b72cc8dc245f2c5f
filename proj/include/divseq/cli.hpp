#pragma once

// Command-line front end. Kept header-only so tests can drive commands
// in-process; tools/divseq.cpp only forwards main() here.
//
// Exit codes: 0 success, 1 I/O or data error, 2 usage or configuration error.

#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "divseq/core.hpp"
#include "divseq/embeddings.hpp"
#include "divseq/eval.hpp"
#include "divseq/lm_codec.hpp"
#include "divseq/ngram_lm.hpp"
#include "divseq/search.hpp"

namespace divseq::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitIo = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kJsonlVersion = 1;

inline int exit_code_for(Errc code) {
  switch (code) {
    case Errc::NonDivisibleBeam:
    case Errc::NegativeStrength:
    case Errc::BadTemperature:
    case Errc::ZeroLength:
    case Errc::ZeroBeam:
    case Errc::BadN:
    case Errc::BadOrder:
    case Errc::BadSmoothing:
    case Errc::SearchSpaceTooLarge:
      return kExitUsage;
    default:
      return kExitIo;
  }
}

// Thrown for flag problems detected after CLI11 parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot read '" + path + "'");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes to `path`, or to `fallback` when the path is empty.
inline void write_output(const std::string& path, const std::string& text, std::ostream& fallback) {
  if (path.empty()) {
    fallback << text;
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot write '" + path + "'");
  out << text;
  if (!out) throw Error(Errc::Io, "write to '" + path + "' failed");
}

inline std::size_t thread_budget() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("DIVSEQ_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) n = std::min(n, static_cast<std::size_t>(v));
  }
  return n;
}

// Runs fn(i) for i in [0, count) on up to thread_budget() threads. The first
// exception (lowest index) is rethrown after all workers stop.
template <class Fn>
void parallel_for(std::size_t count, Fn&& fn) {
  const std::size_t workers = std::min(thread_budget(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline std::vector<double> parse_double_list(const std::string& s, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError(flag + ": '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw UsageError(flag + " must not be empty");
  return out;
}

inline std::vector<std::size_t> parse_size_list(const std::string& s, const std::string& flag) {
  std::vector<std::size_t> out;
  for (double d : parse_double_list(s, flag)) {
    if (d < 1 || d != std::floor(d)) throw UsageError(flag + " needs positive integers");
    out.push_back(static_cast<std::size_t>(d));
  }
  return out;
}

// Shortest form that round-trips; used for labels in TSV output.
inline std::string format_label(double x) {
  std::ostringstream ss;
  ss << x;
  return ss.str();
}

// Flags shared by decode and sweep.
struct DecodeFlags {
  std::string lm_path;
  std::string u_lm_path;
  std::string method = "dbs";
  std::size_t beam_width = 6;
  std::size_t groups = 1;
  double lambda = 0.5;
  std::string diversity = "hamming";
  double gamma_li = 0.0;
  double lambda_mmi = 0.0;
  double temperature = 1.0;
  std::size_t div_n = 2;
  std::size_t max_len = 20;
  std::string embeddings_path;
  std::string input_path;
  std::string out_path;
  bool length_normalize = false;

  void attach(CLI::App& app, bool with_grid_axes) {
    app.add_option("--lm", lm_path, "n-gram model file")->required();
    app.add_option("--u-lm", u_lm_path, "unconditioned model for --method mmi");
    if (!with_grid_axes) {
      app.add_option("--method", method, "bs | dbs | li2016 | mmi | exhaustive");
      app.add_option("-G,--groups", groups, "number of groups");
      app.add_option("--lambda", lambda, "diversity strength");
    }
    app.add_option("-B,--beam", beam_width, "beam width");
    app.add_option("--diversity", diversity, "hamming | cumulative | ngram | embedding");
    app.add_option("--gamma-li", gamma_li, "intra-sibling rank penalty");
    app.add_option("--lambda-mmi", lambda_mmi, "weight of the unconditioned model");
    app.add_option("--Gamma", temperature, "cumulative diversity temperature");
    app.add_option("--div-n", div_n, "n for n-gram diversity");
    app.add_option("-T,--max-len", max_len, "maximum output length");
    app.add_option("--embeddings", embeddings_path, "word2vec text file for embedding diversity");
    app.add_option("--input", input_path, "prompts, one per line (default: one empty prompt)");
    app.add_option("--out", out_path, "output path (default: stdout)");
    app.add_flag("--length-normalize", length_normalize, "rank final lists by logprob / length");
  }

  DecodeConfig config() const {
    DecodeConfig cfg;
    auto m = parse_method(method);
    if (!m) throw UsageError("unknown --method '" + method + "'");
    auto d = parse_diversity(diversity);
    if (!d) throw UsageError("unknown --diversity '" + diversity + "'");
    cfg.method = *m;
    cfg.diversity = *d;
    cfg.beam_width = beam_width;
    cfg.groups = groups;
    cfg.lambda = lambda;
    cfg.gamma_li = gamma_li;
    cfg.lambda_mmi = lambda_mmi;
    cfg.temperature = temperature;
    cfg.div_ngram_n = div_n;
    cfg.max_len = max_len;
    cfg.length_normalize = length_normalize;
    return cfg;
  }

  // Requirements that depend on the method, checked before any I/O.
  void check_resources(const DecodeConfig& cfg) const {
    if (cfg.method == Method::Mmi && u_lm_path.empty()) throw UsageError("--method mmi needs --u-lm");
    if (cfg.method == Method::DiverseBeamSearch && cfg.diversity == DiversityKind::Embedding &&
        embeddings_path.empty()) {
      throw UsageError("--diversity embedding needs --embeddings");
    }
  }
};

// Models and inputs loaded once per command.
struct Loaded {
  std::optional<NGramLM> lm;
  std::optional<NGramLM> u_lm;
  std::optional<EmbeddingTable> embeddings;
  std::vector<DecodeContext> inputs;
};

inline Loaded load_inputs(const DecodeFlags& flags, bool need_u_lm, bool need_embeddings) {
  Loaded l;
  l.lm.emplace(load_lm(flags.lm_path));
  if (need_u_lm) l.u_lm.emplace(load_lm(flags.u_lm_path, &l.lm->vocab()));
  if (need_embeddings) {
    l.embeddings.emplace(load_embeddings(read_file(flags.embeddings_path), l.lm->vocab()).table);
  }
  if (flags.input_path.empty()) {
    l.inputs.emplace_back();
  } else {
    for (const auto& line : read_lines(flags.input_path)) {
      l.inputs.push_back(DecodeContext{line, encode(l.lm->vocab(), line)});
    }
  }
  return l;
}

inline std::vector<GroupedRankedList> decode_all(const Loaded& l, const DecodeConfig& cfg) {
  std::vector<GroupedRankedList> results(l.inputs.size());
  DecodeResources<NGramLM> res{l.u_lm ? &*l.u_lm : nullptr, l.embeddings ? &*l.embeddings : nullptr};
  parallel_for(l.inputs.size(), [&](std::size_t i) { results[i] = decode(*l.lm, l.inputs[i], cfg, res); });
  return results;
}

// One JSON object per hypothesis, in the decoder's final ranking.
inline std::string to_jsonl(const Vocab& vocab, const DecodeConfig& cfg,
                            const std::vector<GroupedRankedList>& results) {
  std::string out;
  for (std::size_t i = 0; i < results.size(); ++i) {
    for (const auto& e : results[i].flattened(cfg.length_normalize)) {
      nlohmann::ordered_json j;
      j["v"] = kJsonlVersion;
      j["input_id"] = i;
      j["method"] = method_name(cfg.method);
      j["group"] = e.group + 1;
      j["rank_in_group"] = e.rank_in_group + 1;
      j["tokens"] = decode_tokens(vocab, e.hyp->tokens);
      j["logprob"] = e.hyp->logprob;
      if (cfg.method == Method::Mmi) j["objective"] = e.hyp->score;
      out += j.dump();
      out += '\n';
    }
  }
  return out;
}

inline int cmd_train_lm(const std::string& corpus_path, std::size_t order, double add_k,
                        const std::string& out_path, std::ostream& out) {
  if (order < 1) throw UsageError("--order must be >= 1");
  if (!(add_k >= 0)) throw UsageError("--add-k must be >= 0");
  const auto corpus = read_lines(corpus_path);
  const auto vocab = vocab_from_corpus(corpus);
  const auto lm = train_ngram_lm(corpus, order, add_k, vocab);
  save_lm(lm, out_path);
  out << "vocab_size\t" << vocab.size() << '\n';
  for (std::size_t n = 1; n <= order; ++n) out << n << "-grams\t" << lm.num_ngrams(n - 1) << '\n';
  return kExitOk;
}

inline int cmd_decode(const DecodeFlags& flags, std::ostream& out) {
  const DecodeConfig cfg = validate_config(flags.config());
  flags.check_resources(cfg);
  const bool use_embeddings =
      cfg.method == Method::DiverseBeamSearch && cfg.diversity == DiversityKind::Embedding;
  const Loaded l = load_inputs(flags, cfg.method == Method::Mmi, use_embeddings);
  const auto results = decode_all(l, cfg);
  write_output(flags.out_path, to_jsonl(l.lm->vocab(), cfg, results), out);
  return kExitOk;
}

struct HypLine {
  std::size_t group;
  std::vector<std::string> words;  // EOS stripped
  double logprob;
};

inline std::map<std::size_t, std::vector<HypLine>> read_hypotheses(const std::string& path,
                                                                   std::string& method) {
  std::map<std::size_t, std::vector<HypLine>> by_id;
  std::size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      HypLine h;
      h.group = j.at("group").get<std::size_t>();
      h.logprob = j.at("logprob").get<double>();
      for (auto& w : split_tokens(j.at("tokens").get<std::string>())) {
        if (w != kEosString && w != kBosString) h.words.push_back(std::move(w));
      }
      if (method.empty()) method = j.at("method").get<std::string>();
      by_id[j.at("input_id").get<std::size_t>()].push_back(std::move(h));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::CorruptPayload, path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return by_id;
}

inline std::map<std::size_t, std::vector<std::vector<std::string>>> read_references(const std::string& path) {
  std::map<std::size_t, std::vector<std::vector<std::string>>> by_id;
  std::size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      by_id[j.at("input_id").get<std::size_t>()].push_back(split_tokens(j.at("tokens").get<std::string>()));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::CorruptPayload, path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return by_id;
}

// First id present in one map but not the other, if any.
template <class A, class B>
std::optional<std::size_t> first_misaligned_id(const std::map<std::size_t, A>& a,
                                               const std::map<std::size_t, B>& b) {
  std::set<std::size_t> ids;
  for (const auto& [id, _] : a) ids.insert(id);
  for (const auto& [id, _] : b) ids.insert(id);
  for (std::size_t id : ids) {
    if (!a.contains(id) || !b.contains(id)) return id;
  }
  return std::nullopt;
}

struct EvalFlags {
  std::string hyp_path;
  std::string refs_path;
  std::string metric = "bleu";
  std::string ks = "1,5,10,20";
  std::string lambda_label = "NA";
  std::string diversity_label = "NA";
  std::string out_path;
};

inline int cmd_eval(const EvalFlags& flags, std::ostream& out) {
  if (flags.metric != "bleu") throw UsageError("only --metric bleu is supported");
  const auto ks = parse_size_list(flags.ks, "-k");
  std::string method;
  const auto hyps = read_hypotheses(flags.hyp_path, method);
  const auto refs = read_references(flags.refs_path);
  if (hyps.empty()) throw Error(Errc::EmptyList, "no hypotheses in '" + flags.hyp_path + "'");
  if (auto bad = first_misaligned_id(hyps, refs)) {
    throw Error(Errc::LengthMismatch, "input_id " + std::to_string(*bad) +
                                          " is not present in both hypothesis and reference files");
  }
  MetricReport report;
  report.method = method;
  report.ks = ks;
  report.lambda = flags.lambda_label;
  report.diversity = flags.diversity_label;
  std::size_t max_b = 0;
  std::size_t max_g = 0;
  for (const auto& [id, list] : hyps) {
    std::vector<std::vector<std::string>> words;
    std::vector<double> logprobs;
    for (const auto& h : list) {
      words.push_back(h.words);
      logprobs.push_back(h.logprob);
      max_g = std::max(max_g, h.group);
    }
    max_b = std::max(max_b, list.size());
    report.add(list_metrics(words, logprobs, &refs.at(id), ks));
  }
  report.beam_width = std::to_string(max_b);
  report.groups = std::to_string(max_g);
  write_output(flags.out_path, tsv_header(ks) + '\n' + tsv_row(report) + '\n', out);
  return kExitOk;
}

struct SweepFlags {
  DecodeFlags decode;
  std::string lambda_grid;
  std::string g_grid;
  std::string refs_path;
  std::string ks = "1,5,10,20";
};

inline int cmd_sweep(const SweepFlags& flags, std::ostream& out) {
  const auto lambdas = parse_double_list(flags.lambda_grid, "--lambda-grid");
  const auto group_counts = parse_size_list(flags.g_grid, "--G-grid");
  const auto ks = parse_size_list(flags.ks, "-k");
  DecodeFlags base = flags.decode;
  base.method = "dbs";
  std::vector<DecodeConfig> cells;
  for (double lambda : lambdas) {
    for (std::size_t g : group_counts) {
      DecodeConfig cfg = base.config();
      cfg.lambda = lambda;
      cfg.groups = g;
      cells.push_back(validate_config(cfg));
    }
  }
  base.check_resources(cells.front());

  const Loaded l = load_inputs(base, false, cells.front().diversity == DiversityKind::Embedding);
  std::optional<std::map<std::size_t, std::vector<std::vector<std::string>>>> refs;
  if (!flags.refs_path.empty()) {
    refs = read_references(flags.refs_path);
    std::map<std::size_t, bool> ids;
    for (std::size_t i = 0; i < l.inputs.size(); ++i) ids[i] = true;
    if (auto bad = first_misaligned_id(ids, *refs)) {
      throw Error(Errc::LengthMismatch, "input_id " + std::to_string(*bad) +
                                            " is not present in both inputs and references");
    }
  }

  std::string tsv = tsv_header(ks) + '\n';
  const auto& vocab = l.lm->vocab();
  for (const auto& cfg : cells) {
    const auto results = decode_all(l, cfg);
    MetricReport report;
    report.method = std::string(method_name(cfg.method));
    report.beam_width = std::to_string(cfg.beam_width);
    report.groups = std::to_string(cfg.groups);
    report.lambda = format_label(cfg.lambda);
    report.diversity = std::string(diversity_name(cfg.diversity));
    report.ks = ks;
    for (std::size_t i = 0; i < results.size(); ++i) {
      std::vector<std::vector<std::string>> words;
      std::vector<double> logprobs;
      for (const auto& e : results[i].flattened(cfg.length_normalize)) {
        std::vector<std::string> w;
        for (TokenId t : words_of(*e.hyp)) w.push_back(vocab.lookup(t));
        words.push_back(std::move(w));
        logprobs.push_back(e.hyp->logprob);
      }
      report.add(list_metrics(words, logprobs, refs ? &refs->at(i) : nullptr, ks));
    }
    if (!refs) report.oracle.reset();
    tsv += tsv_row(report) + '\n';
  }
  write_output(flags.decode.out_path, tsv, out);
  return kExitOk;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Diverse beam search decoding toolkit"};
  app.require_subcommand(1);

  std::string corpus_path;
  std::size_t order = 3;
  double add_k = 0.1;
  std::string lm_out;
  auto* train = app.add_subcommand("train-lm", "train an add-k n-gram model");
  train->add_option("corpus", corpus_path, "training text, one sentence per line")->required();
  train->add_option("--order", order, "n-gram order");
  train->add_option("--add-k", add_k, "add-k smoothing constant");
  train->add_option("--out", lm_out, "model file to write")->required();

  DecodeFlags decode_flags;
  auto* decode_cmd = app.add_subcommand("decode", "decode prompts and write JSONL hypotheses");
  decode_flags.attach(*decode_cmd, false);

  EvalFlags eval_flags;
  auto* eval_cmd = app.add_subcommand("eval", "score hypotheses against references");
  eval_cmd->add_option("--hyp", eval_flags.hyp_path, "decode output (JSONL)")->required();
  eval_cmd->add_option("--refs", eval_flags.refs_path, "references (JSONL: input_id, tokens)")->required();
  eval_cmd->add_option("--metric", eval_flags.metric, "oracle metric (bleu)");
  eval_cmd->add_option("-k", eval_flags.ks, "comma-separated oracle cut-offs");
  eval_cmd->add_option("--lambda", eval_flags.lambda_label, "label for the lambda column");
  eval_cmd->add_option("--diversity", eval_flags.diversity_label, "label for the diversity column");
  eval_cmd->add_option("--out", eval_flags.out_path, "TSV output (default: stdout)");

  SweepFlags sweep_flags;
  auto* sweep_cmd = app.add_subcommand("sweep", "grid over lambda and G with diverse beam search");
  sweep_flags.decode.attach(*sweep_cmd, true);
  sweep_cmd->add_option("--lambda-grid", sweep_flags.lambda_grid, "comma-separated lambdas")->required();
  sweep_cmd->add_option("--G-grid", sweep_flags.g_grid, "comma-separated group counts")->required();
  sweep_cmd->add_option("--refs", sweep_flags.refs_path, "references for oracle columns");
  sweep_cmd->add_option("-k", sweep_flags.ks, "comma-separated oracle cut-offs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) return cmd_train_lm(corpus_path, order, add_k, lm_out, out);
    if (*decode_cmd) return cmd_decode(decode_flags, out);
    if (*eval_cmd) return cmd_eval(eval_flags, out);
    if (*sweep_cmd) return cmd_sweep(sweep_flags, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  }
  return kExitUsage;
}

}  // namespace divseq::cli
