#pragma once

// Single entry point for every pipeline stage. Settings resolve in order
// defaults < --config file < explicit flags, and the resolved set is written
// next to the stage output before any work starts.

#include <deque>
#include <filesystem>
#include <glob.h>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "seqorder/common.hpp"
#include "seqorder/corpus.hpp"
#include "seqorder/eval.hpp"
#include "seqorder/model.hpp"
#include "seqorder/parallel.hpp"
#include "seqorder/sampler.hpp"
#include "seqorder/tokenizer.hpp"
#include "seqorder/train.hpp"

namespace seqorder::cli {

namespace fs = std::filesystem;

// Usage problems (missing or malformed settings): exit code 1.
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

class RunConfig {
 public:
  void set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : entries_)
      if (k == key) {
        v = value;
        return;
      }
    entries_.emplace_back(key, value);
  }

  bool has(const std::string& key) const { return find(key) != nullptr && !find(key)->empty(); }

  const std::string& str(const std::string& key) const {
    const std::string* v = find(key);
    if (!v || v->empty()) throw UsageError("missing required flag --" + flag_name(key));
    return *v;
  }

  std::size_t size(const std::string& key) const {
    const std::string& v = str(key);
    try {
      std::size_t used = 0;
      const long long n = std::stoll(v, &used);
      if (used != v.size() || n < 0) throw std::invalid_argument(v);
      return static_cast<std::size_t>(n);
    } catch (const std::logic_error&) {
      throw UsageError("flag --" + flag_name(key) + " expects a non-negative integer, got '" + v + "'");
    }
  }

  double real(const std::string& key) const {
    const std::string& v = str(key);
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::logic_error&) {
      throw UsageError("flag --" + flag_name(key) + " expects a number, got '" + v + "'");
    }
  }

  bool flag(const std::string& key) const {
    const std::string* v = find(key);
    return v && (*v == "1" || *v == "true" || *v == "yes");
  }

  // key=value lines; '#' starts a comment.
  void load_file(const fs::path& path) {
    std::istringstream in(read_file(path));
    std::size_t lineno = 0;
    for (std::string line; std::getline(in, line);) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty() || line.front() == '[') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw UsageError(concat("config ", path.string(), " line ", lineno, ": expected key=value"));
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
      std::replace(key.begin(), key.end(), '-', '_');
      set(key, value);
    }
  }

  std::string text() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
    return out;
  }

  void write(const fs::path& path) const {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) fatal("cannot write file ", path.string());
    out << text();
    if (!out.flush()) fatal("write failure on ", path.string());
  }

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

 private:
  static std::string flag_name(std::string key) {
    std::replace(key.begin(), key.end(), '_', '-');
    return key;
  }

  const std::string* find(const std::string& key) const {
    for (const auto& [k, v] : entries_)
      if (k == key) return &v;
    return nullptr;
  }

  std::vector<std::pair<std::string, std::string>> entries_;
};

struct Setting {
  std::string key;  // flag is --key with '_' -> '-'
  std::string default_value;
  std::string help;
};

// One subcommand: its declared settings and the values given on the command line.
struct Command {
  std::string name;
  CLI::App* app = nullptr;
  std::vector<Setting> settings;
  std::map<std::string, std::vector<std::string>> given;
  std::string config_file;

  void declare(CLI::App& parent, const std::string& description, std::vector<Setting> s) {
    settings = std::move(s);
    app = parent.add_subcommand(name, description);
    app->add_option("--config", config_file, "key=value settings file; flags override it");
    for (const auto& st : settings) {
      std::string flag = st.key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      auto* opt = app->add_option("--" + flag, given[st.key], st.help)->type_name("VALUE");
      if (st.key != "input") opt->expected(1);
      if (!st.default_value.empty()) opt->description(st.help + " (default " + st.default_value + ")");
    }
  }

  RunConfig resolve(std::uint64_t threads) const {
    RunConfig rc;
    for (const auto& st : settings) rc.set(st.key, st.default_value);
    if (!config_file.empty()) rc.load_file(config_file);
    for (const auto& st : settings) {
      const auto& values = given.at(st.key);
      if (values.empty()) continue;
      std::string joined;
      for (std::size_t i = 0; i < values.size(); ++i) joined += (i ? "," : "") + values[i];
      rc.set(st.key, joined);
    }
    rc.set("threads", std::to_string(threads));
    return rc;
  }
};

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  for (std::size_t cut; (cut = s.find(sep, pos)) != std::string::npos; pos = cut + 1) out.push_back(s.substr(pos, cut - pos));
  out.push_back(s.substr(pos));
  return out;
}

inline std::vector<fs::path> expand_inputs(const std::string& joined) {
  std::vector<fs::path> files;
  for (const auto& pattern : split(joined, ',')) {
    if (pattern.empty()) continue;
    glob_t g{};
    const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
    if (rc == 0) {
      for (std::size_t i = 0; i < g.gl_pathc; ++i) files.emplace_back(g.gl_pathv[i]);
    } else {
      files.emplace_back(pattern);  // let ingest report the missing file
    }
    globfree(&g);
  }
  if (files.empty()) throw UsageError("--input matched no files");
  return files;
}

inline OrderScheme scheme_setting(const RunConfig& rc) {
  try {
    return parse_scheme(rc.str("scheme"));
  } catch (const FatalError& e) {
    throw UsageError(e.what());
  }
}

inline std::vector<Phase> parse_phases(const std::string& text) {
  std::vector<Phase> phases;
  for (const auto& part : split(text, ',')) {
    const auto colon = part.find(':');
    try {
      if (colon == std::string::npos) throw std::invalid_argument(part);
      phases.push_back(Phase{std::stoul(part.substr(colon + 1)), std::stoul(part.substr(0, colon))});
    } catch (const std::logic_error&) {
      throw UsageError("--phases expects len:steps[,len:steps...], got '" + text + "'");
    }
  }
  return phases;
}

// Stages ------------------------------------------------------------------

inline int run_ingest(const RunConfig& rc, std::ostream& out) {
  const auto inputs = expand_inputs(rc.str("input"));
  const std::size_t min_sentences = rc.size("min_sentences");
  if (min_sentences < 1) throw UsageError("--min-sentences must be >= 1");
  const fs::path output = rc.str("output");
  rc.write(output.string() + ".config.resolved");
  const CorpusStore store = filter_short_documents(ingest(inputs), min_sentences);
  save_store(store, output);
  out << "documents=" << store.size() << " sentences=" << store.sentence_count() << "\n";
  return 0;
}

inline int run_build_vocab(const RunConfig& rc, std::ostream& out) {
  const fs::path store_path = rc.str("store");
  const std::size_t size = rc.size("size");
  const fs::path output = rc.str("output");
  rc.write(output.string() + ".config.resolved");
  const Vocab vocab = build_vocab(load_store(store_path), size);
  save_vocab(vocab, output);
  out << "vocab_size=" << vocab.size() << "\n";
  return 0;
}

inline int run_sample(const RunConfig& rc, std::ostream& out) {
  const fs::path store_path = rc.str("store");
  const fs::path vocab_path = rc.str("vocab");
  const OrderScheme scheme = scheme_setting(rc);
  const std::size_t max_len = rc.size("max_len");
  const std::size_t count = rc.size("count");
  const std::uint64_t seed = rc.size("seed");
  const std::size_t workers = rc.size("workers");
  MaskingConfig masking;
  masking.select_rate = rc.real("mask_rate");
  const fs::path output = rc.str("output");
  rc.write(output.string() + ".config.resolved");

  const Vocab vocab = load_vocab(vocab_path);
  const CorpusStore store = load_store(store_path);
  const EncodedCorpus corpus = encode_corpus(store, vocab);
  const auto examples = sample_examples(corpus, SamplerConfig{scheme, max_len, masking, vocab.size()}, count, seed, workers);
  save_examples(output, scheme, examples);
  out << "examples=" << examples.size() << "\n";
  return 0;
}

inline int run_pretrain(const RunConfig& rc, std::ostream& out) {
  const fs::path store_path = rc.str("store");
  const fs::path vocab_path = rc.str("vocab");
  const OrderScheme scheme = scheme_setting(rc);
  const std::uint64_t seed = rc.size("seed");
  const fs::path out_dir = rc.str("out");

  TrainConfig cfg;
  cfg.scheme = scheme;
  cfg.seed = seed;
  // Model keys come from the same resolved settings (the --config file).
  for (const auto& [key, value] : rc.entries())
    if (!value.empty()) cfg.model.set(key, value);
  cfg.opt.lr_max = rc.real("lr");
  cfg.opt.weight_decay = rc.real("weight_decay");
  cfg.opt.clip_norm = rc.real("clip_norm");
  cfg.batch_size = rc.size("batch_size");
  cfg.metrics_every = rc.size("metrics_every");
  cfg.masking.select_rate = rc.real("mask_rate");

  std::vector<Phase> phases;
  if (rc.has("phases")) {
    phases = parse_phases(rc.str("phases"));
  } else {
    phases = {Phase{rc.size("steps"), cfg.model.max_position}};
  }
  std::size_t total = 0;
  for (const auto& p : phases) total += p.steps;
  if (rc.has("steps") && rc.size("steps") != total)
    throw UsageError(concat("--steps ", rc.size("steps"), " disagrees with --phases total ", total));
  cfg.plan = SchedulePlan{total, rc.real("warmup"), phases};

  fs::create_directories(out_dir);
  rc.write(out_dir / "config.resolved");

  const Vocab vocab = load_vocab(vocab_path);
  const CorpusStore store = load_store(store_path);
  const EncodedCorpus corpus = encode_corpus(store, vocab);
  cfg.model.vocab_size = vocab.size();
  std::optional<TrainState> resume;
  if (rc.has("resume")) resume = train_state_from_checkpoint(load_checkpoint(rc.str("resume")));
  Trainer trainer(corpus, cfg, std::move(resume));
  trainer.run(out_dir);
  out << "steps=" << trainer.state().step << " checkpoint=" << (out_dir / "model.ckpt").string() << "\n";
  return 0;
}

inline int run_eval_order(const RunConfig& rc, std::ostream& out) {
  const fs::path ckpt = rc.str("checkpoint");
  const fs::path examples_path = rc.str("examples");
  const fs::path report_path = rc.str("out");
  rc.write(report_path.string() + ".config.resolved");
  const ModelParams params = load_model(ckpt);
  const ExamplesFile file = load_examples(examples_path);
  if (file.scheme.num_classes() != params.config().num_order_classes)
    fatal("examples scheme ", scheme_name(file.scheme.kind), " does not match the checkpoint's ",
          params.config().num_order_classes, "-class head");
  const ProbeReport report = order_accuracy(params, file.examples);
  save_report(report, report_path);
  out << "accuracy=" << report.accuracy_original << "\n";
  return 0;
}

inline int run_probe_swap(const RunConfig& rc, std::ostream& out) {
  const fs::path ckpt = rc.str("checkpoint");
  const fs::path dataset_path = rc.str("dataset");
  const fs::path vocab_path = rc.str("vocab");
  const fs::path report_path = rc.str("out");
  FinetuneConfig ft;
  ft.runs = rc.size("runs");
  ft.seed = rc.size("seed");
  ft.epochs = rc.size("epochs");
  ft.lr = rc.real("lr");
  ft.batch_size = rc.size("batch_size");
  ft.train_encoder = !rc.flag("head_only");
  rc.write(report_path.string() + ".config.resolved");

  const Checkpoint ck = load_checkpoint(ckpt);
  const ModelParams params = params_from_checkpoint(ck);
  const ProbeReport report =
      swap_probe(params, load_vocab(vocab_path), load_pair_dataset(dataset_path), ft, ck.get("scheme").value_or(""));
  save_report(report, report_path);
  out << "accuracy_original=" << report.accuracy_original << " accuracy_swapped=" << *report.accuracy_swapped
      << " delta=" << *report.delta << "\n";
  return 0;
}

inline int run_make_synthetic(const RunConfig& rc, std::ostream& out) {
  SyntheticSpec spec;
  spec.documents = rc.size("docs");
  spec.sentences = rc.size("sentences");
  spec.entities = rc.size("entities");
  spec.heldout_documents = rc.size("heldout_docs");
  spec.pair_documents = rc.size("pair_docs");
  spec.pair_train = rc.size("pair_train");
  spec.pair_dev = rc.size("pair_dev");
  const std::uint64_t seed = rc.size("seed");
  const fs::path out_dir = rc.str("out");
  fs::create_directories(out_dir);
  rc.write(out_dir / "config.resolved");

  const SyntheticCorpus corpus = make_synthetic_corpus(spec, seed);
  const auto write_text = [](const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fatal("cannot write file ", path.string());
    f << text;
    if (!f.flush()) fatal("write failure on ", path.string());
  };
  write_text(out_dir / "corpus.txt", to_canonical_text(corpus.train));
  if (!corpus.heldout.empty()) write_text(out_dir / "heldout.txt", to_canonical_text(corpus.heldout));
  save_pair_dataset(corpus.pairs, out_dir / "pairs.tsv");
  out << "documents=" << corpus.train.size() << " sentences=" << corpus.train.sentence_count() << "\n";
  return 0;
}

inline int run_grad_check(const RunConfig& rc, std::ostream& out) {
  const double tolerance = rc.real("tolerance");
  const double err = full_loss_grad_check(rc.size("layers"), rc.size("heads"), rc.size("hidden"), rc.size("batch"),
                                           rc.size("seed"), rc.real("eps"));
  out << "max_relative_error=" << err << " tolerance=" << tolerance << "\n";
  if (!(err < tolerance)) fatal("gradient check failed: max relative error ", err, " >= ", tolerance);
  return 0;
}

// Entry point -------------------------------------------------------------

inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"seqorder: sentence-order pre-training toolkit"};
  app.require_subcommand(1);
  std::size_t threads = thread_budget();
  app.add_option("--threads", threads, "thread budget (default from SEQORDER_THREADS)");

  // CLI11 keeps pointers into each Command, so elements must not move.
  std::deque<Command> commands;
  const auto add = [&](const std::string& name, const std::string& description, std::vector<Setting> settings) {
    commands.emplace_back().name = name;
    commands.back().declare(app, description, std::move(settings));
  };
  add("ingest", "read sentence-per-line text into a document store",
      {{"input", "", "input files or glob patterns"},
       {"min_sentences", "1", "drop documents with fewer sentences"},
       {"output", "", "store path"}});
  add("build-vocab", "build a frequency vocabulary from a store",
      {{"store", "", "store path"}, {"size", "", "maximum vocabulary size incl. specials"}, {"output", "", "vocab path"}});
  add("sample", "materialize pre-training examples",
      {{"store", "", "store path"},
       {"vocab", "", "vocab path"},
       {"scheme", "pn3", "nsp2|pn3|pn5|pnsmth"},
       {"max_len", "128", "maximum packed length"},
       {"count", "", "number of examples"},
       {"seed", "", "random seed (required)"},
       {"workers", "1", "independent sampler streams"},
       {"mask_rate", "0.15", "MLM selection rate"},
       {"output", "", "examples path"}});
  add("pretrain", "pre-train the encoder with MLM and an order objective",
      {{"store", "", "store path"},
       {"vocab", "", "vocab path"},
       {"scheme", "pn3", "nsp2|pn3|pn5|pnsmth"},
       {"steps", "", "total optimizer steps"},
       {"warmup", "0.1", "warmup fraction of total steps"},
       {"phases", "", "len:steps[,len:steps...]"},
       {"seed", "", "random seed (required)"},
       {"out", "", "output directory"},
       {"lr", "1e-4", "peak learning rate"},
       {"weight_decay", "0.01", "decoupled weight decay"},
       {"clip_norm", "1.0", "global gradient-norm cap, 0 disables"},
       {"batch_size", "32", "examples per step"},
       {"metrics_every", "20", "metrics cadence in steps"},
       {"mask_rate", "0.15", "MLM selection rate"},
       {"resume", "", "training-state checkpoint to resume from"},
       {"layers", "2", "encoder layers"},
       {"heads", "4", "attention heads"},
       {"hidden", "64", "hidden size"},
       {"ffn", "256", "feed-forward size"},
       {"max_position", "128", "position embeddings (raised to the longest phase)"},
       {"dropout", "0.1", "dropout on all layers"},
       {"gelu", "tanh", "tanh|erf"},
       {"init_std", "0.02", "initializer standard deviation"}});
  add("eval-order", "order-classification accuracy on held-out examples",
      {{"checkpoint", "", "model checkpoint"}, {"examples", "", "examples file"}, {"out", "", "report path"}});
  add("probe-swap", "fine-tune a pair head and compare (A,B) vs (B,A) accuracy",
      {{"checkpoint", "", "model checkpoint"},
       {"dataset", "", "pair dataset (tsv)"},
       {"vocab", "", "vocab path"},
       {"runs", "5", "fine-tune runs to average"},
       {"seed", "", "random seed (required)"},
       {"epochs", "3", "fine-tune epochs"},
       {"lr", "2e-5", "fine-tune learning rate"},
       {"batch_size", "32", "fine-tune batch size"},
       {"head_only", "false", "freeze the encoder"},
       {"out", "", "report path"}});
  add("make-synthetic", "generate a synthetic order-learnable corpus and pair task",
      {{"docs", "200", "training documents"},
       {"sentences", "12", "sentences per document"},
       {"entities", "400", "entity vocabulary size"},
       {"heldout_docs", "50", "held-out documents"},
       {"pair_docs", "200", "documents for the pair task"},
       {"pair_train", "1000", "pair-task training pairs"},
       {"pair_dev", "2000", "pair-task dev pairs"},
       {"seed", "", "random seed (required)"},
       {"out", "", "output directory"}});
  add("grad-check", "finite-difference check of the full loss gradient",
      {{"layers", "2", "encoder layers"},
       {"heads", "2", "attention heads"},
       {"hidden", "16", "hidden size"},
       {"batch", "2", "batch size"},
       {"seed", "0", "random seed"},
       {"eps", "1e-5", "central-difference step"},
       {"tolerance", "1e-4", "maximum relative error"}});

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return 1;
  }

  set_thread_budget(threads);
  for (const auto& cmd : commands) {
    if (!cmd.app->parsed()) continue;
    try {
      const RunConfig rc = cmd.resolve(threads);
      if (cmd.name == "ingest") return run_ingest(rc, out);
      if (cmd.name == "build-vocab") return run_build_vocab(rc, out);
      if (cmd.name == "sample") return run_sample(rc, out);
      if (cmd.name == "pretrain") return run_pretrain(rc, out);
      if (cmd.name == "eval-order") return run_eval_order(rc, out);
      if (cmd.name == "probe-swap") return run_probe_swap(rc, out);
      if (cmd.name == "make-synthetic") return run_make_synthetic(rc, out);
      if (cmd.name == "grad-check") return run_grad_check(rc, out);
    } catch (const UsageError& e) {
      err << "usage error: " << cmd.name << ": " << e.what() << "\n";
      return 1;
    } catch (const FatalError& e) {
      err << "error: " << cmd.name << ": " << e.what() << "\n";
      return 2;
    } catch (const std::exception& e) {
      err << "error: " << cmd.name << ": " << e.what() << "\n";
      return 2;
    }
  }
  err << "usage error: no subcommand\n" << app.help();
  return 1;
}

}  // namespace seqorder::cli
