#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqorder/common.hpp"
#include "seqorder/corpus.hpp"
#include "seqorder/model.hpp"
#include "seqorder/sampler.hpp"
#include "seqorder/tokenizer.hpp"
#include "seqorder/train.hpp"

namespace seqorder {

// ---------------------------------------------------------------------------
// Synthetic corpus
//
// Document d owns a chain of distinct entities x0, x1, ..., xn. Sentence i is
//   "p<i> e<x_i> <verb> e<x_{i+1}> ."
// so a sentence's successor starts with the entity it ends with, and the
// position marker p<i> counts up through the document. Order between two
// sentences of a document is recoverable from text alone.
// ---------------------------------------------------------------------------

struct SyntheticSpec {
  std::size_t documents = 200;
  std::size_t sentences = 12;
  std::size_t entities = 400;
  std::size_t heldout_documents = 50;
  std::size_t pair_documents = 200;  // documents reserved for the pair task
  std::size_t pair_train = 1000;
  std::size_t pair_dev = 2000;
};

inline constexpr std::array<std::string_view, 4> kSyntheticVerbs = {"likes", "sees", "helps", "knows"};

struct PairItem {
  std::string a;
  std::string b;
  int label = 0;
  friend bool operator==(const PairItem&, const PairItem&) = default;
};

// Binary pair task: label 1 when B continues A's entity chain inside one
// document (B's subject is A's object), 0 when the two facts come from
// different documents. Swapping a positive pair keeps it a linked pair.
struct PairTaskDataset {
  std::vector<PairItem> train;
  std::vector<PairItem> dev;
  friend bool operator==(const PairTaskDataset&, const PairTaskDataset&) = default;
};

struct SyntheticCorpus {
  CorpusStore train;
  CorpusStore heldout;
  PairTaskDataset pairs;
  std::vector<std::vector<std::size_t>> chains;  // entity chain per training document
};

struct SyntheticSentence {
  std::size_t marker = 0;
  std::string subject;
  std::string object;
};

// Parses "p<i> e<a> <verb> e<b> ." back into its parts.
inline std::optional<SyntheticSentence> parse_synthetic(std::string_view sentence) {
  std::istringstream in{std::string(sentence)};
  std::string marker, subject, verb, object, dot;
  if (!(in >> marker >> subject >> verb >> object >> dot) || dot != "." || marker.size() < 2 || marker[0] != 'p')
    return std::nullopt;
  try {
    return SyntheticSentence{std::stoul(marker.substr(1)), subject, object};
  } catch (const std::logic_error&) {
    return std::nullopt;
  }
}

// The generator's own order rule: relation of B to A for two synthetic
// sentences, or nullopt when the text links them in no known way.
inline std::optional<OrderLabel> synthetic_relation(std::string_view a, std::string_view b) {
  const auto sa = parse_synthetic(a);
  const auto sb = parse_synthetic(b);
  if (!sa || !sb) return std::nullopt;
  const long diff = static_cast<long>(sb->marker) - static_cast<long>(sa->marker);
  if (diff == 1 && sa->object == sb->subject) return OrderLabel::IsNext;
  if (diff == -1 && sa->subject == sb->object) return OrderLabel::IsPrev;
  if (diff == 2) return OrderLabel::IsNextInadj;
  if (diff == -2) return OrderLabel::IsPrevInadj;
  return std::nullopt;
}

namespace synthetic_detail {

inline std::vector<std::size_t> draw_chain(std::size_t length, std::size_t pool, Rng& rng) {
  // Partial Fisher-Yates over the entity pool.
  std::vector<std::size_t> ids(pool);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  for (std::size_t i = 0; i < length; ++i) std::swap(ids[i], ids[i + rng.index(pool - i)]);
  ids.resize(length);
  return ids;
}

inline std::vector<std::string> render(const std::vector<std::size_t>& chain, Rng& rng) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i + 1 < chain.size(); ++i) {
    const auto verb = kSyntheticVerbs[rng.index(kSyntheticVerbs.size())];
    out.push_back(concat("p", i, " e", chain[i], " ", verb, " e", chain[i + 1], " ."));
  }
  return out;
}

inline std::vector<Document> make_documents(std::size_t count, const SyntheticSpec& spec, Rng& rng,
                                            std::vector<std::vector<std::size_t>>* chains) {
  std::vector<Document> docs;
  for (std::size_t d = 0; d < count; ++d) {
    auto chain = draw_chain(spec.sentences + 1, spec.entities, rng);
    docs.push_back(Document{d, render(chain, rng)});
    if (chains) chains->push_back(std::move(chain));
  }
  return docs;
}

// Balanced linked / unlinked pairs from a set of documents. Draws whose text
// is rejected by `keep` are redrawn, so exactly `count` pairs come back.
inline std::vector<PairItem> make_pairs(const std::vector<Document>& docs, std::size_t count, Rng& rng,
                                        const std::function<bool(const PairItem&)>& keep = {}) {
  std::vector<PairItem> out;
  std::size_t attempts = 0;
  while (out.size() < count) {
    if (++attempts > 100 * count + 1000) fatal("pair generator cannot find ", count, " admissible pairs");
    const bool positive = out.size() % 2 == 0;
    const std::size_t da = rng.index(docs.size());
    const auto& sa = docs[da].sentences;
    PairItem item;
    if (positive) {
      const std::size_t k = rng.index(sa.size() - 1);
      item = PairItem{sa[k], sa[k + 1], 1};
    } else {
      std::size_t db = rng.index(docs.size() - 1);
      if (db >= da) ++db;
      const auto& sb = docs[db].sentences;
      item = PairItem{sa[rng.index(sa.size())], sb[rng.index(sb.size())], 0};
    }
    if (!keep || keep(item)) out.push_back(std::move(item));
  }
  // Shuffle so labels are not interleaved.
  for (std::size_t i = out.size(); i > 1; --i) std::swap(out[i - 1], out[rng.index(i)]);
  return out;
}

}  // namespace synthetic_detail

inline SyntheticCorpus make_synthetic_corpus(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.sentences < 3) fatal("synthetic documents need at least 3 sentences");
  if (spec.documents < 2) fatal("synthetic corpus needs at least 2 documents");
  if (spec.entities < spec.sentences + 1)
    fatal("entity vocabulary of ", spec.entities, " cannot hold a chain of ", spec.sentences + 1, " distinct entities");
  if ((spec.pair_train || spec.pair_dev) && spec.pair_documents < 4)
    fatal("pair task needs at least 4 documents");

  Rng rng(seed, 0);
  SyntheticCorpus out;
  out.train = CorpusStore(synthetic_detail::make_documents(spec.documents, spec, rng, &out.chains));
  Rng held_rng(seed, 1);
  if (spec.heldout_documents > 0)
    out.heldout = CorpusStore(synthetic_detail::make_documents(spec.heldout_documents, spec, held_rng, nullptr));

  if (spec.pair_train || spec.pair_dev) {
    Rng pair_rng(seed, 2);
    auto docs = synthetic_detail::make_documents(spec.pair_documents, spec, pair_rng, nullptr);
    const std::size_t half = docs.size() / 2;
    const std::vector<Document> train_docs(docs.begin(), docs.begin() + static_cast<std::ptrdiff_t>(half));
    const std::vector<Document> dev_docs(docs.begin() + static_cast<std::ptrdiff_t>(half), docs.end());
    out.pairs.train = synthetic_detail::make_pairs(train_docs, spec.pair_train, pair_rng);
    std::set<std::string> seen;
    for (const auto& p : out.pairs.train) {
      seen.insert(p.a);
      seen.insert(p.b);
    }
    // Dev pairs never reuse a training sentence.
    out.pairs.dev = synthetic_detail::make_pairs(dev_docs, spec.pair_dev, pair_rng,
                                                 [&](const PairItem& p) { return !seen.count(p.a) && !seen.count(p.b); });
  }
  return out;
}

inline void save_pair_dataset(const PairTaskDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fatal("cannot write file ", path.string());
  out << "split\tlabel\tsentence_a\tsentence_b\n";
  for (const auto* split : {&ds.train, &ds.dev})
    for (const auto& p : *split) out << (split == &ds.train ? "train" : "dev") << '\t' << p.label << '\t' << p.a << '\t' << p.b << '\n';
  if (!out.flush()) fatal("write failure on ", path.string());
}

inline PairTaskDataset load_pair_dataset(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  PairTaskDataset ds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1 || line.empty()) continue;
    std::vector<std::string> f;
    std::size_t pos = 0;
    for (std::size_t tab; (tab = line.find('\t', pos)) != std::string::npos; pos = tab + 1) f.push_back(line.substr(pos, tab - pos));
    f.push_back(line.substr(pos));
    if (f.size() != 4 || (f[1] != "0" && f[1] != "1") || (f[0] != "train" && f[0] != "dev"))
      fatal("malformed pair dataset line ", lineno, " in ", path.string());
    (f[0] == "train" ? ds.train : ds.dev).push_back(PairItem{f[2], f[3], f[1] == "1" ? 1 : 0});
  }
  if (ds.train.empty() || ds.dev.empty()) fatal("pair dataset ", path.string(), " needs train and dev rows");
  return ds;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct ProbeReport {
  std::string scheme;
  std::size_t runs = 1;
  std::size_t n = 0;
  double accuracy_original = 0.0;
  std::optional<double> accuracy_swapped;
  std::optional<double> delta;  // accuracy_original - accuracy_swapped
  std::vector<std::pair<std::string, double>> per_label_accuracy;
  std::vector<std::pair<std::string, std::size_t>> per_label_count;
};

// Flat key-value JSON, keys in fixed order:
//   scheme, runs, n, accuracy_original, accuracy_swapped, delta,
//   per_label_accuracy.<label>..., per_label_count.<label>...
inline std::string report_to_json(const ProbeReport& r) {
  nlohmann::ordered_json j;
  j["scheme"] = r.scheme;
  j["runs"] = r.runs;
  j["n"] = r.n;
  j["accuracy_original"] = r.accuracy_original;
  j["accuracy_swapped"] = r.accuracy_swapped ? nlohmann::ordered_json(*r.accuracy_swapped) : nullptr;
  j["delta"] = r.delta ? nlohmann::ordered_json(*r.delta) : nullptr;
  for (const auto& [label, acc] : r.per_label_accuracy) j["per_label_accuracy." + label] = acc;
  for (const auto& [label, count] : r.per_label_count) j["per_label_count." + label] = count;
  return j.dump(2) + "\n";
}

inline ProbeReport report_from_json(const std::string& text) {
  const auto j = nlohmann::ordered_json::parse(text);
  ProbeReport r;
  r.scheme = j.at("scheme").get<std::string>();
  r.runs = j.at("runs").get<std::size_t>();
  r.n = j.at("n").get<std::size_t>();
  r.accuracy_original = j.at("accuracy_original").get<double>();
  if (!j.at("accuracy_swapped").is_null()) r.accuracy_swapped = j.at("accuracy_swapped").get<double>();
  if (!j.at("delta").is_null()) r.delta = j.at("delta").get<double>();
  for (const auto& [key, value] : j.items()) {
    if (key.rfind("per_label_accuracy.", 0) == 0) r.per_label_accuracy.emplace_back(key.substr(19), value.get<double>());
    if (key.rfind("per_label_count.", 0) == 0) r.per_label_count.emplace_back(key.substr(16), value.get<std::size_t>());
  }
  return r;
}

inline void save_report(const ProbeReport& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fatal("cannot write file ", path.string());
  out << report_to_json(r);
  if (!out.flush()) fatal("write failure on ", path.string());
}

// ---------------------------------------------------------------------------
// Order classification accuracy
// ---------------------------------------------------------------------------

inline std::vector<std::size_t> predict_classes(const ModelParams& params, std::span<const PairExample> examples,
                                                std::size_t batch_size = 64) {
  std::vector<std::size_t> out;
  out.reserve(examples.size());
  Rng unused(0);
  for (std::size_t i = 0; i < examples.size(); i += batch_size) {
    const auto chunk = examples.subspan(i, std::min(batch_size, examples.size() - i));
    const Logits l = forward(params, chunk, false, unused);
    for (std::size_t r = 0; r < chunk.size(); ++r)
      out.push_back(predict_from_logits(std::span<const double>(l.order.row(r), l.order.cols())).cls);
  }
  return out;
}

// Accuracy of predicted classes against each example's expected class
// (the label's class, or the smoothed-target argmax for PNSMTH in-adjacent
// labels).
inline ProbeReport score_order_predictions(std::span<const PairExample> examples,
                                           std::span<const std::size_t> predicted) {
  if (examples.empty()) fatal("order accuracy needs at least one example");
  if (predicted.size() != examples.size()) throw ProgrammingError("prediction count mismatch");
  const OrderScheme scheme = examples.front().scheme;
  ProbeReport r;
  r.scheme = std::string(scheme_name(scheme.kind));
  r.n = examples.size();
  std::map<OrderLabel, std::pair<std::size_t, std::size_t>> per;  // hits, count
  std::size_t hits = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const bool ok = predicted[i] == expected_class(examples[i].label, scheme);
    hits += ok;
    auto& [h, c] = per[examples[i].label];
    h += ok;
    ++c;
  }
  r.accuracy_original = static_cast<double>(hits) / static_cast<double>(r.n);
  for (const OrderLabel label : kAllLabels) {
    const auto it = per.find(label);
    if (it == per.end()) continue;
    r.per_label_accuracy.emplace_back(label_name(label), static_cast<double>(it->second.first) / static_cast<double>(it->second.second));
    r.per_label_count.emplace_back(label_name(label), it->second.second);
  }
  return r;
}

inline ProbeReport order_accuracy(const ModelParams& params, std::span<const PairExample> examples) {
  if (examples.empty()) fatal("order accuracy needs at least one example");
  const auto predicted = predict_classes(params, examples);
  return score_order_predictions(examples, predicted);
}

// ---------------------------------------------------------------------------
// Swap probe
// ---------------------------------------------------------------------------

struct FinetuneConfig {
  std::size_t epochs = 3;
  double lr = 2e-5;
  std::size_t batch_size = 32;
  double warmup_fraction = 0.10;
  double weight_decay = 0.01;
  bool train_encoder = true;
  std::size_t runs = 1;
  std::uint64_t seed = 0;
};

namespace probe_detail {

struct EncodedPairs {
  std::vector<PairExample> examples;  // target is a placeholder; labels below
  std::vector<TokenId> labels;
};

inline EncodedPairs encode_pairs(const std::vector<PairItem>& items, const Vocab& vocab, const ModelConfig& cfg,
                                 bool swapped) {
  EncodedPairs out;
  for (const auto& item : items) {
    const TokenSeq a = vocab.encode(item.a);
    const TokenSeq b = vocab.encode(item.b);
    auto packed = swapped ? pack_pair(b, a, cfg.max_position) : pack_pair(a, b, cfg.max_position);
    PairExample ex;
    ex.tokens = std::move(packed.tokens);
    ex.segment_ids = std::move(packed.segment_ids);
    ex.target.assign(cfg.num_order_classes, 0.0);
    ex.target[0] = 1.0;
    out.examples.push_back(std::move(ex));
    out.labels.push_back(static_cast<TokenId>(item.label));
  }
  return out;
}

struct PairHead {
  Tensor weight;
  Tensor bias;
};

// Binary logits from the pooled CLS state through a pair head.
inline Var pair_logits(Tape& tape, const BoundParams& bound, const ModelConfig& cfg, const Batch& batch, Var w, Var b,
                       bool train, Rng& rng) {
  const EncoderOutputs out = encode(tape, bound, cfg, batch, train, rng);
  return ops::add_bias(ops::matmul(ops::dropout(out.pooled, cfg.dropout, rng, train), w), b);
}

// Per-example correctness of the pair head's argmax.
inline std::vector<bool> pair_hits(const ModelParams& params, const PairHead& head, const EncodedPairs& data,
                                   std::size_t batch_size) {
  std::vector<bool> hits;
  hits.reserve(data.examples.size());
  Rng unused(0);
  for (std::size_t i = 0; i < data.examples.size(); i += batch_size) {
    const std::size_t n = std::min(batch_size, data.examples.size() - i);
    const Batch batch = make_batch(std::span<const PairExample>(data.examples).subspan(i, n), params.config());
    Tape tape;
    const BoundParams bound(tape, params, false);
    const Var logits = pair_logits(tape, bound, params.config(), batch, tape.constant(head.weight),
                                   tape.constant(head.bias), false, unused);
    for (std::size_t r = 0; r < n; ++r) {
      const auto pred = predict_from_logits(std::span<const double>(logits.value().row(r), 2));
      hits.push_back(pred.cls == data.labels[i + r]);
    }
  }
  return hits;
}

inline double fraction(const std::vector<bool>& hits) {
  return static_cast<double>(std::count(hits.begin(), hits.end(), true)) / static_cast<double>(hits.size());
}

struct FinetuneResult {
  ModelParams params;
  PairHead head;
};

// Fine-tunes a fresh binary head (and optionally the encoder) with AdamW on
// the training split in original order.
inline FinetuneResult finetune(const ModelParams& pretrained, const EncodedPairs& train, const FinetuneConfig& cfg,
                               std::uint64_t seed) {
  FinetuneResult r{pretrained, PairHead{Tensor({pretrained.config().hidden, 2}), Tensor({2})}};
  Rng init(seed, 10);
  for (auto& v : r.head.weight.data()) v = pretrained.config().init_std * init.normal();
  Rng order_rng(seed, 11), dropout_rng(seed, 12);

  const std::size_t n = train.examples.size();
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  SchedulePlan plan = SchedulePlan::single_phase(cfg.epochs * steps_per_epoch, pretrained.config().max_position,
                                                 cfg.warmup_fraction);
  const OptimizerConfig opt{cfg.lr, 0.9, 0.999, cfg.weight_decay, 1e-6};

  std::vector<Tensor> m, v;
  for (const auto& [name, t] : r.params.entries()) {
    m.emplace_back(t.shape());
    v.emplace_back(t.shape());
  }
  Tensor hm_w(r.head.weight.shape()), hv_w(r.head.weight.shape()), hm_b({2}), hv_b({2});

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[order_rng.index(i)]);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, n - start);
      std::vector<PairExample> examples;
      std::vector<TokenId> labels;
      for (std::size_t k = 0; k < count; ++k) {
        examples.push_back(train.examples[order[start + k]]);
        labels.push_back(train.labels[order[start + k]]);
      }
      const Batch batch = make_batch(examples, r.params.config());
      Tape tape;
      const BoundParams bound(tape, r.params, cfg.train_encoder);
      const Var w = tape.leaf(r.head.weight);
      const Var b = tape.leaf(r.head.bias);
      const Var logits = pair_logits(tape, bound, r.params.config(), batch, w, b, true, dropout_rng);
      const Var loss = ops::cross_entropy_index(logits, labels);
      tape.backward(loss);

      ++step;
      const double lr = lr_at(step, plan, opt);
      adamw_update("pair_head.weight", r.head.weight, tape.grad(w), hm_w, hv_w, opt, lr, step, true);
      adamw_update("pair_head.bias", r.head.bias, tape.grad(b), hm_b, hv_b, opt, lr, step, false);
      if (cfg.train_encoder) {
        auto& entries = r.params.entries();
        for (std::size_t e = 0; e < entries.size(); ++e)
          adamw_update(entries[e].first, entries[e].second, tape.grad(bound[entries[e].first]), m[e], v[e], opt, lr,
                       step, ModelParams::decays(entries[e].first));
      }
    }
  }
  return r;
}

}  // namespace probe_detail

// Fine-tunes once per run on (A, B) order, then scores the dev split with the
// same fine-tuned weights on (A, B) and on (B, A). Accuracies are averaged
// over runs; run r uses seed + r for every random stream, so two
// checkpoints probed with the same seed see identical fine-tuning draws.
inline ProbeReport swap_probe(const ModelParams& params, const Vocab& vocab, const PairTaskDataset& dataset,
                              const FinetuneConfig& cfg, std::string scheme_label = "") {
  if (dataset.train.empty() || dataset.dev.empty()) fatal("swap probe needs train and dev pairs");
  if (cfg.runs == 0 || cfg.epochs == 0 || cfg.batch_size == 0) fatal("swap probe needs runs, epochs and batch size > 0");
  const auto train = probe_detail::encode_pairs(dataset.train, vocab, params.config(), false);
  const auto dev = probe_detail::encode_pairs(dataset.dev, vocab, params.config(), false);
  const auto dev_swapped = probe_detail::encode_pairs(dataset.dev, vocab, params.config(), true);

  ProbeReport report;
  report.scheme = std::move(scheme_label);
  report.runs = cfg.runs;
  report.n = dataset.dev.size();
  double orig = 0.0, swapped = 0.0;
  std::array<double, 2> label_acc{0.0, 0.0};
  std::array<std::size_t, 2> label_count{0, 0};
  for (const auto& item : dataset.dev) ++label_count[item.label];

  for (std::size_t run = 0; run < cfg.runs; ++run) {
    const auto tuned = probe_detail::finetune(params, train, cfg, cfg.seed + run);
    const auto hits = probe_detail::pair_hits(tuned.params, tuned.head, dev, 64);
    orig += probe_detail::fraction(hits);
    swapped += probe_detail::fraction(probe_detail::pair_hits(tuned.params, tuned.head, dev_swapped, 64));
    std::array<std::size_t, 2> label_hits{0, 0};
    for (std::size_t i = 0; i < hits.size(); ++i) label_hits[dev.labels[i]] += hits[i];
    for (int label = 0; label < 2; ++label)
      if (label_count[label] > 0) label_acc[label] += static_cast<double>(label_hits[label]) / static_cast<double>(label_count[label]);
  }
  const double runs = static_cast<double>(cfg.runs);
  report.accuracy_original = orig / runs;
  report.accuracy_swapped = swapped / runs;
  report.delta = report.accuracy_original - *report.accuracy_swapped;
  const std::array<const char*, 2> names = {"unlinked", "linked"};
  for (int label = 0; label < 2; ++label) {
    if (label_count[label] == 0) continue;
    report.per_label_accuracy.emplace_back(names[label], label_acc[label] / runs);
    report.per_label_count.emplace_back(names[label], label_count[label]);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Whole-model gradient check
// ---------------------------------------------------------------------------

// Full-loss gradient check on a tiny encoder over a synthetic batch.
inline double full_loss_grad_check(std::size_t layers, std::size_t heads, std::size_t hidden, std::size_t batch_size,
                                    std::uint64_t seed, double eps = 1e-5) {
  SyntheticSpec spec;
  spec.documents = 6;
  spec.sentences = 4;
  spec.entities = 12;
  spec.heldout_documents = 0;
  spec.pair_train = spec.pair_dev = 0;
  const SyntheticCorpus syn = make_synthetic_corpus(spec, seed);
  const Vocab vocab = build_vocab(syn.train, 64);
  const EncodedCorpus corpus = encode_corpus(syn.train, vocab);
  MaskingConfig masking;
  masking.select_rate = 0.3;
  const OrderScheme scheme{SchemeKind::PNSMTH};
  PairSampler sampler(corpus, SamplerConfig{scheme, 16, masking, vocab.size()}, Rng(seed, 3));
  std::vector<PairExample> batch;
  while (batch.size() < batch_size) {
    auto ex = sampler.sample();
    // Mix a short pair in so padding and the key mask are exercised.
    if (batch.size() == 1) ex = make_example(corpus, scheme, OrderLabel::IsNext, {0, 0}, {0, 1}, 9);
    batch.push_back(std::move(ex));
  }
  if (std::all_of(batch.begin(), batch.end(), [](const auto& e) { return e.mlm_positions.empty(); }))
    fatal("gradient check batch has no masked positions");

  ModelConfig cfg;
  cfg.layers = layers;
  cfg.heads = heads;
  cfg.hidden = hidden;
  cfg.ffn = 2 * hidden;
  cfg.vocab_size = vocab.size();
  cfg.max_position = 16;
  cfg.num_order_classes = scheme.num_classes();
  cfg.init_std = 0.5;  // larger weights keep every path's gradient well above round-off
  Rng init(seed, 4);
  ModelParams params = ModelParams::initialize(cfg, init);

  Rng unused(0);
  const StepResult r = evaluate_loss(params, batch, false, unused, true);
  std::vector<Tensor*> points;
  std::vector<const Tensor*> grads;
  for (auto& [name, t] : params.entries()) {
    points.push_back(&t);
    grads.push_back(&r.grads.at(name));
  }
  const auto loss = [&] { return evaluate_loss(params, batch, false, unused, false).total; };
  return grad_check_tensors(loss, points, grads, eps);
}

}  // namespace seqorder
