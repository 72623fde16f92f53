#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "seqorder/common.hpp"
#include "seqorder/numerics.hpp"
#include "seqorder/sampler.hpp"

namespace seqorder {

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t hidden = 64;
  std::size_t ffn = 256;
  std::size_t vocab_size = 0;
  std::size_t max_position = 128;
  std::size_t type_vocab = 2;
  std::size_t num_order_classes = 3;
  double dropout = 0.1;
  GeluKind gelu = GeluKind::Tanh;
  double init_std = 0.02;

  void validate() const {
    if (layers == 0 || heads == 0 || hidden == 0 || ffn == 0) fatal("model dimensions must be positive");
    if (hidden % heads != 0) fatal("hidden size ", hidden, " is not divisible by ", heads, " heads");
    if (vocab_size <= special::kCount) fatal("model vocab_size must exceed the ", special::kCount, " specials");
    if (type_vocab != 2) fatal("type_vocab must be 2");
    if (num_order_classes < 2) fatal("num_order_classes must be at least 2");
    if (dropout < 0.0 || dropout >= 1.0) fatal("dropout must lie in [0, 1)");
    if (max_position < 8) fatal("max_position must be at least 8");
  }

  // Key-value text, one `key=value` per line, fixed key order.
  std::vector<std::pair<std::string, std::string>> to_kv() const {
    std::ostringstream d, s;
    d.precision(17);
    d << dropout;
    s.precision(17);
    s << init_std;
    return {{"layers", std::to_string(layers)},
            {"heads", std::to_string(heads)},
            {"hidden", std::to_string(hidden)},
            {"ffn", std::to_string(ffn)},
            {"vocab_size", std::to_string(vocab_size)},
            {"max_position", std::to_string(max_position)},
            {"type_vocab", std::to_string(type_vocab)},
            {"num_order_classes", std::to_string(num_order_classes)},
            {"dropout", d.str()},
            {"gelu", gelu == GeluKind::Tanh ? "tanh" : "erf"},
            {"init_std", s.str()}};
  }

  // Applies recognized keys; returns false for keys it does not know.
  bool set(const std::string& key, const std::string& value) {
    try {
      if (key == "layers") layers = std::stoul(value);
      else if (key == "heads") heads = std::stoul(value);
      else if (key == "hidden") hidden = std::stoul(value);
      else if (key == "ffn") ffn = std::stoul(value);
      else if (key == "vocab_size") vocab_size = std::stoul(value);
      else if (key == "max_position") max_position = std::stoul(value);
      else if (key == "type_vocab") type_vocab = std::stoul(value);
      else if (key == "num_order_classes") num_order_classes = std::stoul(value);
      else if (key == "dropout") dropout = std::stod(value);
      else if (key == "init_std") init_std = std::stod(value);
      else if (key == "gelu") {
        if (value == "tanh") gelu = GeluKind::Tanh;
        else if (value == "erf") gelu = GeluKind::Erf;
        else fatal("gelu must be tanh or erf, got '", value, "'");
      } else {
        return false;
      }
    } catch (const std::logic_error&) {
      fatal("bad value '", value, "' for model key '", key, "'");
    }
    return true;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Named learnable tensors in a fixed creation order.
class ModelParams {
 public:
  ModelParams() = default;

  static ModelParams initialize(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    ModelParams p;
    p.config_ = cfg;
    const std::size_t H = cfg.hidden, F = cfg.ffn;
    const auto normal = [&](Shape shape) {
      Tensor t(std::move(shape));
      for (auto& v : t.data()) v = cfg.init_std * rng.normal();
      return t;
    };
    const auto ln = [&](const std::string& prefix) {
      p.add(prefix + ".gamma", Tensor({H}, 1.0));
      p.add(prefix + ".beta", Tensor({H}, 0.0));
    };
    const auto dense = [&](const std::string& prefix, std::size_t in, std::size_t out, bool bias = true) {
      p.add(prefix + ".weight", normal({in, out}));
      if (bias) p.add(prefix + ".bias", Tensor({out}, 0.0));
    };
    p.add("embeddings.token", normal({cfg.vocab_size, H}));
    p.add("embeddings.segment", normal({cfg.type_vocab, H}));
    p.add("embeddings.position", normal({cfg.max_position, H}));
    ln("embeddings.ln");
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const std::string pre = "layer." + std::to_string(l);
      dense(pre + ".attn.q", H, H);
      // No key bias: softmax over keys is invariant to it, so it would never train.
      dense(pre + ".attn.k", H, H, false);
      dense(pre + ".attn.v", H, H);
      dense(pre + ".attn.out", H, H);
      ln(pre + ".attn.ln");
      dense(pre + ".ffn.in", H, F);
      dense(pre + ".ffn.out", F, H);
      ln(pre + ".ffn.ln");
    }
    dense("pooler", H, H);
    dense("order_head", H, cfg.num_order_classes);
    dense("mlm.transform", H, H);
    ln("mlm.ln");
    p.add("mlm.output_bias", Tensor({cfg.vocab_size}, 0.0));
    return p;
  }

  // Expected name -> shape map for a config; a checkpoint must match exactly.
  static std::vector<std::pair<std::string, Shape>> layout(const ModelConfig& cfg) {
    Rng rng(0);
    ModelConfig tiny = cfg;
    ModelParams p = initialize(tiny, rng);
    std::vector<std::pair<std::string, Shape>> out;
    for (const auto& [name, t] : p.entries_) out.emplace_back(name, t.shape());
    return out;
  }

  const ModelConfig& config() const { return config_; }
  std::size_t size() const { return entries_.size(); }

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Tensor& at(const std::string& name) {
    const auto it = index_.find(name);
    if (it == index_.end()) throw ProgrammingError("no parameter named " + name);
    return entries_[it->second].second;
  }
  const Tensor& at(const std::string& name) const { return const_cast<ModelParams*>(this)->at(name); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.size();
    return n;
  }

  // Layer-norm affine pairs and biases are not weight-decayed.
  static bool decays(const std::string& name) {
    const auto ends_with = [&](std::string_view suffix) {
      return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    return !(ends_with(".bias") || ends_with("_bias") || ends_with(".gamma") || ends_with(".beta"));
  }

  static ModelParams from_entries(const ModelConfig& cfg, std::vector<std::pair<std::string, Tensor>> entries) {
    cfg.validate();
    ModelParams p;
    p.config_ = cfg;
    for (auto& [name, t] : entries) p.add(name, std::move(t));
    const auto expected = layout(cfg);
    if (expected.size() != p.entries_.size()) fatal("checkpoint has ", p.entries_.size(), " parameters, expected ", expected.size());
    for (const auto& [name, shape] : expected) {
      if (!p.contains(name)) fatal("checkpoint lacks parameter ", name);
      if (p.at(name).shape() != shape)
        fatal("parameter ", name, " has shape ", shape_str(p.at(name).shape()), ", expected ", shape_str(shape));
    }
    return p;
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    return a.config_ == b.config_ && a.entries_ == b.entries_;
  }

 private:
  void add(std::string name, Tensor t) {
    if (!index_.emplace(name, entries_.size()).second) fatal("duplicate parameter name ", name);
    entries_.emplace_back(std::move(name), std::move(t));
  }

  ModelConfig config_;
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Gradients keyed like ModelParams.
using NamedGrads = std::map<std::string, Tensor>;

// Padded, flattened batch ready for the encoder.
struct Batch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<TokenId> ids;        // [batch*seq], PAD beyond each length
  std::vector<TokenId> segments;
  std::vector<TokenId> positions;
  std::vector<std::uint8_t> valid;  // 1 for real tokens
  std::vector<std::size_t> cls_rows;
  std::vector<std::size_t> mlm_rows;
  std::vector<TokenId> mlm_labels;
  Tensor targets;                   // [batch, num_classes]
};

inline Batch make_batch(std::span<const PairExample> examples, const ModelConfig& cfg) {
  if (examples.empty()) throw ProgrammingError("empty batch");
  Batch b;
  b.batch = examples.size();
  for (const auto& ex : examples) b.seq = std::max(b.seq, ex.tokens.size());
  if (b.seq > cfg.max_position) fatal("sequence length ", b.seq, " exceeds max_position ", cfg.max_position);
  const std::size_t n = b.batch * b.seq;
  b.ids.assign(n, special::kPad);
  b.segments.assign(n, 0);
  b.positions.resize(n);
  b.valid.assign(n, 0);
  b.targets = Tensor({b.batch, cfg.num_order_classes});
  for (std::size_t i = 0; i < b.batch; ++i) {
    const auto& ex = examples[i];
    if (ex.target.size() != cfg.num_order_classes)
      fatal("example target has ", ex.target.size(), " classes, model has ", cfg.num_order_classes);
    const std::size_t base = i * b.seq;
    for (std::size_t t = 0; t < b.seq; ++t) b.positions[base + t] = static_cast<TokenId>(t);
    for (std::size_t t = 0; t < ex.tokens.size(); ++t) {
      if (ex.tokens[t] >= cfg.vocab_size) fatal("token id ", ex.tokens[t], " outside model vocabulary");
      b.ids[base + t] = ex.tokens[t];
      b.segments[base + t] = ex.segment_ids[t];
      b.valid[base + t] = 1;
    }
    b.cls_rows.push_back(base);
    for (std::size_t k = 0; k < ex.mlm_positions.size(); ++k) {
      b.mlm_rows.push_back(base + ex.mlm_positions[k]);
      b.mlm_labels.push_back(ex.mlm_labels[k]);
    }
    std::copy(ex.target.begin(), ex.target.end(), b.targets.row(i));
  }
  return b;
}

// Parameters placed on a tape as leaves.
class BoundParams {
 public:
  BoundParams(Tape& tape, const ModelParams& params, bool requires_grad) {
    for (const auto& [name, t] : params.entries()) vars_.emplace(name, tape.leaf(t, requires_grad));
  }
  Var operator[](const std::string& name) const {
    const auto it = vars_.find(name);
    if (it == vars_.end()) throw ProgrammingError("unbound parameter " + name);
    return it->second;
  }
  NamedGrads grads(Tape& tape) const {
    NamedGrads out;
    for (const auto& [name, v] : vars_) out.emplace(name, tape.grad(v));
    return out;
  }

 private:
  std::map<std::string, Var> vars_;
};

struct EncoderOutputs {
  Var sequence;                    // [batch*seq, hidden]
  Var pooled;                      // [batch, hidden], tanh(dense(CLS))
  Var order_logits;                // [batch, num_classes]
  std::optional<Var> mlm_logits;   // [masked, vocab]; absent with no masked positions
};

inline Var dense(const BoundParams& p, const std::string& prefix, Var x) {
  return ops::add_bias(ops::matmul(x, p[prefix + ".weight"]), p[prefix + ".bias"]);
}

inline Var norm(const BoundParams& p, const std::string& prefix, Var x) {
  return ops::layer_norm(x, p[prefix + ".gamma"], p[prefix + ".beta"]);
}

// The encoder, pooled order head and tied MLM head. Dropout is active only
// when `train` is set.
inline EncoderOutputs encode(Tape& tape, const BoundParams& p, const ModelConfig& cfg, const Batch& batch,
                             bool train, Rng& rng) {
  const double drop = cfg.dropout;
  Var x = ops::add(ops::add(ops::embedding_lookup(p["embeddings.token"], batch.ids),
                            ops::embedding_lookup(p["embeddings.segment"], batch.segments)),
                   ops::embedding_lookup(p["embeddings.position"], batch.positions));
  x = ops::dropout(norm(p, "embeddings.ln", x), drop, rng, train);

  const ops::AttentionLayout layout{batch.batch, batch.seq, cfg.heads};
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string pre = "layer." + std::to_string(l);
    const Var q = dense(p, pre + ".attn.q", x);
    const Var k = ops::matmul(x, p[pre + ".attn.k.weight"]);
    const Var v = dense(p, pre + ".attn.v", x);
    const Var ctx = ops::attention(q, k, v, layout, batch.valid, drop, rng, train);
    const Var attn_out = ops::dropout(dense(p, pre + ".attn.out", ctx), drop, rng, train);
    x = norm(p, pre + ".attn.ln", ops::add(x, attn_out));
    const Var hidden = ops::gelu(dense(p, pre + ".ffn.in", x), cfg.gelu);
    const Var ffn_out = ops::dropout(dense(p, pre + ".ffn.out", hidden), drop, rng, train);
    x = norm(p, pre + ".ffn.ln", ops::add(x, ffn_out));
  }

  EncoderOutputs out{x, x, x, std::nullopt};
  out.pooled = ops::tanh(dense(p, "pooler", ops::gather_rows(x, batch.cls_rows)));
  out.order_logits = dense(p, "order_head", ops::dropout(out.pooled, drop, rng, train));
  if (!batch.mlm_rows.empty()) {
    Var h = ops::gelu(dense(p, "mlm.transform", ops::gather_rows(x, batch.mlm_rows)), cfg.gelu);
    h = norm(p, "mlm.ln", h);
    // Output projection tied to the token embedding.
    out.mlm_logits = ops::add_bias(ops::matmul_bt(h, p["embeddings.token"]), p["mlm.output_bias"]);
  }
  (void)tape;
  return out;
}

struct LossVars {
  Var total;
  Var order;
  std::optional<Var> mlm;  // absent when the batch has no masked position
};

// Mean MLM cross entropy + mean soft-target order cross entropy, equally
// weighted.
inline LossVars loss(Tape& tape, const EncoderOutputs& out, const Batch& batch) {
  LossVars l{out.order_logits, ops::cross_entropy_soft(out.order_logits, batch.targets), std::nullopt};
  if (out.mlm_logits) {
    l.mlm = ops::cross_entropy_index(*out.mlm_logits, batch.mlm_labels);
    l.total = ops::add(*l.mlm, l.order);
  } else {
    l.total = ops::add(l.order, tape.constant(Tensor::scalar(0.0)));
  }
  return l;
}

// Counts batches without any masked position (MLM term taken as 0).
inline std::size_t& empty_mlm_batch_counter() {
  static thread_local std::size_t count = 0;
  return count;
}

struct StepResult {
  double total = 0.0;
  double mlm = 0.0;
  double order = 0.0;
  bool has_mlm = false;
  Tensor order_logits;
  NamedGrads grads;
};

// Forward + loss (+ backward when want_grads). Pure given (params, examples,
// train=false); with train=true dropout draws from rng.
inline StepResult evaluate_loss(const ModelParams& params, std::span<const PairExample> examples, bool train, Rng& rng,
                                bool want_grads) {
  const Batch batch = make_batch(examples, params.config());
  Tape tape;
  const BoundParams bound(tape, params, want_grads);
  const EncoderOutputs out = encode(tape, bound, params.config(), batch, train, rng);
  const LossVars l = loss(tape, out, batch);
  StepResult r;
  r.total = l.total.value().item();
  r.order = l.order.value().item();
  r.has_mlm = l.mlm.has_value();
  if (!r.has_mlm) ++empty_mlm_batch_counter();
  r.mlm = l.mlm ? l.mlm->value().item() : 0.0;
  r.order_logits = out.order_logits.value();
  if (want_grads) {
    tape.backward(l.total);
    r.grads = bound.grads(tape);
  }
  return r;
}

struct Logits {
  Tensor mlm;    // [masked, vocab] (empty shape when nothing is masked)
  Tensor order;  // [batch, num_classes]
};

inline Logits forward(const ModelParams& params, std::span<const PairExample> batch, bool train, Rng& rng) {
  const Batch b = make_batch(batch, params.config());
  Tape tape;
  const BoundParams bound(tape, params, false);
  const EncoderOutputs out = encode(tape, bound, params.config(), b, train, rng);
  return Logits{out.mlm_logits ? out.mlm_logits->value() : Tensor(), out.order_logits.value()};
}

struct OrderPrediction {
  std::size_t cls = 0;
  std::vector<double> probs;
};

// Softmax + argmax; ties go to the lowest index.
inline OrderPrediction predict_from_logits(std::span<const double> logits) {
  OrderPrediction p;
  p.probs.resize(logits.size());
  ops::softmax_row(logits.data(), p.probs.data(), logits.size());
  for (std::size_t c = 1; c < logits.size(); ++c)
    if (logits[c] > logits[p.cls]) p.cls = c;
  return p;
}

inline OrderPrediction predict_order(const ModelParams& params, const PairExample& example) {
  Rng unused(0);
  const Logits l = forward(params, std::span<const PairExample>(&example, 1), false, unused);
  return predict_from_logits(std::span<const double>(l.order.row(0), l.order.cols()));
}

// ---------------------------------------------------------------------------
// Checkpoint format
//
//   "SEQORDER-CHECKPOINT\n"
//   "version=1\n"
//   key=value lines (ModelConfig keys, then extra metadata)
//   "tensors=<n>\n"
//   "end\n"
//   n blocks: u32 name_len, name bytes, u32 ndim, u64 dims[ndim],
//             f64 data[prod(dims)]   (little-endian)
// ---------------------------------------------------------------------------
inline constexpr std::string_view kCheckpointMagic = "SEQORDER-CHECKPOINT";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  std::optional<std::string> get(const std::string& key) const {
    for (const auto& [k, v] : meta)
      if (k == key) return v;
    return std::nullopt;
  }
};

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  os << kCheckpointMagic << "\n"
     << "version=" << kCheckpointVersion << "\n";
  for (const auto& [k, v] : ck.meta) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw ProgrammingError("checkpoint metadata must be single-line key=value");
    os << k << "=" << v << "\n";
  }
  os << "tensors=" << ck.tensors.size() << "\nend\n";
  for (const auto& [name, t] : ck.tensors) {
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.ndim()));
    for (auto d : t.shape()) io::write_le<std::uint64_t>(os, d);
    for (double v : t.data()) io::write_le<double>(os, v);
  }
}

inline Checkpoint read_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kCheckpointMagic) fatal("not a checkpoint (bad magic)");
  Checkpoint ck;
  std::size_t n_tensors = 0;
  bool saw_version = false, saw_count = false;
  while (std::getline(is, line) && line != "end") {
    const auto eq = line.find('=');
    if (eq == std::string::npos) fatal("malformed checkpoint header line '", line, "'");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "version") {
      if (value != std::to_string(kCheckpointVersion)) fatal("unsupported checkpoint version ", value);
      saw_version = true;
    } else if (key == "tensors") {
      n_tensors = std::stoul(value);
      saw_count = true;
    } else {
      ck.meta.emplace_back(key, value);
    }
  }
  if (line != "end" || !saw_version || !saw_count) fatal("truncated checkpoint header");
  for (std::size_t i = 0; i < n_tensors; ++i) {
    const auto name_len = io::read_le<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) fatal("truncated checkpoint tensor name");
    const auto ndim = io::read_le<std::uint32_t>(is);
    Shape shape(ndim);
    for (auto& d : shape) d = io::read_le<std::uint64_t>(is);
    Tensor t(shape);
    for (auto& v : t.data()) v = io::read_le<double>(is);
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fatal("cannot write file ", path.string());
  write_checkpoint(out, ck);
  if (!out.flush()) fatal("write failure on ", path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fatal("cannot read file ", path.string());
  return read_checkpoint(in);
}

inline Checkpoint to_checkpoint(const ModelParams& params) {
  Checkpoint ck;
  ck.meta = params.config().to_kv();
  ck.tensors = params.entries();
  return ck;
}

inline ModelConfig config_from_checkpoint(const Checkpoint& ck) {
  ModelConfig cfg;
  for (const auto& [k, v] : cfg.to_kv()) {
    const auto value = ck.get(k);
    if (!value) fatal("checkpoint header lacks model key '", k, "'");
    cfg.set(k, *value);
  }
  return cfg;
}

// Model parameters from a model or training-state checkpoint; tensors
// outside the model layout (optimizer moments) are ignored.
inline ModelParams params_from_checkpoint(const Checkpoint& ck) {
  const ModelConfig cfg = config_from_checkpoint(ck);
  std::vector<std::pair<std::string, Tensor>> entries;
  for (const auto& [name, shape] : ModelParams::layout(cfg)) {
    const auto it = std::find_if(ck.tensors.begin(), ck.tensors.end(), [&](const auto& e) { return e.first == name; });
    if (it == ck.tensors.end()) fatal("checkpoint lacks parameter ", name);
    entries.push_back(*it);
  }
  return ModelParams::from_entries(cfg, std::move(entries));
}

inline void save_model(const std::filesystem::path& path, const ModelParams& params) {
  save_checkpoint(path, to_checkpoint(params));
}

inline ModelParams load_model(const std::filesystem::path& path) { return params_from_checkpoint(load_checkpoint(path)); }

}  // namespace seqorder
