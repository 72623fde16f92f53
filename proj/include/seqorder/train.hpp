#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "seqorder/common.hpp"
#include "seqorder/model.hpp"
#include "seqorder/sampler.hpp"

namespace seqorder {

struct OptimizerConfig {
  double lr_max = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double eps = 1e-6;
  double clip_norm = 1.0;  // global gradient-norm cap; 0 disables

  void validate() const {
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) fatal("AdamW betas must lie in (0, 1)");
    if (weight_decay < 0.0) fatal("weight_decay must be >= 0");
    if (!(lr_max >= 0.0)) fatal("lr_max must be >= 0");
    if (!(eps > 0.0)) fatal("AdamW eps must be > 0");
    if (!(clip_norm >= 0.0)) fatal("clip_norm must be >= 0");
  }
};

struct Phase {
  std::size_t steps = 0;
  std::size_t max_seq_len = 128;
  friend bool operator==(const Phase&, const Phase&) = default;
};

struct SchedulePlan {
  std::size_t total_steps = 0;
  double warmup_fraction = 0.10;
  std::vector<Phase> phases;

  // Two-phase full-scale recipe (128 then 512 tokens).
  static SchedulePlan full_scale_preset() { return SchedulePlan{90'000, 0.10, {{50'000, 128}, {40'000, 512}}}; }

  static SchedulePlan single_phase(std::size_t steps, std::size_t max_seq_len, double warmup = 0.10) {
    return SchedulePlan{steps, warmup, {{steps, max_seq_len}}};
  }

  std::size_t max_seq_len() const {
    std::size_t m = 0;
    for (const auto& p : phases) m = std::max(m, p.max_seq_len);
    return m;
  }

  // Phase index active for the update that produces `step` + 1.
  std::size_t phase_of(std::size_t step) const {
    std::size_t end = 0;
    for (std::size_t i = 0; i < phases.size(); ++i) {
      end += phases[i].steps;
      if (step < end) return i;
    }
    return phases.empty() ? 0 : phases.size() - 1;
  }

  void validate() const {
    if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) fatal("warmup fraction must lie in (0, 1)");
    std::size_t sum = 0;
    for (const auto& p : phases) {
      if (p.max_seq_len < 8) fatal("phase max_seq_len must be at least 8");
      sum += p.steps;
    }
    if (sum != total_steps) fatal("phase steps sum to ", sum, " but total_steps is ", total_steps);
    if (phases.empty()) fatal("schedule needs at least one phase");
  }
};

// Linear warmup to lr_max over the first warmup_fraction of steps, then
// linear decay to 0 at total_steps.
inline double lr_at(std::size_t step, const SchedulePlan& plan, const OptimizerConfig& opt) {
  if (step > plan.total_steps) throw ProgrammingError(concat("step ", step, " beyond total_steps ", plan.total_steps));
  if (plan.total_steps == 0) return 0.0;
  const double total = static_cast<double>(plan.total_steps);
  const double warmup = plan.warmup_fraction * total;
  const double s = static_cast<double>(step);
  if (s <= warmup) return opt.lr_max * s / warmup;
  return opt.lr_max * (total - s) / (total - warmup);
}

struct TrainState {
  std::size_t step = 0;
  ModelParams params;
  std::vector<Tensor> first_moment;   // aligned with params.entries()
  std::vector<Tensor> second_moment;
  Rng sampler_rng;
  Rng dropout_rng;

  static TrainState fresh(ModelParams params, std::uint64_t seed) {
    TrainState s;
    s.params = std::move(params);
    for (const auto& [name, t] : s.params.entries()) {
      s.first_moment.emplace_back(t.shape());
      s.second_moment.emplace_back(t.shape());
    }
    s.sampler_rng = Rng(seed, 1);
    s.dropout_rng = Rng(seed, 2);
    return s;
  }
};

// Bias-corrected Adam moment update of one tensor at (1-based) step t, then
// decoupled decay p <- p - lr * weight_decay * p when `decay` is set.
inline void adamw_update(const std::string& name, Tensor& p, const Tensor& g, Tensor& m, Tensor& v,
                         const OptimizerConfig& opt, double lr, std::size_t t, bool decay) {
  if (g.shape() != p.shape()) throw ProgrammingError("gradient shape mismatch for " + name);
  for (std::size_t k = 0; k < g.size(); ++k)
    if (!std::isfinite(g[k])) fatal("non-finite gradient in ", name, " at step ", t);
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
  decay = decay && opt.weight_decay > 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    m[k] = opt.beta1 * m[k] + (1.0 - opt.beta1) * g[k];
    v[k] = opt.beta2 * v[k] + (1.0 - opt.beta2) * g[k] * g[k];
    p[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + opt.eps);
    if (decay) p[k] -= lr * opt.weight_decay * p[k];
  }
}

// Rescales all gradients together so their joint L2 norm is at most max_norm.
// Returns the norm before clipping. Non-finite norms are left for the
// optimizer's own check to report.
inline double clip_global_norm(NamedGrads& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (std::size_t k = 0; k < g.size(); ++k) sq += g[k] * g[k];
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && std::isfinite(norm) && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& [name, g] : grads)
      for (std::size_t k = 0; k < g.size(); ++k) g[k] *= scale;
  }
  return norm;
}

// One AdamW update over all parameters; advances state.step.
inline void adamw_step(TrainState& state, const NamedGrads& grads, const OptimizerConfig& opt, double lr) {
  const std::size_t t = state.step + 1;
  auto& entries = state.params.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& [name, p] = entries[i];
    const auto it = grads.find(name);
    if (it == grads.end()) throw ProgrammingError("missing gradient for " + name);
    adamw_update(name, p, it->second, state.first_moment[i], state.second_moment[i], opt, lr, t,
                 ModelParams::decays(name));
  }
  state.step = t;
}

inline Checkpoint to_checkpoint(const TrainState& state) {
  Checkpoint ck = to_checkpoint(state.params);
  ck.meta.emplace_back("step", std::to_string(state.step));
  ck.meta.emplace_back("sampler_rng", state.sampler_rng.state());
  ck.meta.emplace_back("dropout_rng", state.dropout_rng.state());
  const auto& entries = state.params.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    ck.tensors.emplace_back("adam.m." + entries[i].first, state.first_moment[i]);
    ck.tensors.emplace_back("adam.v." + entries[i].first, state.second_moment[i]);
  }
  return ck;
}

inline TrainState train_state_from_checkpoint(const Checkpoint& ck) {
  TrainState s;
  s.params = params_from_checkpoint(ck);
  const auto step = ck.get("step");
  const auto srng = ck.get("sampler_rng");
  const auto drng = ck.get("dropout_rng");
  if (!step || !srng || !drng) fatal("checkpoint does not carry training state");
  s.step = std::stoul(*step);
  s.sampler_rng.restore(*srng);
  s.dropout_rng.restore(*drng);
  for (const auto& [name, t] : s.params.entries()) {
    for (auto* dst : {&s.first_moment, &s.second_moment}) {
      const std::string key = (dst == &s.first_moment ? "adam.m." : "adam.v.") + name;
      const auto it = std::find_if(ck.tensors.begin(), ck.tensors.end(), [&](const auto& e) { return e.first == key; });
      if (it == ck.tensors.end()) fatal("checkpoint lacks optimizer tensor ", key);
      if (it->second.shape() != t.shape()) fatal("optimizer tensor ", key, " has wrong shape");
      dst->push_back(it->second);
    }
  }
  return s;
}

struct TrainConfig {
  OrderScheme scheme;
  ModelConfig model;
  OptimizerConfig opt;
  SchedulePlan plan;
  MaskingConfig masking;
  std::size_t batch_size = 32;
  std::size_t metrics_every = 20;
  std::uint64_t seed = 0;
};

struct MetricRow {
  std::size_t step = 0;
  double lr = 0.0;
  double mlm_loss = 0.0;
  double order_loss = 0.0;
  double order_acc = 0.0;

  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

inline constexpr std::string_view kMetricsHeader = "step,lr,mlm_loss,order_loss,order_acc";

inline std::string format_metric_row(const MetricRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g,%.10g", r.step, r.lr, r.mlm_loss, r.order_loss, r.order_acc);
  return buf;
}

// Fraction of rows whose argmax matches the example's expected class.
inline double batch_order_accuracy(const Tensor& order_logits, std::span<const PairExample> examples) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto pred = predict_from_logits(std::span<const double>(order_logits.row(i), order_logits.cols()));
    if (pred.cls == expected_class(examples[i].label, examples[i].scheme)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(examples.size());
}

// Drives pre-training over an encoded corpus. Deterministic given the
// config seed; resumable from a TrainState checkpoint.
class Trainer {
 public:
  Trainer(const EncodedCorpus& corpus, TrainConfig cfg, std::optional<TrainState> resume = std::nullopt)
      : corpus_(&corpus), cfg_(std::move(cfg)) {
    cfg_.opt.validate();
    cfg_.plan.validate();
    cfg_.masking.validate();
    if (cfg_.batch_size == 0) fatal("batch size must be positive");
    if (cfg_.metrics_every == 0) fatal("metrics cadence must be positive");
    cfg_.model.num_order_classes = cfg_.scheme.num_classes();
    cfg_.model.max_position = std::max(cfg_.model.max_position, cfg_.plan.max_seq_len());
    if (resume) {
      state_ = std::move(*resume);
      if (!(state_.params.config() == cfg_.model)) fatal("checkpoint model config differs from the run config");
      if (state_.step > cfg_.plan.total_steps) fatal("checkpoint step ", state_.step, " beyond total_steps");
    } else {
      Rng init(cfg_.seed, 0);
      state_ = TrainState::fresh(ModelParams::initialize(cfg_.model, init), cfg_.seed);
    }
  }

  const TrainConfig& config() const { return cfg_; }
  const TrainState& state() const { return state_; }
  bool done() const { return state_.step >= cfg_.plan.total_steps; }

  // Every step's metrics, metrics cadence ignored.
  const std::vector<MetricRow>& history() const { return history_; }

  MetricRow step() {
    if (done()) throw ProgrammingError("training already finished");
    const Phase& phase = cfg_.plan.phases[cfg_.plan.phase_of(state_.step)];
    // Sampler re-instantiated per phase length; its stream lives in the state.
    PairSampler sampler(*corpus_, SamplerConfig{cfg_.scheme, phase.max_seq_len, cfg_.masking, cfg_.model.vocab_size},
                        state_.sampler_rng);
    const std::vector<PairExample> batch = sampler.sample(cfg_.batch_size);
    state_.sampler_rng = sampler.rng();

    StepResult r = evaluate_loss(state_.params, batch, true, state_.dropout_rng, true);
    clip_global_norm(r.grads, cfg_.opt.clip_norm);
    const double lr = lr_at(state_.step + 1, cfg_.plan, cfg_.opt);
    adamw_step(state_, r.grads, cfg_.opt, lr);

    MetricRow row{state_.step, lr, r.mlm, r.order, batch_order_accuracy(r.order_logits, batch)};
    history_.push_back(row);
    return row;
  }

  // Runs to completion writing metrics.csv and checkpoints into out_dir:
  // phase-<i>.ckpt after each non-final phase, model.ckpt at the end.
  void run(const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    const auto metrics_path = out_dir / "metrics.csv";
    std::ofstream metrics(metrics_path, std::ios::binary);
    if (!metrics) fatal("cannot write file ", metrics_path.string());
    metrics << kMetricsHeader << '\n';
    metrics.flush();
    std::size_t boundary = 0;
    std::vector<std::size_t> phase_ends;
    for (const auto& p : cfg_.plan.phases) phase_ends.push_back(boundary += p.steps);

    while (!done()) {
      const MetricRow row = step();
      if (row.step % cfg_.metrics_every == 0) {
        metrics << format_metric_row(row) << '\n';
        if (!metrics.flush()) fatal("write failure on ", metrics_path.string());
      }
      for (std::size_t i = 0; i + 1 < phase_ends.size(); ++i)
        if (row.step == phase_ends[i]) save_state(out_dir / ("phase-" + std::to_string(i + 1) + ".ckpt"));
    }
    save_state(out_dir / "model.ckpt");
  }

  void save_state(const std::filesystem::path& path) const {
    Checkpoint ck = to_checkpoint(state_);
    ck.meta.emplace_back("scheme", std::string(scheme_name(cfg_.scheme.kind)));
    save_checkpoint(path, ck);
  }

 private:
  const EncodedCorpus* corpus_;
  TrainConfig cfg_;
  TrainState state_;
  std::vector<MetricRow> history_;
};

// Full pre-training run; returns the final parameters.
inline ModelParams pretrain(const CorpusStore& store, const Vocab& vocab, const TrainConfig& cfg,
                            const std::filesystem::path& out_dir) {
  const EncodedCorpus corpus = encode_corpus(store, vocab);
  TrainConfig c = cfg;
  c.model.vocab_size = vocab.size();
  Trainer trainer(corpus, c);
  trainer.run(out_dir);
  return trainer.state().params;
}

}  // namespace seqorder
