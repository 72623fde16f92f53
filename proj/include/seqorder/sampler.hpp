#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "seqorder/common.hpp"
#include "seqorder/tokenizer.hpp"

namespace seqorder {

// Class index order is frozen: (IsNext, IsPrev, IsNextInadj, IsPrevInadj,
// DiffDoc), truncated per scheme.
enum class OrderLabel : std::uint8_t { IsNext = 0, IsPrev = 1, IsNextInadj = 2, IsPrevInadj = 3, DiffDoc = 4 };

inline constexpr std::array<OrderLabel, 5> kAllLabels = {OrderLabel::IsNext, OrderLabel::IsPrev,
                                                         OrderLabel::IsNextInadj,
                                                         OrderLabel::IsPrevInadj, OrderLabel::DiffDoc};

inline std::string_view label_name(OrderLabel label) {
  switch (label) {
    case OrderLabel::IsNext: return "IsNext";
    case OrderLabel::IsPrev: return "IsPrev";
    case OrderLabel::IsNextInadj: return "IsNextInadj";
    case OrderLabel::IsPrevInadj: return "IsPrevInadj";
    case OrderLabel::DiffDoc: return "DiffDoc";
  }
  throw ProgrammingError("bad OrderLabel");
}

// Label of the pair (B, A) given the label of (A, B).
inline OrderLabel mirrored(OrderLabel label) {
  switch (label) {
    case OrderLabel::IsNext: return OrderLabel::IsPrev;
    case OrderLabel::IsPrev: return OrderLabel::IsNext;
    case OrderLabel::IsNextInadj: return OrderLabel::IsPrevInadj;
    case OrderLabel::IsPrevInadj: return OrderLabel::IsNextInadj;
    case OrderLabel::DiffDoc: return OrderLabel::DiffDoc;
  }
  throw ProgrammingError("bad OrderLabel");
}

// Sentence offset of B relative to A for same-document labels.
inline int sentence_offset(OrderLabel label) {
  switch (label) {
    case OrderLabel::IsNext: return 1;
    case OrderLabel::IsPrev: return -1;
    case OrderLabel::IsNextInadj: return 2;
    case OrderLabel::IsPrevInadj: return -2;
    case OrderLabel::DiffDoc: break;
  }
  throw ProgrammingError("DiffDoc has no sentence offset");
}

enum class SchemeKind : std::uint8_t { NSP2 = 0, PN3 = 1, PN5 = 2, PNSMTH = 3 };

// Where PNSMTH puts the mass not assigned to the mapped class.
enum class ResidualMode : std::uint8_t { Uniform = 0, AllOnDiffDoc = 1 };

struct OrderScheme {
  SchemeKind kind = SchemeKind::PN3;
  double smoothing_factor = 0.8;
  ResidualMode residual = ResidualMode::Uniform;

  // Labels the sampler emits, uniformly.
  std::vector<OrderLabel> labels() const {
    switch (kind) {
      case SchemeKind::NSP2: return {OrderLabel::IsNext, OrderLabel::DiffDoc};
      case SchemeKind::PN3: return {OrderLabel::IsNext, OrderLabel::IsPrev, OrderLabel::DiffDoc};
      case SchemeKind::PN5:
      case SchemeKind::PNSMTH: return {kAllLabels.begin(), kAllLabels.end()};
    }
    throw ProgrammingError("bad SchemeKind");
  }

  // Output classes of the order head, in frozen order.
  std::vector<OrderLabel> classes() const {
    switch (kind) {
      case SchemeKind::NSP2: return {OrderLabel::IsNext, OrderLabel::DiffDoc};
      case SchemeKind::PN3:
      case SchemeKind::PNSMTH: return {OrderLabel::IsNext, OrderLabel::IsPrev, OrderLabel::DiffDoc};
      case SchemeKind::PN5: return {kAllLabels.begin(), kAllLabels.end()};
    }
    throw ProgrammingError("bad SchemeKind");
  }

  std::size_t num_classes() const { return classes().size(); }

  bool emits(OrderLabel label) const {
    const auto ls = labels();
    return std::find(ls.begin(), ls.end(), label) != ls.end();
  }

  // Class index of a label that is itself a class of this scheme.
  std::optional<std::size_t> class_index(OrderLabel label) const {
    const auto cs = classes();
    const auto it = std::find(cs.begin(), cs.end(), label);
    if (it == cs.end()) return std::nullopt;
    return static_cast<std::size_t>(it - cs.begin());
  }

  friend bool operator==(const OrderScheme&, const OrderScheme&) = default;
};

inline std::string_view scheme_name(SchemeKind kind) {
  switch (kind) {
    case SchemeKind::NSP2: return "nsp2";
    case SchemeKind::PN3: return "pn3";
    case SchemeKind::PN5: return "pn5";
    case SchemeKind::PNSMTH: return "pnsmth";
  }
  throw ProgrammingError("bad SchemeKind");
}

inline OrderScheme parse_scheme(std::string_view name) {
  for (auto kind : {SchemeKind::NSP2, SchemeKind::PN3, SchemeKind::PN5, SchemeKind::PNSMTH})
    if (scheme_name(kind) == name) return OrderScheme{kind};
  fatal("unknown scheme '", name, "' (expected nsp2|pn3|pn5|pnsmth)");
}

// Minimum sentences per document the scheme's labels need.
inline std::size_t min_document_sentences(const OrderScheme& scheme) {
  return (scheme.kind == SchemeKind::PN5 || scheme.kind == SchemeKind::PNSMTH) ? 3 : 2;
}

inline std::vector<double> build_target(OrderLabel label, const OrderScheme& scheme) {
  if (!scheme.emits(label))
    throw ProgrammingError(concat("label ", label_name(label), " is not emitted by scheme ",
                                  scheme_name(scheme.kind)));
  std::vector<double> target(scheme.num_classes(), 0.0);
  if (const auto idx = scheme.class_index(label)) {
    target[*idx] = 1.0;
    return target;
  }
  // PNSMTH in-adjacent label: smoothed onto its exact counterpart.
  const OrderLabel mapped = label == OrderLabel::IsNextInadj ? OrderLabel::IsNext : OrderLabel::IsPrev;
  const std::size_t hit = *scheme.class_index(mapped);
  // Snapped to a 1e-12 grid so 0.8 yields exactly 0.2 / 0.1, not 0.19999999999999996.
  const auto snap = [](double x) { return std::nearbyint(x * 1e12) / 1e12; };
  const double residual = snap(1.0 - scheme.smoothing_factor);
  target[hit] = scheme.smoothing_factor;
  if (scheme.residual == ResidualMode::AllOnDiffDoc) {
    target[*scheme.class_index(OrderLabel::DiffDoc)] = residual;
  } else {
    for (std::size_t c = 0; c < target.size(); ++c)
      if (c != hit) target[c] = snap(residual / static_cast<double>(target.size() - 1));
  }
  return target;
}

// Class an order classifier should predict for an example: the label's own
// class, or the argmax of the smoothed target when the label is not a class.
inline std::size_t expected_class(OrderLabel label, const OrderScheme& scheme) {
  if (const auto idx = scheme.class_index(label)) return *idx;
  const auto target = build_target(label, scheme);
  return static_cast<std::size_t>(std::max_element(target.begin(), target.end()) - target.begin());
}

struct SentenceRef {
  std::uint32_t doc = 0;
  std::uint32_t index = 0;
  friend bool operator==(const SentenceRef&, const SentenceRef&) = default;
};

struct PairExample {
  OrderScheme scheme;
  std::vector<TokenId> tokens;        // [CLS] A [SEP] B [SEP]
  std::vector<std::uint8_t> segment_ids;
  OrderLabel label = OrderLabel::IsNext;
  std::vector<double> target;
  std::vector<std::uint32_t> mlm_positions;  // ascending
  std::vector<TokenId> mlm_labels;
  SentenceRef source_a;
  SentenceRef source_b;

  // Position of the first [SEP].
  std::size_t first_sep() const {
    for (std::size_t i = 1; i < tokens.size(); ++i)
      if (tokens[i] == special::kSep) return i;
    throw ProgrammingError("example without [SEP]");
  }

  friend bool operator==(const PairExample&, const PairExample&) = default;
};

struct PackedPair {
  std::vector<TokenId> tokens;
  std::vector<std::uint8_t> segment_ids;
};

// Trims the end of the longer sentence one token at a time until
// [CLS] A [SEP] B [SEP] fits in max_len. Equal lengths trim the sentence whose
// current prefix is lexicographically greater, so the result does not depend
// on which side a sentence sits and pack(b, a) is the mirror of pack(a, b).
inline PackedPair pack_pair(std::span<const TokenId> a, std::span<const TokenId> b, std::size_t max_len) {
  if (max_len < 3) throw ProgrammingError("max_len too small for [CLS] A [SEP] B [SEP]");
  std::size_t len_a = a.size(), len_b = b.size();
  while (len_a + len_b + 3 > max_len) {
    if (len_a > len_b) {
      --len_a;
    } else if (len_b > len_a) {
      --len_b;
    } else if (std::lexicographical_compare(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(len_b), a.begin(),
                                            a.begin() + static_cast<std::ptrdiff_t>(len_a))) {
      --len_a;
    } else {
      --len_b;
    }
  }
  PackedPair out;
  out.tokens.reserve(len_a + len_b + 3);
  out.tokens.push_back(special::kCls);
  out.tokens.insert(out.tokens.end(), a.begin(), a.begin() + static_cast<std::ptrdiff_t>(len_a));
  out.tokens.push_back(special::kSep);
  out.segment_ids.assign(out.tokens.size(), 0);
  out.tokens.insert(out.tokens.end(), b.begin(), b.begin() + static_cast<std::ptrdiff_t>(len_b));
  out.tokens.push_back(special::kSep);
  out.segment_ids.resize(out.tokens.size(), 1);
  return out;
}

struct MaskingConfig {
  double select_rate = 0.15;
  double mask_share = 0.80;
  double random_share = 0.10;
  double keep_share = 0.10;

  void validate() const {
    const auto in_unit = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!in_unit(select_rate) || !in_unit(mask_share) || !in_unit(random_share) || !in_unit(keep_share))
      fatal("masking probabilities must lie in [0, 1]");
    if (std::abs(mask_share + random_share + keep_share - 1.0) > 1e-9)
      fatal("mask_share + random_share + keep_share must equal 1");
  }
};

struct MaskedTokens {
  std::vector<TokenId> tokens;
  std::vector<std::uint32_t> positions;
  std::vector<TokenId> labels;
};

// BERT-style corruption. Only `maskable` positions are considered; each is
// selected independently, then replaced by [MASK], a random non-special id,
// or left unchanged.
inline MaskedTokens apply_mlm_mask(std::vector<TokenId> tokens, std::span<const std::uint32_t> maskable,
                                   const MaskingConfig& cfg, std::size_t vocab_size, Rng& rng) {
  if (vocab_size <= special::kCount) throw ProgrammingError("vocabulary has no regular tokens");
  MaskedTokens out;
  for (const std::uint32_t pos : maskable) {
    if (rng.uniform() >= cfg.select_rate) continue;
    out.positions.push_back(pos);
    out.labels.push_back(tokens[pos]);
    const double r = rng.uniform();
    if (r < cfg.mask_share) {
      tokens[pos] = special::kMask;
    } else if (r < cfg.mask_share + cfg.random_share) {
      tokens[pos] = static_cast<TokenId>(special::kCount + rng.index(vocab_size - special::kCount));
    }
  }
  out.tokens = std::move(tokens);
  return out;
}

// Positions of a packed pair that are neither [CLS] nor [SEP].
inline std::vector<std::uint32_t> maskable_positions(std::span<const TokenId> tokens) {
  std::vector<std::uint32_t> out;
  for (std::uint32_t i = 0; i < tokens.size(); ++i)
    if (tokens[i] != special::kCls && tokens[i] != special::kSep) out.push_back(i);
  return out;
}

// Builds the example for fixed sentence choices, before masking.
inline PairExample make_example(const EncodedCorpus& corpus, const OrderScheme& scheme, OrderLabel label,
                                SentenceRef a, SentenceRef b, std::size_t max_len) {
  PairExample ex;
  ex.scheme = scheme;
  ex.label = label;
  ex.source_a = a;
  ex.source_b = b;
  auto packed = pack_pair(corpus.at(a.doc).at(a.index), corpus.at(b.doc).at(b.index), max_len);
  ex.tokens = std::move(packed.tokens);
  ex.segment_ids = std::move(packed.segment_ids);
  ex.target = build_target(label, scheme);
  return ex;
}

// Exchanges A and B. Masked positions move with their tokens, the label is
// mirrored and the target rebuilt. swap(swap(e)) == e.
inline PairExample swap(const PairExample& e) {
  const std::size_t sep = e.first_sep();
  const std::size_t len_a = sep - 1;
  const std::size_t len_b = e.tokens.size() - sep - 2;

  PairExample out;
  out.scheme = e.scheme;
  out.label = mirrored(e.label);
  out.target = build_target(out.label, out.scheme);
  out.source_a = e.source_b;
  out.source_b = e.source_a;

  const auto a_begin = e.tokens.begin() + 1;
  const auto b_begin = e.tokens.begin() + static_cast<std::ptrdiff_t>(sep + 1);
  out.tokens.push_back(special::kCls);
  out.tokens.insert(out.tokens.end(), b_begin, b_begin + static_cast<std::ptrdiff_t>(len_b));
  out.tokens.push_back(special::kSep);
  out.segment_ids.assign(out.tokens.size(), 0);
  out.tokens.insert(out.tokens.end(), a_begin, a_begin + static_cast<std::ptrdiff_t>(len_a));
  out.tokens.push_back(special::kSep);
  out.segment_ids.resize(out.tokens.size(), 1);

  std::vector<std::pair<std::uint32_t, TokenId>> moved;
  for (std::size_t k = 0; k < e.mlm_positions.size(); ++k) {
    const std::size_t p = e.mlm_positions[k];
    const std::size_t q = p < sep ? p + len_b + 1 : p - len_a - 1;
    moved.emplace_back(static_cast<std::uint32_t>(q), e.mlm_labels[k]);
  }
  std::sort(moved.begin(), moved.end());
  for (const auto& [pos, id] : moved) {
    out.mlm_positions.push_back(pos);
    out.mlm_labels.push_back(id);
  }
  return out;
}

// Anchor positions in a document of `n` sentences from which `label`
// (a same-document label) can be built: [first, last] inclusive, or empty.
inline std::optional<std::pair<std::size_t, std::size_t>> anchor_range(std::size_t n, OrderLabel label) {
  const int offset = sentence_offset(label);
  const std::size_t gap = static_cast<std::size_t>(std::abs(offset));
  if (n <= gap) return std::nullopt;
  if (offset > 0) return std::make_pair(std::size_t{0}, n - 1 - gap);
  return std::make_pair(gap, n - 1);
}

struct SamplerConfig {
  OrderScheme scheme;
  std::size_t max_len = 128;
  MaskingConfig masking;
  std::size_t vocab_size = 0;
  int max_attempts = 16;
};

// Draws pre-training examples from an encoded corpus. Holds only a read
// reference to the corpus; one instance per random stream.
class PairSampler {
 public:
  PairSampler(const EncodedCorpus& corpus, SamplerConfig cfg, Rng rng)
      : corpus_(&corpus), cfg_(std::move(cfg)), labels_(cfg_.scheme.labels()), rng_(std::move(rng)) {
    if (cfg_.max_len < 8) fatal("max_len must be at least 8, got ", cfg_.max_len);
    if (corpus_->empty()) fatal("empty corpus");
    cfg_.masking.validate();
    if (cfg_.vocab_size <= special::kCount) fatal("vocabulary has no regular tokens");
    if (cfg_.scheme.emits(OrderLabel::DiffDoc) && corpus_->size() < 2)
      fatal("DiffDoc needs at least two documents");
  }

  const SamplerConfig& config() const { return cfg_; }
  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }

  // Label uniform over the scheme; document uniform; anchor uniform over the
  // label's valid positions in that document.
  PairExample sample() {
    const OrderLabel label = labels_[rng_.index(labels_.size())];
    const auto [a, b] = draw_sentences(label);
    PairExample ex = make_example(*corpus_, cfg_.scheme, label, a, b, cfg_.max_len);
    const auto maskable = maskable_positions(ex.tokens);
    auto masked = apply_mlm_mask(std::move(ex.tokens), maskable, cfg_.masking, cfg_.vocab_size, rng_);
    ex.tokens = std::move(masked.tokens);
    ex.mlm_positions = std::move(masked.positions);
    ex.mlm_labels = std::move(masked.labels);
    return ex;
  }

  std::vector<PairExample> sample(std::size_t count) {
    std::vector<PairExample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(sample());
    return out;
  }

 private:
  std::pair<SentenceRef, SentenceRef> draw_sentences(OrderLabel label) {
    const auto& docs = *corpus_;
    if (label == OrderLabel::DiffDoc) {
      const std::size_t da = rng_.index(docs.size());
      const std::size_t ia = rng_.index(docs[da].size());
      std::size_t db = rng_.index(docs.size() - 1);
      if (db >= da) ++db;
      const std::size_t ib = rng_.index(docs[db].size());
      return {ref(da, ia), ref(db, ib)};
    }
    for (int attempt = 0; attempt < cfg_.max_attempts; ++attempt) {
      const std::size_t d = rng_.index(docs.size());
      const auto range = anchor_range(docs[d].size(), label);
      if (!range) continue;
      const std::size_t a = range->first + rng_.index(range->second - range->first + 1);
      const std::size_t b = static_cast<std::size_t>(static_cast<long long>(a) + sentence_offset(label));
      return {ref(d, a), ref(d, b)};
    }
    fatal("no document supports label ", label_name(label), " after ", cfg_.max_attempts,
          " attempts; filter the corpus to at least ", min_document_sentences(cfg_.scheme),
          " sentences per document");
  }

  static SentenceRef ref(std::size_t doc, std::size_t index) {
    return SentenceRef{static_cast<std::uint32_t>(doc), static_cast<std::uint32_t>(index)};
  }

  const EncodedCorpus* corpus_;
  SamplerConfig cfg_;
  std::vector<OrderLabel> labels_;
  Rng rng_;
};

// Materializes `count` examples with `workers` independent streams
// (stream id = worker index). Example j comes from worker j % workers, so the
// merged order depends only on (seed, workers).
inline std::vector<PairExample> sample_examples(const EncodedCorpus& corpus, const SamplerConfig& cfg,
                                                std::size_t count, std::uint64_t seed,
                                                std::size_t workers = 1) {
  if (workers == 0) workers = 1;
  std::vector<PairExample> out(count);
  const auto run = [&](std::size_t w) {
    PairSampler sampler(corpus, cfg, Rng(seed, w));
    for (std::size_t j = w; j < count; j += workers) out[j] = sampler.sample();
  };
  if (workers == 1) {
    run(0);
    return out;
  }
  // Construct one sampler up front so config errors surface on this thread.
  { PairSampler probe(corpus, cfg, Rng(seed, 0)); }
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(run, w);
  for (auto& t : threads) t.join();
  return out;
}

// ---------------------------------------------------------------------------
// Examples file
//
//   magic "SQOEXMPL" (8 bytes), u32 version, u8 scheme kind,
//   f64 smoothing factor, u8 residual mode, u32 num_classes, u64 count,
//   then per record:
//     u32 doc_a, u32 index_a, u32 doc_b, u32 index_b, u8 label,
//     u32 len, u32 tokens[len], u8 segment_ids[len],
//     u32 n_masked, u32 positions[n_masked], u32 labels[n_masked],
//     f64 target[num_classes]
//   All integers and floats little-endian.
// ---------------------------------------------------------------------------
inline constexpr std::string_view kExamplesMagic = "SQOEXMPL";
inline constexpr std::uint32_t kExamplesVersion = 1;

inline void write_examples(std::ostream& os, const OrderScheme& scheme, std::span<const PairExample> examples) {
  os.write(kExamplesMagic.data(), static_cast<std::streamsize>(kExamplesMagic.size()));
  io::write_le<std::uint32_t>(os, kExamplesVersion);
  io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(scheme.kind));
  io::write_le<double>(os, scheme.smoothing_factor);
  io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(scheme.residual));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(scheme.num_classes()));
  io::write_le<std::uint64_t>(os, examples.size());
  for (const auto& ex : examples) {
    if (!(ex.scheme == scheme)) throw ProgrammingError("example scheme differs from file scheme");
    io::write_le<std::uint32_t>(os, ex.source_a.doc);
    io::write_le<std::uint32_t>(os, ex.source_a.index);
    io::write_le<std::uint32_t>(os, ex.source_b.doc);
    io::write_le<std::uint32_t>(os, ex.source_b.index);
    io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(ex.label));
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ex.tokens.size()));
    for (auto t : ex.tokens) io::write_le<std::uint32_t>(os, t);
    for (auto s : ex.segment_ids) io::write_le<std::uint8_t>(os, s);
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ex.mlm_positions.size()));
    for (auto p : ex.mlm_positions) io::write_le<std::uint32_t>(os, p);
    for (auto l : ex.mlm_labels) io::write_le<std::uint32_t>(os, l);
    for (auto v : ex.target) io::write_le<double>(os, v);
  }
}

struct ExamplesFile {
  OrderScheme scheme;
  std::vector<PairExample> examples;
};

inline ExamplesFile read_examples(std::istream& is) {
  std::string magic(kExamplesMagic.size(), '\0');
  is.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (!is || magic != kExamplesMagic) fatal("not an examples file (bad magic)");
  const auto version = io::read_le<std::uint32_t>(is);
  if (version != kExamplesVersion) fatal("unsupported examples file version ", version);
  ExamplesFile file;
  const auto kind = io::read_le<std::uint8_t>(is);
  if (kind > 3) fatal("bad scheme byte ", int(kind), " in examples file");
  file.scheme.kind = static_cast<SchemeKind>(kind);
  file.scheme.smoothing_factor = io::read_le<double>(is);
  const auto residual = io::read_le<std::uint8_t>(is);
  if (residual > 1) fatal("bad residual-mode byte in examples file");
  file.scheme.residual = static_cast<ResidualMode>(residual);
  const auto classes = io::read_le<std::uint32_t>(is);
  if (classes != file.scheme.num_classes()) fatal("examples file class count disagrees with its scheme");
  const auto count = io::read_le<std::uint64_t>(is);
  file.examples.reserve(count);
  for (std::uint64_t r = 0; r < count; ++r) {
    PairExample ex;
    ex.scheme = file.scheme;
    ex.source_a = {io::read_le<std::uint32_t>(is), io::read_le<std::uint32_t>(is)};
    ex.source_b = {io::read_le<std::uint32_t>(is), io::read_le<std::uint32_t>(is)};
    const auto label = io::read_le<std::uint8_t>(is);
    if (label > 4) fatal("bad label byte in examples record ", r);
    ex.label = static_cast<OrderLabel>(label);
    const auto len = io::read_le<std::uint32_t>(is);
    ex.tokens.resize(len);
    for (auto& t : ex.tokens) t = io::read_le<std::uint32_t>(is);
    ex.segment_ids.resize(len);
    for (auto& s : ex.segment_ids) s = io::read_le<std::uint8_t>(is);
    const auto n_masked = io::read_le<std::uint32_t>(is);
    ex.mlm_positions.resize(n_masked);
    for (auto& p : ex.mlm_positions) p = io::read_le<std::uint32_t>(is);
    ex.mlm_labels.resize(n_masked);
    for (auto& l : ex.mlm_labels) l = io::read_le<std::uint32_t>(is);
    ex.target.resize(classes);
    for (auto& v : ex.target) v = io::read_le<double>(is);
    file.examples.push_back(std::move(ex));
  }
  return file;
}

inline void save_examples(const std::filesystem::path& path, const OrderScheme& scheme,
                          std::span<const PairExample> examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fatal("cannot write file ", path.string());
  write_examples(out, scheme, examples);
  if (!out.flush()) fatal("write failure on ", path.string());
}

inline ExamplesFile load_examples(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fatal("cannot read file ", path.string());
  return read_examples(in);
}

}  // namespace seqorder
