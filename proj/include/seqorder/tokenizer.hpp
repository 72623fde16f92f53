#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "seqorder/common.hpp"
#include "seqorder/corpus.hpp"

namespace seqorder {

using TokenSeq = std::vector<TokenId>;

namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kCls = 2;
inline constexpr TokenId kSep = 3;
inline constexpr TokenId kMask = 4;
inline constexpr TokenId kCount = 5;
inline constexpr std::array<std::string_view, kCount> kNames = {"[PAD]", "[UNK]", "[CLS]", "[SEP]",
                                                                 "[MASK]"};
}  // namespace special

// Lowercases ASCII and splits on whitespace; every ASCII punctuation
// character becomes its own token. Bytes >= 0x80 are word characters.
inline std::vector<std::string> pretokenize(std::string_view sentence) {
  std::vector<std::string> out;
  std::string word;
  const auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  for (const char raw : sentence) {
    const auto c = static_cast<unsigned char>(raw);
    if (c < 0x80 && std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, raw);
    } else {
      word += (c < 0x80) ? static_cast<char>(std::tolower(c)) : raw;
    }
  }
  flush();
  return out;
}

class Vocab {
 public:
  // `tokens` must start with the five specials in their fixed order.
  explicit Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.size() < special::kCount) fatal("vocabulary lacks special tokens");
    for (TokenId i = 0; i < special::kCount; ++i)
      if (tokens_[i] != special::kNames[i])
        fatal("vocabulary line ", i, " must be ", special::kNames[i], ", found '", tokens_[i], "'");
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second)
        fatal("duplicate vocabulary token '", tokens_[i], "'");
    }
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(TokenId id) const { return tokens_.at(id); }

  TokenId id(std::string_view token) const {
    const auto it = index_.find(std::string(token));
    return it == index_.end() ? special::kUnk : it->second;
  }
  bool contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

  static bool is_special(TokenId id) { return id < special::kCount; }

  TokenSeq encode(std::string_view sentence) const {
    TokenSeq ids;
    for (const auto& piece : pretokenize(sentence)) {
      const TokenId t = id(piece);
      // A corpus token spelled like a special maps to UNK, never the special.
      ids.push_back(is_special(t) ? special::kUnk : t);
    }
    return ids;
  }

  std::string decode(const TokenSeq& ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) out += ' ';
      out += token(ids[i]);
    }
    return out;
  }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// The (max_size - 5) most frequent surface tokens after the specials.
// Frequency descending, ties broken lexicographically.
inline Vocab build_vocab(const CorpusStore& store, std::size_t max_size) {
  if (max_size < special::kCount + 1)
    fatal("vocabulary size must be at least ", special::kCount + 1, ", got ", max_size);
  if (store.empty()) fatal("empty corpus");

  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& doc : store)
    for (const auto& s : doc.sentences)
      for (auto& piece : pretokenize(s)) ++counts[std::move(piece)];

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });

  std::vector<std::string> tokens(special::kNames.begin(), special::kNames.end());
  for (const auto& [token, count] : ranked) {
    if (tokens.size() >= max_size) break;
    if (std::find(special::kNames.begin(), special::kNames.end(), token) != special::kNames.end())
      continue;
    tokens.push_back(token);
  }
  return Vocab(std::move(tokens));
}

inline void save_vocab(const Vocab& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fatal("cannot write file ", path.string());
  for (const auto& t : vocab.tokens()) out << t << '\n';
  if (!out.flush()) fatal("write failure on ", path.string());
}

inline Vocab load_vocab(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<std::string> tokens;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocab(std::move(tokens));
}

// Documents as token-id sequences, index-aligned with the store.
using EncodedCorpus = std::vector<std::vector<TokenSeq>>;

inline EncodedCorpus encode_corpus(const CorpusStore& store, const Vocab& vocab) {
  EncodedCorpus out;
  out.reserve(store.size());
  for (const auto& doc : store) {
    auto& sentences = out.emplace_back();
    sentences.reserve(doc.sentences.size());
    for (const auto& s : doc.sentences) sentences.push_back(vocab.encode(s));
  }
  return out;
}

}  // namespace seqorder
