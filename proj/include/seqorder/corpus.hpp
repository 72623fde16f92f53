#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "seqorder/common.hpp"

namespace seqorder {

struct Document {
  std::size_t id = 0;
  std::vector<std::string> sentences;

  friend bool operator==(const Document&, const Document&) = default;
};

// Immutable after construction; safe to share across threads.
class CorpusStore {
 public:
  CorpusStore() = default;

  // Ids are reassigned densely 0..n-1 in the given order.
  explicit CorpusStore(std::vector<Document> documents) : documents_(std::move(documents)) {
    for (std::size_t i = 0; i < documents_.size(); ++i) {
      if (documents_[i].sentences.empty()) throw ProgrammingError("document without sentences");
      documents_[i].id = i;
      sentence_count_ += documents_[i].sentences.size();
    }
  }

  const std::vector<Document>& documents() const { return documents_; }
  std::size_t size() const { return documents_.size(); }
  bool empty() const { return documents_.empty(); }
  std::size_t sentence_count() const { return sentence_count_; }

  const Document& document(std::size_t id) const {
    if (id >= documents_.size()) throw ProgrammingError(concat("no document with id ", id));
    return documents_[id];
  }

  auto begin() const { return documents_.begin(); }
  auto end() const { return documents_.end(); }

  friend bool operator==(const CorpusStore& a, const CorpusStore& b) {
    return a.documents_ == b.documents_;
  }

 private:
  std::vector<Document> documents_;
  std::size_t sentence_count_ = 0;
};

namespace corpus_detail {

// Returns the byte offset of the first invalid sequence, or npos.
inline std::size_t find_invalid_utf8(std::string_view text) {
  std::size_t i = 0;
  const auto byte = [&](std::size_t k) { return static_cast<unsigned char>(text[k]); };
  while (i < text.size()) {
    const unsigned char c = byte(i);
    std::size_t len;
    std::uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return i;
    }
    if (i + len > text.size()) return i;
    for (std::size_t k = 1; k < len; ++k) {
      if ((byte(i + k) & 0xC0) != 0x80) return i;
      cp = (cp << 6) | (byte(i + k) & 0x3F);
    }
    // overlong forms, surrogates, out of range
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000) ||
        (cp >= 0xD800 && cp <= 0xDFFF) || cp > 0x10FFFF)
      return i;
    i += len;
  }
  return std::string_view::npos;
}

inline std::string_view rtrim(std::string_view line) {
  while (!line.empty() && (line.back() == ' ' || line.back() == '\t' || line.back() == '\r' ||
                           line.back() == '\n' || line.back() == '\f' || line.back() == '\v'))
    line.remove_suffix(1);
  return line;
}

// Splits text into documents on blank lines. LF and CRLF both accepted.
inline void split_documents(std::string_view text, std::vector<Document>& out) {
  std::vector<std::string> current;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string_view line = rtrim(text.substr(pos, nl - pos));
    if (line.empty()) {
      if (!current.empty()) out.push_back(Document{0, std::move(current)});
      current.clear();
    } else {
      current.emplace_back(line);
    }
    pos = nl + 1;
  }
  if (!current.empty()) out.push_back(Document{0, std::move(current)});
}

}  // namespace corpus_detail

// Parses in-memory text; `origin` only names the source in error messages.
inline CorpusStore parse_corpus_text(std::string_view text, std::string_view origin = "<memory>") {
  if (const auto bad = corpus_detail::find_invalid_utf8(text); bad != std::string_view::npos)
    fatal("invalid UTF-8 in ", origin, " at byte offset ", bad);
  std::vector<Document> docs;
  corpus_detail::split_documents(text, docs);
  if (docs.empty()) fatal("empty corpus");
  return CorpusStore(std::move(docs));
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fatal("cannot read file ", path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fatal("read failure on ", path.string());
  return text;
}

// Documents from all files in the given order; ids 0..n-1 in file order.
inline CorpusStore ingest(const std::vector<std::filesystem::path>& files) {
  std::vector<Document> docs;
  for (const auto& file : files) {
    const std::string text = read_file(file);
    if (const auto bad = corpus_detail::find_invalid_utf8(text); bad != std::string::npos)
      fatal("invalid UTF-8 in ", file.string(), " at byte offset ", bad);
    corpus_detail::split_documents(text, docs);
  }
  if (docs.empty()) fatal("empty corpus");
  return CorpusStore(std::move(docs));
}

inline CorpusStore filter_short_documents(const CorpusStore& store, std::size_t min_sentences) {
  if (min_sentences < 1) throw ProgrammingError("min_sentences must be >= 1");
  std::vector<Document> kept;
  for (const auto& doc : store)
    if (doc.sentences.size() >= min_sentences) kept.push_back(doc);
  if (kept.empty()) fatal("no usable documents");
  return CorpusStore(std::move(kept));
}

// Canonical text format: one sentence per line, one blank line between
// documents, trailing newline.
inline std::string to_canonical_text(const CorpusStore& store) {
  std::string out;
  bool first = true;
  for (const auto& doc : store) {
    if (!first) out += '\n';
    first = false;
    for (const auto& s : doc.sentences) {
      out += s;
      out += '\n';
    }
  }
  return out;
}

inline std::filesystem::path store_header_path(const std::filesystem::path& store_path) {
  return std::filesystem::path(store_path.string() + ".header");
}

inline constexpr int kStoreFormatVersion = 1;

// Persists the canonical text at `path` and a key-value header next to it.
inline void save_store(const CorpusStore& store, const std::filesystem::path& path) {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) fatal("cannot write file ", path.string());
    out << to_canonical_text(store);
    if (!out.flush()) fatal("write failure on ", path.string());
  }
  std::ofstream header(store_header_path(path), std::ios::binary);
  if (!header) fatal("cannot write file ", store_header_path(path).string());
  header << "format=seqorder-store\n"
         << "version=" << kStoreFormatVersion << "\n"
         << "documents=" << store.size() << "\n"
         << "sentences=" << store.sentence_count() << "\n";
  if (!header.flush()) fatal("write failure on ", store_header_path(path).string());
}

inline CorpusStore load_store(const std::filesystem::path& path) {
  CorpusStore store = ingest({path});
  const auto header_path = store_header_path(path);
  if (!std::filesystem::exists(header_path)) return store;

  std::map<std::string, std::string> kv;
  std::istringstream lines(read_file(header_path));
  for (std::string line; std::getline(lines, line);) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (kv["format"] != "seqorder-store") fatal("bad store header ", header_path.string());
  if (kv["version"] != std::to_string(kStoreFormatVersion))
    fatal("unsupported store version ", kv["version"], " in ", header_path.string());
  if (kv["documents"] != std::to_string(store.size()) ||
      kv["sentences"] != std::to_string(store.sentence_count()))
    fatal("store ", path.string(), " does not match its header counts");
  return store;
}

}  // namespace seqorder
