#include <gtest/gtest.h>

#include "seqorder/tokenizer.hpp"
#include "test_util.hpp"

namespace seqorder {
namespace {

CorpusStore one_doc(std::vector<std::string> sentences) { return CorpusStore({Document{0, std::move(sentences)}}); }

std::vector<std::string> tail_tokens(const Vocab& v) {
  return {v.tokens().begin() + special::kCount, v.tokens().end()};
}

TEST(Vocab, SpecialsComeFirst) {
  const Vocab v = build_vocab(one_doc({"a"}), 6);
  ASSERT_EQ(v.size(), 6u);
  EXPECT_EQ(v.token(0), "[PAD]");
  EXPECT_EQ(v.token(1), "[UNK]");
  EXPECT_EQ(v.token(2), "[CLS]");
  EXPECT_EQ(v.token(3), "[SEP]");
  EXPECT_EQ(v.token(4), "[MASK]");
}

TEST(Vocab, FrequencyOrder) {
  const Vocab v = build_vocab(one_doc({"a a b"}), 7);
  EXPECT_EQ(tail_tokens(v), (std::vector<std::string>{"a", "b"}));
}

TEST(Vocab, LexicalTieBreak) {
  const Vocab v = build_vocab(one_doc({"b a"}), 7);
  EXPECT_EQ(tail_tokens(v), (std::vector<std::string>{"a", "b"}));
}

TEST(Vocab, HundredTokenFixture) {
  // t00 .. t99; token tK occurs K+1 times, so the ten most frequent are t99 .. t90.
  std::vector<std::string> sentences;
  for (int k = 0; k < 100; ++k) {
    std::string s;
    for (int r = 0; r <= k; ++r) s += concat(r ? " " : "", "t", k < 10 ? "0" : "", k);
    sentences.push_back(s);
  }
  const Vocab v = build_vocab(one_doc(sentences), 15);
  ASSERT_EQ(v.size(), 15u);
  std::vector<std::string> expected;
  for (int k = 99; k >= 90; --k) expected.push_back(concat("t", k));
  EXPECT_EQ(tail_tokens(v), expected);
  EXPECT_EQ(v.encode("t89 t90 t05"), (TokenSeq{special::kUnk, v.id("t90"), special::kUnk}));
}

TEST(Vocab, RejectsTinyMaxSize) { EXPECT_THROW(build_vocab(one_doc({"a"}), 5), FatalError); }

TEST(Vocab, IndexInvertsTokens) {
  const Vocab v = build_vocab(one_doc({"the cat sat on the mat ."}), 50);
  for (TokenId i = 0; i < v.size(); ++i) EXPECT_EQ(v.id(v.token(i)), i);
}

TEST(Encode, CaseFolding) {
  const Vocab v = build_vocab(one_doc({"a"}), 6);
  EXPECT_EQ(v.encode("A a"), (TokenSeq{v.id("a"), v.id("a")}));
}

TEST(Encode, OovMapsToUnk) {
  const Vocab v = build_vocab(one_doc({"a"}), 6);
  EXPECT_EQ(v.encode("xyzzy"), TokenSeq{special::kUnk});
}

TEST(Encode, PunctuationSplitGolden) {
  const Vocab v = build_vocab(one_doc({"a , b ."}), 20);
  EXPECT_EQ(v.encode("a, b."), (TokenSeq{v.id("a"), v.id(","), v.id("b"), v.id(".")}));
}

TEST(Encode, NeverEmitsSpecials) {
  const Vocab v = build_vocab(one_doc({"x y"}), 20);
  for (const auto& s : {"[CLS] x [SEP]", "[MASK]", "[PAD] [UNK]"})
    for (const TokenId id : v.encode(s)) EXPECT_FALSE(id == special::kPad || id == special::kCls || id == special::kSep || id == special::kMask) << s;
}

TEST(Encode, ConcatenationAtWhitespace) {
  const Vocab v = build_vocab(one_doc({"one two , three . four"}), 30);
  const std::string a = "One two,", b = "three. Four zzz";
  TokenSeq joined = v.encode(a);
  const TokenSeq tail = v.encode(b);
  joined.insert(joined.end(), tail.begin(), tail.end());
  EXPECT_EQ(v.encode(a + " " + b), joined);
}

TEST(Vocab, FileRoundTrip) {
  testing::TempDir tmp;
  const Vocab v = build_vocab(one_doc({"q w e r t y"}), 9);
  save_vocab(v, tmp / "vocab.txt");
  EXPECT_EQ(load_vocab(tmp / "vocab.txt"), v);
  EXPECT_EQ(testing::slurp(tmp / "vocab.txt").substr(0, 6), "[PAD]\n");
}

TEST(Vocab, LoadRejectsWrongSpecials) {
  testing::TempDir tmp;
  testing::write_text(tmp / "vocab.txt", "[UNK]\n[PAD]\n[CLS]\n[SEP]\n[MASK]\na\n");
  EXPECT_THROW(load_vocab(tmp / "vocab.txt"), FatalError);
}

TEST(Encode, CorpusShapeMatchesStore) {
  const CorpusStore store({Document{0, {"a b", "c"}}, Document{1, {"d"}}});
  const Vocab v = build_vocab(store, 20);
  const EncodedCorpus enc = encode_corpus(store, v);
  ASSERT_EQ(enc.size(), 2u);
  EXPECT_EQ(enc[0].size(), 2u);
  EXPECT_EQ(enc[0][0].size(), 2u);
  EXPECT_EQ(enc[1][0], TokenSeq{v.id("d")});
}

}  // namespace
}  // namespace seqorder
