// Vocabulary learning, greedy encoding, offsets, truncation, and the vocab
// file format. The merge example expectations are worked out by hand from
// the frequency-merge rule.

#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <string>
#include <vector>

#include "mtenc/common.hpp"
#include "mtenc/tokenizer.hpp"

using namespace mtenc;

TEST_CASE("reserved tokens own ids 0 through 3", "[tokenizer]") {
    Vocab v = Vocab::build("aa aa ab", 16);
    CHECK(v.token(kPadId) == "[PAD]");
    CHECK(v.token(kUnkId) == "[UNK]");
    CHECK(v.token(kClsId) == "[CLS]");
    CHECK(v.token(kSepId) == "[SEP]");
    CHECK(v.id("[SEP]") == 3);
}

TEST_CASE("frequency merges learn frequent pairs first", "[tokenizer]") {
    // "aa" occurs twice, "ab" once: pair (a, ##a) merges before (a, ##b)
    Vocab v = Vocab::build("aa aa ab", 16);
    CHECK(v.id("a") >= 0);
    CHECK(v.id("b") >= 0);
    CHECK(v.id("aa") >= 0);
    CHECK(v.id("ab") >= 0);
    CHECK(v.id("aa") < v.id("ab"));

    // greedy longest match on a fresh word built from learned pieces
    Encoding e = encode_single("aab", v, 8);
    CHECK(e.token_ids[0] == kClsId);
    CHECK(e.token_ids[1] == v.id("aa"));
    CHECK(e.token_ids[2] == v.id("##b"));
    CHECK(e.token_ids[3] == kSepId);
    CHECK(e.token_ids[4] == kPadId);

    // a target below reserved + both byte forms is rejected
    CHECK_THROWS_AS(Vocab::build("aa aa ab", 7), DataError);
    CHECK_THROWS_AS(Vocab::build("   ", 100), DataError);
}

TEST_CASE("merge stops when no pairs remain", "[tokenizer]") {
    // single-character words produce no pairs at all
    Vocab v = Vocab::build("a b a", 100);
    CHECK(v.size() == 4 + 4);  // reserved + {a, b, ##a, ##b}
}

TEST_CASE("unseen characters collapse the whole word to [UNK]", "[tokenizer]") {
    Vocab v = Vocab::build("aa aa ab", 16);
    Encoding e = encode_single("xyz", v, 8);
    CHECK(e.token_ids[1] == kUnkId);
    CHECK(e.offsets[1] == std::make_pair(0, 3));
    CHECK(e.token_ids[2] == kSepId);

    // known prefix does not rescue a word with one bad character
    Encoding e2 = encode_single("axb", v, 8);
    CHECK(e2.token_ids[1] == kUnkId);
    CHECK(e2.offsets[1] == std::make_pair(0, 3));
}

TEST_CASE("offsets and word_index track the source text", "[tokenizer]") {
    Vocab v = Vocab::build("aa aa ab", 16);
    Encoding e = encode_single("aab ab", v, 10);
    // [CLS] aa ##b ab [SEP]
    CHECK(e.offsets[0] == std::make_pair(-1, -1));
    CHECK(e.offsets[1] == std::make_pair(0, 2));
    CHECK(e.offsets[2] == std::make_pair(2, 3));
    CHECK(e.offsets[3] == std::make_pair(4, 6));
    CHECK(e.word_index[1] == 0);
    CHECK(e.word_index[2] == 0);
    CHECK(e.word_index[3] == 1);
    CHECK(e.word_index[4] == -1);

    // every view has exactly max_len entries
    CHECK(e.token_ids.size() == 10);
    CHECK(e.segment_ids.size() == 10);
    CHECK(e.attention_mask.size() == 10);
    CHECK(e.offsets.size() == 10);
    CHECK(e.word_index.size() == 10);
    CHECK(e.real_length() == 5);
}

TEST_CASE("single encoding truncates to max_len - 2 pieces", "[tokenizer]") {
    Vocab v = Vocab::build("aa aa ab", 16);
    Encoding e = encode_single("ab ab ab ab ab", v, 5);
    CHECK(e.real_length() == 5);
    CHECK(e.token_ids[0] == kClsId);
    for (int i = 1; i <= 3; ++i) CHECK(e.token_ids[i] == v.id("ab"));
    CHECK(e.token_ids[4] == kSepId);
    CHECK_THROWS_AS(encode_single("ab", v, 2), ConfigError);
}

TEST_CASE("pair encoding lays out segments and trims the longer text", "[tokenizer]") {
    Vocab v = Vocab::build("aa aa ab", 16);
    Encoding e = encode_pair("aa ab", "ab", v, 12);
    // [CLS] aa ab [SEP] | ab [SEP] [PAD]...
    CHECK(e.token_ids[0] == kClsId);
    CHECK(e.token_ids[3] == kSepId);
    CHECK(e.token_ids[5] == kSepId);
    std::vector<int> segs(e.segment_ids.begin(), e.segment_ids.begin() + 6);
    CHECK(segs == std::vector<int>({0, 0, 0, 0, 1, 1}));
    CHECK(e.segment_ids[6] == 0);  // pads sit in segment 0
    CHECK(e.word_index[4] == 0);   // first word of its own segment
    CHECK(e.offsets[4] == std::make_pair(0, 2));

    // budget 5: sides 4 and 2 pieces; the longer side loses pieces first
    Encoding t = encode_pair("aa aa aa aa", "ab ab", v, 8);
    CHECK(t.real_length() == 8);
    int seg0 = 0, seg1 = 0;
    for (int i = 0; i < t.length(); ++i) {
        if (!t.attention_mask[i] || t.token_ids[i] == kClsId || t.token_ids[i] == kSepId)
            continue;
        (t.segment_ids[i] == 0 ? seg0 : seg1)++;
    }
    CHECK(seg0 == 3);
    CHECK(seg1 == 2);

    // a tie trims the first text
    Encoding t2 = encode_pair("aa aa aa", "ab ab ab", v, 8);
    int seg0b = 0, seg1b = 0;
    for (int i = 0; i < t2.length(); ++i) {
        if (!t2.attention_mask[i] || t2.token_ids[i] == kClsId || t2.token_ids[i] == kSepId)
            continue;
        (t2.segment_ids[i] == 0 ? seg0b : seg1b)++;
    }
    CHECK(seg0b == 2);
    CHECK(seg1b == 3);

    CHECK_THROWS_AS(encode_pair("aa", "ab", v, 4), ConfigError);
}

TEST_CASE("decode inverts encode up to whitespace normalization", "[tokenizer]") {
    Vocab v = Vocab::build("aa aa ab ba", 24);
    for (const std::string text : {"aa ab", "ab ba aa", "aab"}) {
        Encoding e = encode_single(text, v, 16);
        CHECK(decode(v, e.token_ids) == text);
    }
    Encoding messy = encode_single("  aa\tab ", v, 16);
    CHECK(decode(v, messy.token_ids) == "aa ab");
}

TEST_CASE("vocab file round trip and validation", "[tokenizer]") {
    const std::string path = "vocab_roundtrip_tmp.txt";
    Vocab v = Vocab::build("aa aa ab", 16);
    v.save(path);
    Vocab w = Vocab::load(path);
    REQUIRE(w.size() == v.size());
    for (int i = 0; i < v.size(); ++i) {
        CHECK(w.token(i) == v.token(i));
        CHECK(w.id(v.token(i)) == i);  // map and list stay mutual inverses
    }
    std::remove(path.c_str());

    auto write_file = [](const std::string& p, const std::string& content) {
        std::ofstream out(p, std::ios::binary);
        out << content;
    };
    const std::string bad = "vocab_bad_tmp.txt";
    write_file(bad, "[PAD]\n[UNK]\n[CLS]\n[SEP]\na\na\n");
    CHECK_THROWS_AS(Vocab::load(bad), FormatError);
    write_file(bad, "[PAD]\n[UNK]\n[SEP]\n[CLS]\na\n");
    CHECK_THROWS_AS(Vocab::load(bad), FormatError);
    write_file(bad, "[PAD]\n[UNK]\n");
    CHECK_THROWS_AS(Vocab::load(bad), FormatError);
    std::remove(bad.c_str());
    CHECK_THROWS_AS(Vocab::load("does_not_exist_tmp.txt"), IoError);
}

TEST_CASE("vocab build is deterministic", "[tokenizer]") {
    const std::string corpus = "lorem ipsum dolor sit amet lorem ipsum lorem";
    Vocab a = Vocab::build(corpus, 64);
    Vocab b = Vocab::build(corpus, 64);
    REQUIRE(a.size() == b.size());
    for (int i = 0; i < a.size(); ++i) CHECK(a.token(i) == b.token(i));
}
