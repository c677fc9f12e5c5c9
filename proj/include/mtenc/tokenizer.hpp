#pragma once

// Sub-word vocabulary and text encoding.
//
// The vocabulary is learned by greedy frequency merges: start from every
// byte seen in the corpus (word-initial and "##" continuation forms), then
// repeatedly fuse the most frequent adjacent pair until the target size is
// reached or no pairs remain. Encoding is greedy longest-match per word
// with a word-level [UNK] fallback, tracking character offsets throughout.

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mtenc/common.hpp"

namespace mtenc {

constexpr int kPadId = 0;
constexpr int kUnkId = 1;
constexpr int kClsId = 2;
constexpr int kSepId = 3;

inline const std::vector<std::string>& reserved_tokens() {
    static const std::vector<std::string> r = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
    return r;
}

class Vocab {
  public:
    int size() const { return static_cast<int>(id_to_token_.size()); }

    const std::string& token(int id) const {
        if (id < 0 || id >= size()) throw LabelError("vocab: id out of range");
        return id_to_token_[id];
    }

    int id(const std::string& tok) const {
        auto it = token_to_id_.find(tok);
        return it == token_to_id_.end() ? -1 : it->second;
    }

    const std::vector<std::string>& tokens() const { return id_to_token_; }

    // Learns merges from whitespace-separated text. target_size must leave
    // room for the reserved tokens plus both forms of every byte seen.
    static Vocab build(const std::string& corpus, int target_size) {
        std::map<std::string, long> word_freq;
        size_t i = 0;
        while (i < corpus.size()) {
            while (i < corpus.size() && std::isspace(static_cast<unsigned char>(corpus[i]))) ++i;
            size_t start = i;
            while (i < corpus.size() && !std::isspace(static_cast<unsigned char>(corpus[i]))) ++i;
            if (i > start) ++word_freq[corpus.substr(start, i - start)];
        }
        if (word_freq.empty()) throw DataError("vocab build: corpus has no words");

        std::set<std::string> alphabet;
        for (const auto& [word, freq] : word_freq) {
            for (char c : word) {
                alphabet.insert(std::string(1, c));
                alphabet.insert("##" + std::string(1, c));
            }
        }
        const int floor_size = 4 + static_cast<int>(alphabet.size());
        if (target_size < floor_size)
            throw DataError("vocab build: target_size " + std::to_string(target_size) +
                            " below reserved + single-character floor " +
                            std::to_string(floor_size));

        Vocab v;
        for (const auto& r : reserved_tokens()) v.append(r);
        for (const auto& a : alphabet) v.append(a);

        // piece sequences per distinct word, merged in place
        std::vector<std::pair<std::vector<std::string>, long>> seqs;
        seqs.reserve(word_freq.size());
        for (const auto& [word, freq] : word_freq) {
            std::vector<std::string> pieces;
            for (size_t k = 0; k < word.size(); ++k)
                pieces.push_back(k == 0 ? std::string(1, word[k]) : "##" + std::string(1, word[k]));
            seqs.emplace_back(std::move(pieces), freq);
        }

        while (v.size() < target_size) {
            std::map<std::pair<std::string, std::string>, long> pair_count;
            for (const auto& [pieces, freq] : seqs)
                for (size_t k = 0; k + 1 < pieces.size(); ++k)
                    pair_count[{pieces[k], pieces[k + 1]}] += freq;
            if (pair_count.empty()) break;
            auto best = pair_count.begin();  // ordered map: first key wins ties
            for (auto it = pair_count.begin(); it != pair_count.end(); ++it)
                if (it->second > best->second) best = it;
            const auto& [left, right] = best->first;
            std::string merged =
                left + (right.rfind("##", 0) == 0 ? right.substr(2) : right);
            for (auto& [pieces, freq] : seqs) {
                std::vector<std::string> out;
                out.reserve(pieces.size());
                for (size_t k = 0; k < pieces.size(); ++k) {
                    if (k + 1 < pieces.size() && pieces[k] == left && pieces[k + 1] == right) {
                        out.push_back(merged);
                        ++k;
                    } else {
                        out.push_back(pieces[k]);
                    }
                }
                pieces = std::move(out);
            }
            if (v.id(merged) < 0) v.append(merged);
        }
        return v;
    }

    // one token per line, line number = id
    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("vocab save: cannot open " + path);
        for (const auto& t : id_to_token_) out << t << '\n';
        if (!out) throw IoError("vocab save: write failed for " + path);
    }

    static Vocab load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("vocab load: cannot open " + path);
        Vocab v;
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty())
                throw FormatError("vocab load: empty token at line " + std::to_string(line_no));
            for (char c : line)
                if (std::isspace(static_cast<unsigned char>(c)))
                    throw FormatError("vocab load: whitespace inside token at line " +
                                      std::to_string(line_no));
            if (v.token_to_id_.count(line))
                throw FormatError("vocab load: duplicate token at line " + std::to_string(line_no));
            v.append(line);
            ++line_no;
        }
        if (v.size() < 4)
            throw FormatError("vocab load: file must start with the four reserved tokens");
        for (int k = 0; k < 4; ++k)
            if (v.id_to_token_[k] != reserved_tokens()[k])
                throw FormatError("vocab load: line " + std::to_string(k) + " must be " +
                                  reserved_tokens()[k]);
        return v;
    }

  private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;

    void append(const std::string& tok) {
        token_to_id_[tok] = static_cast<int>(id_to_token_.size());
        id_to_token_.push_back(tok);
    }
};

// Parallel per-position views of one encoded input. All vectors share the
// same length, which is always exactly max_len (padded with [PAD]).
struct Encoding {
    std::vector<int> token_ids;
    std::vector<int> segment_ids;
    std::vector<int> attention_mask;              // 1 = real position, 0 = pad
    std::vector<std::pair<int, int>> offsets;     // (-1, -1) for specials and pads
    std::vector<int> word_index;                  // -1 for specials and pads

    int length() const { return static_cast<int>(token_ids.size()); }

    int real_length() const {
        int n = 0;
        for (int m : attention_mask) n += m;
        return n;
    }
};

namespace detail {

struct WordSpan {
    int start, end;  // byte offsets into the source text
};

inline std::vector<WordSpan> split_words(const std::string& text) {
    std::vector<WordSpan> words;
    size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i > start) words.push_back({static_cast<int>(start), static_cast<int>(i)});
    }
    return words;
}

struct Piece {
    int token_id;
    int start, end;  // byte offsets into the source text
    int word;        // index into the word list of its segment
};

// Greedy longest-match decomposition of one word. If any position fails to
// match, the whole word degrades to a single [UNK] piece.
inline void word_to_pieces(const Vocab& vocab, const std::string& text, WordSpan span,
                           int word_idx, std::vector<Piece>& out) {
    const int len = span.end - span.start;
    std::vector<Piece> pieces;
    int pos = 0;
    while (pos < len) {
        int best_len = 0, best_id = -1;
        for (int take = len - pos; take >= 1; --take) {
            std::string cand = text.substr(span.start + pos, take);
            if (pos > 0) cand = "##" + cand;
            int id = vocab.id(cand);
            if (id >= 0) {
                best_len = take;
                best_id = id;
                break;
            }
        }
        if (best_id < 0) {
            out.push_back({kUnkId, span.start, span.end, word_idx});
            return;
        }
        pieces.push_back({best_id, span.start + pos, span.start + pos + best_len, word_idx});
        pos += best_len;
    }
    for (auto& p : pieces) out.push_back(p);
}

inline std::vector<Piece> text_to_pieces(const Vocab& vocab, const std::string& text) {
    std::vector<Piece> pieces;
    const auto words = split_words(text);
    for (size_t w = 0; w < words.size(); ++w)
        word_to_pieces(vocab, text, words[w], static_cast<int>(w), pieces);
    return pieces;
}

}  // namespace detail

// [CLS] pieces [SEP] with [PAD] fill; pieces beyond max_len - 2 are dropped.
inline Encoding encode_single(const std::string& text, const Vocab& vocab, int max_len) {
    if (max_len < 3) throw ConfigError("encode_single: max_len must be at least 3");
    auto pieces = detail::text_to_pieces(vocab, text);
    const int budget = max_len - 2;
    if (static_cast<int>(pieces.size()) > budget) pieces.resize(budget);

    Encoding e;
    auto push = [&](int id, int seg, int mask, int s, int t, int w) {
        e.token_ids.push_back(id);
        e.segment_ids.push_back(seg);
        e.attention_mask.push_back(mask);
        e.offsets.emplace_back(s, t);
        e.word_index.push_back(w);
    };
    push(kClsId, 0, 1, -1, -1, -1);
    for (const auto& p : pieces) push(p.token_id, 0, 1, p.start, p.end, p.word);
    push(kSepId, 0, 1, -1, -1, -1);
    while (e.length() < max_len) push(kPadId, 0, 0, -1, -1, -1);
    return e;
}

// [CLS] a [SEP] b [SEP]. When over budget the currently longer piece list
// loses its final piece first; ties trim the first text.
inline Encoding encode_pair(const std::string& text_a, const std::string& text_b,
                            const Vocab& vocab, int max_len) {
    if (max_len < 5) throw ConfigError("encode_pair: max_len must be at least 5");
    auto pa = detail::text_to_pieces(vocab, text_a);
    auto pb = detail::text_to_pieces(vocab, text_b);
    const int budget = max_len - 3;
    while (static_cast<int>(pa.size() + pb.size()) > budget) {
        if (pa.size() >= pb.size() && !pa.empty())
            pa.pop_back();
        else
            pb.pop_back();
    }

    Encoding e;
    auto push = [&](int id, int seg, int mask, int s, int t, int w) {
        e.token_ids.push_back(id);
        e.segment_ids.push_back(seg);
        e.attention_mask.push_back(mask);
        e.offsets.emplace_back(s, t);
        e.word_index.push_back(w);
    };
    push(kClsId, 0, 1, -1, -1, -1);
    for (const auto& p : pa) push(p.token_id, 0, 1, p.start, p.end, p.word);
    push(kSepId, 0, 1, -1, -1, -1);
    for (const auto& p : pb) push(p.token_id, 1, 1, p.start, p.end, p.word);
    push(kSepId, 1, 1, -1, -1, -1);
    while (e.length() < max_len) push(kPadId, 0, 0, -1, -1, -1);
    return e;
}

// Inverse of encoding up to whitespace normalization: specials and pads are
// dropped, "##" continuations concatenate onto the current word.
inline std::string decode(const Vocab& vocab, const std::vector<int>& ids) {
    std::string out;
    bool in_word = false;
    for (int id : ids) {
        if (id == kPadId || id == kClsId || id == kSepId) continue;
        const std::string& tok = vocab.token(id);
        if (tok.rfind("##", 0) == 0 && in_word) {
            out += tok.substr(2);
        } else {
            if (in_word) out += ' ';
            out += tok.rfind("##", 0) == 0 ? tok.substr(2) : tok;
            in_word = true;
        }
    }
    return out;
}

}  // namespace mtenc
