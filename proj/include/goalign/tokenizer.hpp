#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace goalign::enc {

// Word-level vocabulary with <unk>/<bos>/<eos>. Word ids start at 3 and
// follow sorted order so construction is deterministic.
struct Vocabulary {
  static constexpr int kUnk = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;

  std::vector<std::string> words;  // sorted, unique
  std::unordered_map<std::string, int> index;

  int size() const { return 3 + static_cast<int>(words.size()); }
  int id_of(const std::string& w) const {
    auto it = index.find(w);
    return it == index.end() ? kUnk : it->second;
  }

  static Vocabulary build(const std::vector<std::string>& texts);
  static Vocabulary from_words(std::vector<std::string> sorted_words);
};

struct Tokenization {
  std::vector<int> ids;                        // [bos, w..., eos]
  std::vector<std::pair<int, int>> spans;      // char span per token; (-1,-1) for bos/eos
  bool truncated = false;

  int length() const { return static_cast<int>(ids.size()); }
  int eos_position() const { return length() - 1; }
  // token index covering a character offset, or -1
  int token_for_char(int offset) const;
};

// Lowercased word-level tokenization; words are maximal alphanumeric runs.
// Truncates to max_len keeping <eos> as the final token. Throws on text that
// normalizes to nothing.
Tokenization tokenize(const std::string& text, const Vocabulary& vocab, int max_len);

}  // namespace goalign::enc
