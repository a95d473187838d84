#include "goalign/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "goalign/errors.hpp"

namespace goalign::enc {

namespace {

bool word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

// (word, char_start, char_end) triples, lowercased
std::vector<std::tuple<std::string, int, int>> split_words(const std::string& text) {
  std::vector<std::tuple<std::string, int, int>> out;
  int n = static_cast<int>(text.size());
  int i = 0;
  while (i < n) {
    while (i < n && !word_char(text[i])) ++i;
    if (i >= n) break;
    int start = i;
    std::string w;
    while (i < n && word_char(text[i])) {
      w += static_cast<char>(std::tolower(static_cast<unsigned char>(text[i])));
      ++i;
    }
    out.emplace_back(std::move(w), start, i);
  }
  return out;
}

}  // namespace

Vocabulary Vocabulary::build(const std::vector<std::string>& texts) {
  std::set<std::string> uniq;
  for (const auto& t : texts)
    for (const auto& [w, s, e] : split_words(t)) uniq.insert(w);
  return from_words(std::vector<std::string>(uniq.begin(), uniq.end()));
}

Vocabulary Vocabulary::from_words(std::vector<std::string> sorted_words) {
  Vocabulary v;
  v.words = std::move(sorted_words);
  std::sort(v.words.begin(), v.words.end());
  v.words.erase(std::unique(v.words.begin(), v.words.end()), v.words.end());
  for (size_t i = 0; i < v.words.size(); ++i)
    v.index[v.words[i]] = 3 + static_cast<int>(i);
  return v;
}

int Tokenization::token_for_char(int offset) const {
  for (size_t i = 0; i < spans.size(); ++i)
    if (spans[i].first >= 0 && offset >= spans[i].first && offset < spans[i].second)
      return static_cast<int>(i);
  return -1;
}

Tokenization tokenize(const std::string& text, const Vocabulary& vocab, int max_len) {
  if (text.empty()) throw DataError("tokenize: empty text");
  auto words = split_words(text);
  if (words.empty()) throw DataError("tokenize: text normalizes to no tokens");
  if (max_len < 3) throw DataError("tokenize: max_len must allow bos/word/eos");

  Tokenization t;
  t.ids.push_back(Vocabulary::kBos);
  t.spans.emplace_back(-1, -1);
  for (const auto& [w, s, e] : words) {
    if (static_cast<int>(t.ids.size()) >= max_len - 1) {
      t.truncated = true;
      break;
    }
    t.ids.push_back(vocab.id_of(w));
    t.spans.emplace_back(s, e);
  }
  t.ids.push_back(Vocabulary::kEos);
  t.spans.emplace_back(-1, -1);
  return t;
}

}  // namespace goalign::enc
