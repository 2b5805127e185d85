#include "metaseg/tokenizer.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace metaseg {

std::vector<std::string> Tokenizer::split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

Tokenizer Tokenizer::build(const std::vector<std::string>& corpus) {
  Tokenizer t;
  t.tokens_ = {"<pad>", "<unk>"};
  std::unordered_map<std::string, int> seen;
  for (const auto& text : corpus)
    for (const auto& w : split_words(text))
      if (seen.emplace(w, static_cast<int>(t.tokens_.size())).second) t.tokens_.push_back(w);
  return t;
}

Tokenizer Tokenizer::from_vocab_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary file " + path);
  Tokenizer t;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    t.tokens_.push_back(line);
  }
  if (t.tokens_.size() < 2 || t.tokens_[0] != "<pad>" || t.tokens_[1] != "<unk>")
    throw IoError("vocabulary file " + path + " must start with <pad> and <unk>");
  return t;
}

void Tokenizer::save_vocab(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write vocabulary file " + path);
  for (const auto& t : tokens_) out << t << "\n";
}

int Tokenizer::id_of(const std::string& token) const {
  for (size_t i = 0; i < tokens_.size(); ++i)
    if (tokens_[i] == token) return static_cast<int>(i);
  return kUnkId;
}

const std::string& Tokenizer::token(int id) const {
  if (id < 0 || id >= vocab_size()) throw ValueError("token id out of range");
  return tokens_[static_cast<size_t>(id)];
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
  std::unordered_map<std::string, int> index;
  for (size_t i = 0; i < tokens_.size(); ++i) index[tokens_[i]] = static_cast<int>(i);
  std::vector<int> ids;
  for (const auto& w : split_words(text)) {
    auto it = index.find(w);
    ids.push_back(it == index.end() ? kUnkId : it->second);
  }
  return ids;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  std::ostringstream os;
  bool first = true;
  for (int id : ids) {
    if (id == kPadId || id == kUnkId) continue;
    if (!first) os << " ";
    os << token(id);
    first = false;
  }
  return os.str();
}

}  // namespace metaseg
