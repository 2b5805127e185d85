#pragma once

#include <string>
#include <vector>

#include "metaseg/common.hpp"

namespace metaseg {

// Whitespace/punctuation word tokenizer with a line-per-token vocabulary.
// Id 0 is PAD, id 1 is UNK; remaining ids follow first-seen corpus order.
class Tokenizer {
 public:
  static constexpr int kPadId = 0;
  static constexpr int kUnkId = 1;

  static Tokenizer build(const std::vector<std::string>& corpus);
  static Tokenizer from_vocab_file(const std::string& path);
  void save_vocab(const std::string& path) const;

  int vocab_size() const { return static_cast<int>(tokens_.size()); }
  int id_of(const std::string& token) const;  // kUnkId when absent
  const std::string& token(int id) const;

  std::vector<int> encode(const std::string& text) const;
  std::string decode(const std::vector<int>& ids) const;  // skips PAD/UNK

  // Lowercase, split on whitespace and punctuation (which is dropped).
  static std::vector<std::string> split_words(const std::string& text);

 private:
  std::vector<std::string> tokens_;
};

}  // namespace metaseg
