#include "pert/vocab.hpp"

#include <cctype>
#include <fstream>

#include "pert/errors.hpp"

namespace pert {

std::vector<std::string> normalize_words(const std::string& text) {
  std::vector<std::string> words;
  std::string current;
  for (unsigned char ch : text) {
    if (ch < 0x80 && !std::isalnum(ch)) {
      if (!current.empty()) {
        words.push_back(std::move(current));
        current.clear();
      }
      continue;
    }
    current += static_cast<char>(ch < 0x80 ? std::tolower(ch) : ch);
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

std::string normalize_text(const std::string& text) {
  std::string out;
  for (const std::string& w : normalize_words(text)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) {
      throw IoError("vocabulary: empty token at position " + std::to_string(i));
    }
    const auto [_, inserted] = ids_.emplace(tokens_[i], kReservedCount + static_cast<int>(i));
    if (!inserted) {
      throw IoError("vocabulary: duplicate token '" + tokens_[i] + "'");
    }
  }
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("vocabulary: cannot open " + path);
  std::vector<std::string> tokens;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      throw IoError("vocabulary: empty line " + std::to_string(line_no) + " in " + path);
    }
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("vocabulary: cannot write " + path);
  for (const std::string& t : tokens_) out << t << '\n';
}

int Vocabulary::id_of(const std::string& token) const {
  const auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

std::uint64_t Vocabulary::content_hash() const {
  std::uint64_t h = 1469598103934665603ull;
  const auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 1099511628211ull;
  };
  for (const std::string& t : tokens_) {
    for (unsigned char c : t) mix(c);
    mix('\n');
  }
  return h;
}

std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab, std::size_t max_len) {
  if (max_len < 2) throw UsageError("tokenize: max_len must be at least 2 for [CLS] and [SEP]");
  std::vector<int> ids;
  ids.push_back(Vocabulary::kCls);
  for (const std::string& w : normalize_words(text)) {
    if (ids.size() + 1 >= max_len) break;
    ids.push_back(vocab.id_of(w));
  }
  ids.push_back(Vocabulary::kSep);
  return ids;
}

}  // namespace pert
