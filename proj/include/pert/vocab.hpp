#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace pert {

/// Lowercase, map ASCII punctuation to spaces, split on whitespace.
/// Bytes outside 7-bit ASCII are kept verbatim so UTF-8 survives intact.
std::vector<std::string> normalize_words(const std::string& text);

/// Same normalization, re-joined with single spaces (for substring matching).
std::string normalize_text(const std::string& text);

/// Word-level vocabulary with five reserved ids. File format: one token per
/// line, UTF-8; line i holds the token with id i + kReservedCount.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kQPad = 4;
  static constexpr int kReservedCount = 5;

  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);

  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  int size() const { return kReservedCount + static_cast<int>(tokens_.size()); }
  int id_of(const std::string& token) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// FNV-1a over the token list; ties checkpoints to the vocabulary they
  /// were trained with.
  std::uint64_t content_hash() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

/// [CLS] + word ids + [SEP], truncated to max_len with [SEP] kept last.
/// Unknown words map to [UNK]; empty text yields [CLS], [SEP].
std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab, std::size_t max_len);

}  // namespace pert
