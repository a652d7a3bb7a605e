#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "misder/data.hpp"

namespace misder::data {

/// Lowercases Latin text, splits on whitespace and punctuation, and emits
/// each CJK ideograph as its own token.
std::vector<std::string> normalize_tokens(std::string_view text);

class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;
  static constexpr std::int32_t kCls = 2;

  Vocabulary();

  /// Tokens seen at least `min_freq` times, ordered by descending frequency
  /// then lexicographically. `max_size` (0 = unlimited) caps the total size.
  static Vocabulary build(const std::vector<NewsArticle>& articles, int max_len, int min_freq = 2,
                          std::size_t max_size = 0);

  /// Exactly max_len ids: CLS, then tokens (unknown → UNK), then PAD.
  std::vector<std::int32_t> encode(std::string_view text) const;
  std::vector<std::string> decode(const std::vector<std::int32_t>& ids) const;

  std::int32_t id_of(const std::string& token) const;
  const std::string& token_of(std::int32_t id) const;
  std::size_t size() const { return tokens_.size(); }
  int max_len() const { return max_len_; }

  std::string to_json() const;
  static Vocabulary from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
  int max_len_ = 32;
};

inline std::vector<std::int32_t> tokenize(const NewsArticle& article, const Vocabulary& vocab) {
  return vocab.encode(article.text);
}

}  // namespace misder::data
