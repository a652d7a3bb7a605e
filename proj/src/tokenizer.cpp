#include "misder/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "misder/autodiff.hpp"

namespace misder::data {
namespace {

// Decodes one UTF-8 code point starting at text[i]; invalid bytes decode as
// themselves with length 1.
char32_t next_codepoint(std::string_view text, std::size_t& i) {
  const auto b0 = static_cast<unsigned char>(text[i]);
  std::size_t len = 1;
  char32_t cp = b0;
  if (b0 >= 0xF0 && b0 < 0xF8) {
    len = 4;
    cp = b0 & 0x07;
  } else if (b0 >= 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if (b0 >= 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  }
  if (i + len > text.size()) len = 1;
  if (len > 1) {
    for (std::size_t k = 1; k < len; ++k) {
      const auto b = static_cast<unsigned char>(text[i + k]);
      if ((b & 0xC0) != 0x80) {
        len = 1;
        cp = b0;
        break;
      }
      cp = (cp << 6) | (b & 0x3F);
    }
  }
  i += len;
  return cp;
}

bool is_cjk(char32_t cp) {
  return (cp >= 0x4E00 && cp <= 0x9FFF) || (cp >= 0x3400 && cp <= 0x4DBF) || (cp >= 0xF900 && cp <= 0xFAFF) ||
         (cp >= 0x20000 && cp <= 0x2A6DF);
}

bool is_separator(char32_t cp) {
  if (cp < 0x80) {
    const char c = static_cast<char>(cp);
    return std::isspace(static_cast<unsigned char>(c)) || std::ispunct(static_cast<unsigned char>(c));
  }
  // CJK symbols/punctuation, general punctuation, fullwidth ASCII punctuation.
  return (cp >= 0x3000 && cp <= 0x303F) || (cp >= 0x2000 && cp <= 0x206F) || (cp >= 0xFF01 && cp <= 0xFF0F) ||
         (cp >= 0xFF1A && cp <= 0xFF20) || (cp >= 0xFF3B && cp <= 0xFF40) || (cp >= 0xFF5B && cp <= 0xFF65) ||
         cp == 0x00A0;
}

}  // namespace

std::vector<std::string> normalize_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t start = i;
    const char32_t cp = next_codepoint(text, i);
    if (is_separator(cp)) {
      flush();
    } else if (is_cjk(cp)) {
      flush();
      out.emplace_back(text.substr(start, i - start));
    } else if (cp < 0x80) {
      current += static_cast<char>(std::tolower(static_cast<unsigned char>(cp)));
    } else {
      current.append(text.substr(start, i - start));
    }
  }
  flush();
  return out;
}

Vocabulary::Vocabulary() {
  tokens_ = {"[PAD]", "[UNK]", "[CLS]"};
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = static_cast<std::int32_t>(i);
}

Vocabulary Vocabulary::build(const std::vector<NewsArticle>& articles, int max_len, int min_freq, std::size_t max_size) {
  if (max_len < 1) throw Error("vocabulary: max_len must be positive");
  std::map<std::string, std::size_t> counts;
  for (const NewsArticle& a : articles) {
    for (auto& t : normalize_tokens(a.text)) ++counts[t];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  v.max_len_ = max_len;
  for (const auto& [tok, n] : ranked) {
    if (n < static_cast<std::size_t>(min_freq)) break;
    if (max_size != 0 && v.tokens_.size() >= max_size) break;
    if (v.index_.count(tok) != 0) continue;
    v.index_[tok] = static_cast<std::int32_t>(v.tokens_.size());
    v.tokens_.push_back(tok);
  }
  return v;
}

std::vector<std::int32_t> Vocabulary::encode(std::string_view text) const {
  std::vector<std::int32_t> ids(static_cast<std::size_t>(max_len_), kPad);
  ids[0] = kCls;
  std::size_t at = 1;
  for (const auto& tok : normalize_tokens(text)) {
    if (at >= ids.size()) break;
    ids[at++] = id_of(tok);
  }
  return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<std::int32_t>& ids) const {
  std::vector<std::string> out;
  for (std::int32_t id : ids) {
    if (id == kPad || id == kCls) continue;
    out.push_back(token_of(id));
  }
  return out;
}

std::int32_t Vocabulary::id_of(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw Error("vocabulary: id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::string Vocabulary::to_json() const {
  nlohmann::ordered_json j;
  j["max_len"] = max_len_;
  j["tokens"] = tokens_;
  return j.dump();
}

Vocabulary Vocabulary::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  Vocabulary v;
  v.max_len_ = j.at("max_len").get<int>();
  v.tokens_ = j.at("tokens").get<std::vector<std::string>>();
  if (v.tokens_.size() < 3 || v.tokens_[0] != "[PAD]" || v.tokens_[1] != "[UNK]" || v.tokens_[2] != "[CLS]") {
    throw Error("vocabulary: special tokens missing");
  }
  v.index_.clear();
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) v.index_[v.tokens_[i]] = static_cast<std::int32_t>(i);
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << to_json() << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open vocabulary '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

}  // namespace misder::data
