#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "misder/data.hpp"

namespace misder::data {

enum class ExtractorKind { offline_mean, sidecar_file, http_llm };

ExtractorKind parse_extractor(const std::string& name);

struct ExtractorConfig {
  ExtractorKind kind = ExtractorKind::offline_mean;
  std::filesystem::path sidecar;  // JSON-lines {"id","event"}
  std::string endpoint;           // full URL of an OpenAI-compatible chat-completions route
  std::string api_key;            // defaults to $MISDER_LLM_KEY
  std::string model = "gpt-3.5-turbo";
  int retries = 3;
  int backoff_ms = 200;
  int timeout_s = 30;
};

/// Fills endpoint/api_key from MISDER_LLM_ENDPOINT / MISDER_LLM_KEY when unset.
ExtractorConfig with_environment(ExtractorConfig cfg);

inline constexpr const char* kEventPrompt = "Extract the event from the article.";

struct EventExtraction {
  std::vector<std::string> events;  // one per input article
  bool downgraded = false;          // http_llm fell back to article texts
  std::vector<std::string> log;
};

EventExtraction extract_events(const std::vector<const NewsArticle*>& articles, const ExtractorConfig& cfg);

}  // namespace misder::data
