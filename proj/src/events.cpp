#include "misder/events.hpp"

// Eigen must precede httplib: <resolv.h> defines a `_res` macro.
#include "misder/autodiff.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <thread>
#include <unordered_map>

#include <httplib.h>
#include <json.hpp>

namespace misder::data {
namespace {

struct Url {
  std::string origin;  // scheme://host:port
  std::string path;
};

Url split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error("LLM endpoint must be an absolute URL: '" + url + "'");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::unordered_map<std::string, std::string> read_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open events sidecar '" + path.string() + "'");
  std::unordered_map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto rec = nlohmann::json::parse(line);
    out[rec.at("id").get<std::string>()] = rec.at("event").get<std::string>();
  }
  return out;
}

std::string ask(httplib::Client& client, const Url& url, const ExtractorConfig& cfg, const std::string& text) {
  nlohmann::json body;
  body["model"] = cfg.model;
  body["temperature"] = 0;
  body["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", std::string(kEventPrompt) + "\n\n" + text}}});
  httplib::Headers headers;
  if (!cfg.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg.api_key);
  auto res = client.Post(url.path, headers, body.dump(), "application/json");
  if (!res) throw Error("LLM request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw Error("LLM request returned HTTP " + std::to_string(res->status));
  const auto reply = nlohmann::json::parse(res->body);
  return reply.at("choices").at(0).at("message").at("content").get<std::string>();
}

}  // namespace

ExtractorKind parse_extractor(const std::string& name) {
  if (name == "offline_mean") return ExtractorKind::offline_mean;
  if (name == "sidecar_file") return ExtractorKind::sidecar_file;
  if (name == "http_llm") return ExtractorKind::http_llm;
  throw Error("unknown event extractor '" + name + "'");
}

ExtractorConfig with_environment(ExtractorConfig cfg) {
  if (cfg.endpoint.empty()) {
    if (const char* e = std::getenv("MISDER_LLM_ENDPOINT")) cfg.endpoint = e;
  }
  if (cfg.api_key.empty()) {
    if (const char* k = std::getenv("MISDER_LLM_KEY")) cfg.api_key = k;
  }
  return cfg;
}

EventExtraction extract_events(const std::vector<const NewsArticle*>& articles, const ExtractorConfig& cfg) {
  EventExtraction out;
  out.events.reserve(articles.size());
  switch (cfg.kind) {
    case ExtractorKind::offline_mean:
      for (const NewsArticle* a : articles) out.events.push_back(a->text);
      return out;
    case ExtractorKind::sidecar_file: {
      const auto events = read_sidecar(cfg.sidecar);
      for (const NewsArticle* a : articles) {
        auto it = events.find(a->id);
        if (it == events.end()) {
          out.log.push_back("sidecar has no event for id '" + a->id + "'; using article text");
          out.events.push_back(a->text);
        } else {
          out.events.push_back(it->second);
        }
      }
      return out;
    }
    case ExtractorKind::http_llm:
      break;
  }

  try {
    if (cfg.endpoint.empty()) throw Error("http_llm extractor needs an endpoint (config or MISDER_LLM_ENDPOINT)");
    const Url url = split_url(cfg.endpoint);
    httplib::Client client(url.origin);
    client.set_connection_timeout(cfg.timeout_s, 0);
    client.set_read_timeout(cfg.timeout_s, 0);
    for (const NewsArticle* a : articles) {
      std::string event;
      for (int attempt = 0;; ++attempt) {
        try {
          event = ask(client, url, cfg, a->text);
          break;
        } catch (const std::exception& e) {
          if (attempt >= cfg.retries) throw;
          out.log.push_back(std::string("retrying after: ") + e.what());
          std::this_thread::sleep_for(std::chrono::milliseconds(cfg.backoff_ms << attempt));
        }
      }
      out.events.push_back(std::move(event));
    }
  } catch (const std::exception& e) {
    out.log.push_back(std::string("http_llm downgraded to offline_mean: ") + e.what());
    out.downgraded = true;
    out.events.clear();
    for (const NewsArticle* a : articles) out.events.push_back(a->text);
  }
  return out;
}

}  // namespace misder::data
