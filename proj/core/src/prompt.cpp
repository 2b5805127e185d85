#include "metaseg/prompt.hpp"
#include <algorithm>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

namespace metaseg {

void ImageMetadata::validate() const {
  if (!(latitude >= -90.0 && latitude <= 90.0))
    throw ValueError("metadata latitude " + std::to_string(latitude) + " outside [-90, 90]");
  if (!(longitude >= -180.0 && longitude <= 180.0))
    throw ValueError("metadata longitude " + std::to_string(longitude) + " outside [-180, 180]");
  if (resolution_m < 0.0) throw ValueError("metadata resolution must be positive");
}

namespace {

int replace_all(std::string& text, const std::string& key, const std::string& value) {
  int n = 0;
  size_t pos = 0;
  while ((pos = text.find(key, pos)) != std::string::npos) {
    text.replace(pos, key.size(), value);
    pos += value.size();
    n++;
  }
  return n;
}

}  // namespace

std::string build_question(const std::string& class_name, const ClimateZone& zone,
                           const std::string& templ) {
  std::string q = templ;
  int nc = replace_all(q, "{class}", class_name);
  int nz = replace_all(q, "{zone}", zone.description);
  if (nc == 0) throw ValueError("question template is missing the {class} placeholder");
  if (nz == 0) throw ValueError("question template is missing the {zone} placeholder");
  return q;
}

// ---------------------------------------------------------------------------
// Canned provider
// ---------------------------------------------------------------------------

CannedProvider CannedProvider::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open canned prompt corpus " + path);
  std::map<std::pair<std::string, std::string>, std::string> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    lineno++;
    if (line.empty() || line[0] == '#') continue;
    while (!line.empty() && line.back() == '\r') line.pop_back();
    size_t p1 = line.find('|');
    size_t p2 = p1 == std::string::npos ? std::string::npos : line.find('|', p1 + 1);
    if (p2 == std::string::npos)
      throw IoError("malformed canned corpus line " + std::to_string(lineno) + " in " + path);
    entries[{line.substr(0, p1), line.substr(p1 + 1, p2 - p1 - 1)}] = line.substr(p2 + 1);
  }
  return CannedProvider(std::move(entries));
}

std::string CannedProvider::query(const PromptQuery& q) {
  auto it = entries_.find({q.zone_code, q.class_name});
  if (it != entries_.end()) return it->second;
  fallbacks_++;
  std::string msg = "canned corpus has no entry for (" + q.zone_code + ", " + q.class_name +
                    "), using generic description";
  if (warn_)
    warn_(msg);
  else
    std::cerr << "[prompt] warning: " << msg << "\n";
  return "a typical " + q.class_name +
         " area in remote sensing imagery with its usual color, shape, and texture.";
}

// ---------------------------------------------------------------------------
// HTTP provider with on-disk cache
// ---------------------------------------------------------------------------

std::string HttpProvider::question_hash(const std::string& question, const std::string& model) {
  // FNV-1a 64 over model + separator + question.
  uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
  };
  mix(model);
  h ^= 0x1f;
  h *= 1099511628211ull;
  mix(question);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

std::string HttpProvider::query(const PromptQuery& q) {
  namespace fs = std::filesystem;
  std::string hash = question_hash(q.question, cfg_.model);
  fs::path cache_file = fs::path(cfg_.cache_dir) / (hash + ".txt");
  if (fs::exists(cache_file)) {
    std::ifstream in(cache_file);
    std::ostringstream body;
    body << in.rdbuf();
    return body.str();
  }

  // scheme://host[:port][/path]
  std::string url = cfg_.url;
  size_t scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ValueError("http provider: bad url " + url);
  size_t host_start = scheme_end + 3;
  size_t path_start = url.find('/', host_start);
  std::string base = url.substr(0, path_start == std::string::npos ? url.size() : path_start);
  std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

  nlohmann::json body = {
      {"model", cfg_.model},
      {"messages", {{{"role", "user"}, {"content", q.question}}}},
  };
  httplib::Headers headers;
  if (const char* token = std::getenv(cfg_.auth_token_env.c_str()); token && *token)
    headers.emplace("Authorization", std::string("Bearer ") + token);

  std::string last_error;
  for (int attempt = 1; attempt <= cfg_.max_retries; ++attempt) {
    httplib::Client client(base);
    client.set_connection_timeout(cfg_.timeout_seconds);
    client.set_read_timeout(cfg_.timeout_seconds);
    network_calls_++;
    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res) {
      last_error = "transport error " + httplib::to_string(res.error());
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      last_error = "http status " + std::to_string(res->status);
      continue;
    }
    try {
      auto parsed = nlohmann::json::parse(res->body);
      std::string answer = parsed.at("choices").at(0).at("message").at("content");
      if (answer.empty()) {
        last_error = "empty completion";
        continue;
      }
      fs::create_directories(cfg_.cache_dir);
      fs::path tmp = cache_file;
      tmp += ".tmp";
      {
        std::ofstream out(tmp);
        out << answer;
      }
      fs::rename(tmp, cache_file);
      return answer;
    } catch (const nlohmann::json::exception& e) {
      last_error = std::string("bad response body: ") + e.what();
    }
  }
  throw ProviderError("chat completion for question " + hash + " failed after " +
                      std::to_string(cfg_.max_retries) + " attempts: " + last_error);
}

// ---------------------------------------------------------------------------
// Bundle assembly
// ---------------------------------------------------------------------------

namespace {

void pad_to_length(std::vector<int>& ids, std::vector<uint8_t>& mask) {
  if (static_cast<int>(ids.size()) > kPromptLength) ids.resize(kPromptLength);  // drop tail
  mask.assign(static_cast<size_t>(kPromptLength), 0);
  for (size_t i = ids.size(); i < static_cast<size_t>(kPromptLength); ++i) mask[i] = 1;
  ids.resize(static_cast<size_t>(kPromptLength), Tokenizer::kPadId);
}

}  // namespace

PromptBundle assemble_bundle(const ImageMetadata& meta, const std::vector<std::string>& class_list,
                             const ClimateGrid& grid, PromptProvider& provider,
                             const Tokenizer& tokenizer, const std::string& templ) {
  if (class_list.empty()) throw ValueError("assemble_bundle: class list is empty");
  meta.validate();
  PromptBundle b;
  b.zone = grid.lookup(meta.latitude, meta.longitude);
  std::ostringstream merged;
  for (size_t i = 0; i < class_list.size(); ++i) {
    PromptQuery q;
    q.zone_code = b.zone.code;
    q.class_name = class_list[i];
    q.question = build_question(class_list[i], b.zone, templ);
    std::string answer = provider.query(q);
    b.per_class_prompts.emplace_back(class_list[i], answer);
    if (i) merged << " ";
    merged << answer;
  }
  b.merged_text = merged.str();
  b.token_ids = tokenizer.encode(b.merged_text);
  pad_to_length(b.token_ids, b.pad_mask);
  return b;
}

PromptBundle simple_prompt_bundle(const Tokenizer& tokenizer) {
  PromptBundle b;
  b.merged_text = kSimplePromptText;
  b.token_ids = tokenizer.encode(b.merged_text);
  pad_to_length(b.token_ids, b.pad_mask);
  return b;
}

Tokenizer build_prompt_tokenizer(const std::string& canned_corpus_path,
                                 const std::vector<std::string>& extra_texts) {
  CannedProvider canned = CannedProvider::load(canned_corpus_path);
  std::vector<std::string> corpus;
  for (const auto& [key, desc] : canned.entries()) {
    corpus.push_back(key.second);  // class name
    corpus.push_back(desc);
  }
  std::vector<std::string> zone_names;
  for (const auto& [code, name] : koppen_zone_names()) zone_names.push_back(name);
  std::sort(zone_names.begin(), zone_names.end());
  corpus.insert(corpus.end(), zone_names.begin(), zone_names.end());
  corpus.push_back(kDefaultQuestionTemplate);
  corpus.push_back(kSimplePromptText);
  corpus.insert(corpus.end(), extra_texts.begin(), extra_texts.end());
  return Tokenizer::build(corpus);
}

}  // namespace metaseg
