#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "metaseg/climate.hpp"
#include "metaseg/tokenizer.hpp"

namespace metaseg {

struct ImageMetadata {
  double latitude = 0.0;
  double longitude = 0.0;
  std::string region_name;        // optional
  std::string acquisition_time;   // optional
  double resolution_m = 0.0;      // optional, 0 = unset

  void validate() const;
};

inline constexpr const char* kDefaultQuestionTemplate =
    "Describe the shape, color, and texture of {class} and its typical nearby geo-objects in a "
    "{zone} region, as seen in high-resolution remote sensing imagery.";

inline constexpr const char* kSimplePromptText = "It is a remote sensing image.";

inline constexpr int kPromptLength = 250;

// Deterministic template substitution; both {class} and {zone} must appear.
std::string build_question(const std::string& class_name, const ClimateZone& zone,
                           const std::string& templ = kDefaultQuestionTemplate);

struct PromptQuery {
  std::string zone_code;
  std::string class_name;
  std::string question;
};

class PromptProvider {
 public:
  virtual ~PromptProvider() = default;
  virtual std::string query(const PromptQuery& q) = 0;
};

// Offline provider backed by a corpus of `zone|class|description` records.
// Missing entries fall back to a generic per-class description with a warning.
class CannedProvider : public PromptProvider {
 public:
  static CannedProvider load(const std::string& path);
  explicit CannedProvider(std::map<std::pair<std::string, std::string>, std::string> entries)
      : entries_(std::move(entries)) {}

  std::string query(const PromptQuery& q) override;

  void set_warn_handler(std::function<void(const std::string&)> f) { warn_ = std::move(f); }
  int fallback_count() const { return fallbacks_; }
  const std::map<std::pair<std::string, std::string>, std::string>& entries() const {
    return entries_;
  }

 private:
  std::map<std::pair<std::string, std::string>, std::string> entries_;
  std::function<void(const std::string&)> warn_;
  int fallbacks_ = 0;
};

// Chat-completion endpoint with an on-disk response cache keyed by a content
// hash of the question, so reruns are reproducible without network access.
struct HttpProviderConfig {
  std::string url;            // e.g. http://localhost:8080/v1/chat/completions
  std::string model = "gpt-3.5-turbo";
  std::string auth_token_env = "METASEG_API_TOKEN";
  std::string cache_dir = "prompt_cache";
  int max_retries = 3;
  int timeout_seconds = 30;
};

class HttpProvider : public PromptProvider {
 public:
  explicit HttpProvider(HttpProviderConfig cfg) : cfg_(std::move(cfg)) {}
  std::string query(const PromptQuery& q) override;

  static std::string question_hash(const std::string& question, const std::string& model);
  int network_calls() const { return network_calls_; }

 private:
  HttpProviderConfig cfg_;
  int network_calls_ = 0;
};

// Metadata -> climate zone -> per-class prompts -> merged, tokenized, padded.
struct PromptBundle {
  std::vector<std::pair<std::string, std::string>> per_class_prompts;
  std::string merged_text;
  std::vector<int> token_ids;      // exactly kPromptLength
  std::vector<uint8_t> pad_mask;   // 1 at padding positions
  ClimateZone zone;
};

PromptBundle assemble_bundle(const ImageMetadata& meta, const std::vector<std::string>& class_list,
                             const ClimateGrid& grid, PromptProvider& provider,
                             const Tokenizer& tokenizer,
                             const std::string& templ = kDefaultQuestionTemplate);

// Fixed ablation prompt, tokenized and padded to the uniform length.
PromptBundle simple_prompt_bundle(const Tokenizer& tokenizer);

// Vocabulary over the canned corpus plus class names, zone names, the default
// question template, and the simple prompt. Built once at data-generation time.
Tokenizer build_prompt_tokenizer(const std::string& canned_corpus_path,
                                 const std::vector<std::string>& extra_texts = {});

}  // namespace metaseg
