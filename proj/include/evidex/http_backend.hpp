#pragma once

#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "evidex/backend.hpp"

namespace evidex {

// Client for a Mistral-style OCR service: page chunks go to /v1/ocr with a
// document annotation schema, caption units to /v1/chat/completions with a
// JSON-schema response format.
struct HttpBackendConfig {
  std::string base_url = "https://api.mistral.ai";
  std::string api_key;
  std::string ocr_model = "mistral-ocr-latest";
  std::string chat_model = "mistral-small-latest";
  int timeout_seconds = 120;

  // EXTRACTOR_API_URL (optional) and EXTRACTOR_API_KEY (required; ConfigError
  // when missing).
  static HttpBackendConfig from_env();
};

// Strict JSON schema for one payload: every field required and nullable,
// closed vocabularies as enums, descriptions carried over as guidance.
nlohmann::json payload_json_schema(const PayloadSchema& payload);

nlohmann::json build_ocr_request(const AnnotationRequest& request, const HttpBackendConfig& config);
nlohmann::json build_caption_request(const AnnotationRequest& request, const HttpBackendConfig& config);

AnnotateResult parse_ocr_response(const AnnotationRequest& request, int status, std::string_view body);
AnnotateResult parse_caption_response(const AnnotationRequest& request, int status, std::string_view body);

class HttpBackend : public AnnotationBackend {
 public:
  explicit HttpBackend(HttpBackendConfig config);

  AnnotateResult annotate(const AnnotationRequest& request) override;

 private:
  HttpBackendConfig config_;
  std::string origin_;  // scheme://host[:port]
  std::string prefix_;  // path below the origin, no trailing slash
};

}  // namespace evidex
