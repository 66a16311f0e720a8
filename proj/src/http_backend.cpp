#include "evidex/http_backend.hpp"

#include <cstdlib>

#include <httplib.h>

#include "evidex/error.hpp"
#include "evidex/text.hpp"

namespace evidex {

HttpBackendConfig HttpBackendConfig::from_env() {
  HttpBackendConfig c;
  if (const char* url = std::getenv("EXTRACTOR_API_URL"); url && *url) c.base_url = url;
  const char* key = std::getenv("EXTRACTOR_API_KEY");
  if (!key || !*key) throw ConfigError("EXTRACTOR_API_KEY is not set; the http backend needs an API key");
  c.api_key = key;
  return c;
}

namespace {

nlohmann::json nullable(nlohmann::json type) { return nlohmann::json::array({std::move(type), "null"}); }

nlohmann::json field_schema(const FieldSpec& spec) {
  nlohmann::json s;
  switch (spec.kind) {
    case FieldKind::integer: s["type"] = nullable("integer"); break;
    case FieldKind::real: s["type"] = nullable("number"); break;
    case FieldKind::text: s["type"] = nullable("string"); break;
    case FieldKind::enumeration: {
      s["type"] = nullable("string");
      nlohmann::json labels = spec.vocabulary;
      labels.push_back(nullptr);
      s["enum"] = labels;
      break;
    }
    case FieldKind::list_of_enum:
      s["type"] = nullable("array");
      s["items"] = {{"type", "string"}, {"enum", spec.vocabulary}};
      break;
    case FieldKind::list_of_text:
    case FieldKind::evidence_text:
      s["type"] = nullable("array");
      s["items"] = {{"type", "string"}};
      break;
  }
  std::string description = spec.description;
  if (spec.kind == FieldKind::evidence_text) {
    description += " Copy sentences verbatim from the document.";
  } else {
    description += " Use null when the document does not state it explicitly.";
  }
  s["description"] = text::trim(description);
  return s;
}

nlohmann::json json_schema_format(const PayloadSchema& payload) {
  return {{"type", "json_schema"},
          {"json_schema",
           {{"name", std::string(to_string(payload.id))}, {"schema", payload_json_schema(payload)}, {"strict", true}}}};
}

nlohmann::json image_annotation_format() {
  nlohmann::json schema = {
      {"type", "object"},
      {"properties",
       {{"image_type", {{"type", "string"}, {"enum", {"graph", "table", "text_only", "other"}}}},
        {"description", {{"type", "string"}, {"description", "One-sentence description of the image content."}}}}},
      {"required", {"image_type", "description"}},
      {"additionalProperties", false}};
  return {{"type", "json_schema"},
          {"json_schema", {{"name", "image_annotation"}, {"schema", schema}, {"strict", true}}}};
}

std::optional<std::string> error_message(const nlohmann::json& body) {
  if (!body.is_object()) return std::nullopt;
  if (body.contains("error")) {
    const auto& e = body["error"];
    if (e.is_string()) return e.get<std::string>();
    if (e.is_object() && e.contains("message") && e["message"].is_string()) return e["message"].get<std::string>();
    return e.dump();
  }
  if (body.value("object", "") == "error") return body.value("message", std::string("service error"));
  return std::nullopt;
}

std::optional<TransportError> check_status(int status, std::string_view body, nlohmann::json& parsed) {
  parsed = nlohmann::json::parse(body, nullptr, false);
  if (status != 200) {
    std::string message = parsed.is_discarded() ? std::string(body.substr(0, 500))
                                                : error_message(parsed).value_or(std::string(body.substr(0, 500)));
    if (parsed.is_object() && parsed.contains("message") && parsed["message"].is_string())
      message = parsed["message"].get<std::string>();
    return TransportError{status, message};
  }
  if (parsed.is_discarded()) return TransportError{502, "response body is not JSON"};
  if (auto msg = error_message(parsed)) return TransportError{200, *msg};
  return std::nullopt;
}

nlohmann::json parse_embedded(const nlohmann::json& v) {
  if (v.is_string()) {
    auto j = nlohmann::json::parse(v.get<std::string>(), nullptr, false);
    return j.is_discarded() ? nlohmann::json::object() : j;
  }
  return v.is_object() ? v : nlohmann::json::object();
}

std::pair<std::string, std::string> split_data_uri(const std::string& s) {
  if (s.starts_with("data:")) {
    const auto semi = s.find(';');
    const auto comma = s.find(',');
    if (semi != std::string::npos && comma != std::string::npos && semi < comma)
      return {s.substr(5, semi - 5), s.substr(comma + 1)};
  }
  return {"image/png", s};
}

}  // namespace

nlohmann::json payload_json_schema(const PayloadSchema& payload) {
  nlohmann::json properties = nlohmann::json::object();
  nlohmann::json required = nlohmann::json::array();
  for (const auto& spec : payload.fields) {
    properties[spec.name] = field_schema(spec);
    required.push_back(spec.name);
  }
  return {{"type", "object"}, {"properties", properties}, {"required", required}, {"additionalProperties", false}};
}

nlohmann::json build_ocr_request(const AnnotationRequest& request, const HttpBackendConfig& config) {
  if (!request.pages || !request.data_url) throw InvalidArgument("OCR request needs a page range and a document");
  nlohmann::json pages = nlohmann::json::array();
  for (int p = request.pages->start; p < request.pages->end; ++p) pages.push_back(p);
  nlohmann::json j = {{"model", config.ocr_model},
                      {"document", {{"type", "document_url"}, {"document_url", *request.data_url}}},
                      {"pages", pages},
                      {"include_image_base64", request.include_images},
                      {"document_annotation_format", json_schema_format(*request.payload)}};
  if (request.include_images) j["bbox_annotation_format"] = image_annotation_format();
  return j;
}

nlohmann::json build_caption_request(const AnnotationRequest& request, const HttpBackendConfig& config) {
  if (!request.caption_text) throw InvalidArgument("caption request needs caption text");
  const std::string system =
      "You extract structured data from one figure or table caption of a scientific article. Report only what the "
      "caption states explicitly; use null otherwise. Evidence fields must quote the caption verbatim.";
  return {{"model", config.chat_model},
          {"temperature", 0},
          {"messages",
           {{{"role", "system"}, {"content", system}}, {{"role", "user"}, {"content", *request.caption_text}}}},
          {"response_format", json_schema_format(*request.payload)}};
}

AnnotateResult parse_ocr_response(const AnnotationRequest& request, int status, std::string_view body) {
  nlohmann::json j;
  if (auto err = check_status(status, body, j)) return *err;
  std::vector<std::string> markdowns;
  std::vector<ImageObject> images;
  for (const auto& page : j.value("pages", nlohmann::json::array())) {
    markdowns.push_back(page.value("markdown", ""));
    const int index = page.value("index", 0);
    for (const auto& im : page.value("images", nlohmann::json::array())) {
      ImageObject img;
      img.id = im.value("id", "");
      img.page = index;
      img.bbox = {im.value("top_left_x", 0), im.value("top_left_y", 0), im.value("bottom_right_x", 0),
                  im.value("bottom_right_y", 0)};
      if (im.contains("image_base64") && im["image_base64"].is_string()) {
        auto [mime, data] = split_data_uri(im["image_base64"].get<std::string>());
        img.mime = mime;
        img.image_base64 = data;
      }
      const auto ann = parse_embedded(im.value("image_annotation", nlohmann::json()));
      img.description = ann.value("description", "");
      img.region_type = parse_region_type(ann.value("image_type", "other")).value_or(RegionType::other);
      images.push_back(std::move(img));
    }
  }
  const auto annotation = parse_embedded(j.value("document_annotation", nlohmann::json()));
  return make_annotation(request, annotation, std::move(markdowns), std::move(images));
}

AnnotateResult parse_caption_response(const AnnotationRequest& request, int status, std::string_view body) {
  nlohmann::json j;
  if (auto err = check_status(status, body, j)) return *err;
  const auto& choices = j.value("choices", nlohmann::json::array());
  if (choices.empty()) return TransportError{502, "completion without choices"};
  const auto content = choices[0].value("message", nlohmann::json::object()).value("content", nlohmann::json());
  return make_annotation(request, parse_embedded(content), {}, {});
}

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
  const auto scheme_end = config_.base_url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("EXTRACTOR_API_URL must start with http:// or https://");
  const auto path_start = config_.base_url.find('/', scheme_end + 3);
  origin_ = config_.base_url.substr(0, path_start);
  prefix_ = path_start == std::string::npos ? "" : config_.base_url.substr(path_start);
  while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
}

AnnotateResult HttpBackend::annotate(const AnnotationRequest& request) {
  const bool ocr = request.pages.has_value();
  const nlohmann::json payload = ocr ? build_ocr_request(request, config_) : build_caption_request(request, config_);
  httplib::Client client(origin_);
  client.set_connection_timeout(config_.timeout_seconds);
  client.set_read_timeout(config_.timeout_seconds);
  client.set_write_timeout(config_.timeout_seconds);
  const httplib::Headers headers{{"Authorization", "Bearer " + config_.api_key}, {"Accept", "application/json"}};
  const std::string path = prefix_ + (ocr ? "/v1/ocr" : "/v1/chat/completions");
  const auto res = client.Post(path, headers, payload.dump(), "application/json");
  if (!res) {
    // No HTTP response at all (refused, reset, timed out): report it as a
    // service-unavailable so the retry policy treats it as transient.
    return TransportError{503, "no response from service: " + httplib::to_string(res.error())};
  }
  return ocr ? parse_ocr_response(request, res->status, res->body)
             : parse_caption_response(request, res->status, res->body);
}

}  // namespace evidex
