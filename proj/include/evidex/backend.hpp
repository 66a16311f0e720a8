#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "evidex/chunking.hpp"
#include "evidex/ingest.hpp"
#include "evidex/schema.hpp"

namespace evidex {

enum class RegionType { graph, table, text_only, other };

std::string_view to_string(RegionType t);
std::optional<RegionType> parse_region_type(std::string_view s);

struct ImageObject {
  std::string id;  // placeholder name used in the page markdown
  int page = 0;
  std::array<int, 4> bbox{};  // top-left x, top-left y, bottom-right x, bottom-right y
  std::string image_base64;  // bare base64, no data: prefix
  std::string mime = "image/png";
  std::string description;
  RegionType region_type = RegionType::other;
};

struct AnnotationRequest {
  SourceKey parent;
  std::string unit_id;
  std::shared_ptr<const std::string> data_url;
  std::optional<PageRange> pages;         // page chunks
  std::optional<std::string> caption_text;  // caption units
  const PayloadSchema* payload = nullptr;
  bool include_images = false;

  static AnnotationRequest for_unit(const DocumentUnit& unit, std::shared_ptr<const std::string> data_url,
                                    const PayloadSchema& payload, bool include_images);
};

enum class AnnotationStatus { ok, failed };

struct UnitAnnotation {
  SourceKey parent;
  std::string unit_id;
  PayloadId payload_id = PayloadId::meta_design;
  ValueMap values;
  std::vector<std::string> page_markdowns;
  std::vector<ImageObject> images;
  AnnotationStatus status = AnnotationStatus::ok;
  std::optional<std::string> error;
  int attempts = 0;
  double conformance = 1.0;
  int violations = 0;

  bool ok() const { return status == AnnotationStatus::ok; }

  static UnitAnnotation failed(const AnnotationRequest& request, std::string error, int attempts);
};

nlohmann::json to_json(const UnitAnnotation& a);
// Values are re-validated against `payload`, so a cached file can never
// smuggle out-of-vocabulary labels past the gate.
UnitAnnotation annotation_from_json(const nlohmann::json& j, const PayloadSchema& payload);

struct TransportError {
  int status = 0;
  std::string message;
};

using AnnotateResult = std::variant<UnitAnnotation, TransportError>;

// 429, 500/502/503/504, or a message mentioning "rate limit" / "quota".
bool is_retryable(const TransportError& err);

// Builds a validated ok annotation from a raw document annotation.
UnitAnnotation make_annotation(const AnnotationRequest& request, const nlohmann::json& raw_values,
                               std::vector<std::string> page_markdowns, std::vector<ImageObject> images);

class AnnotationBackend {
 public:
  virtual ~AnnotationBackend() = default;
  // Must be safe to call concurrently. Never retries.
  virtual AnnotateResult annotate(const AnnotationRequest& request) = 0;
};

}  // namespace evidex
