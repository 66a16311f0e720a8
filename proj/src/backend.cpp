#include "evidex/backend.hpp"

#include "evidex/error.hpp"
#include "evidex/text.hpp"

namespace evidex {

std::string_view to_string(RegionType t) {
  switch (t) {
    case RegionType::graph: return "graph";
    case RegionType::table: return "table";
    case RegionType::text_only: return "text_only";
    case RegionType::other: return "other";
  }
  return "other";
}

std::optional<RegionType> parse_region_type(std::string_view s) {
  const std::string lower = text::to_lower_ascii(text::trim(s));
  if (lower == "graph") return RegionType::graph;
  if (lower == "table") return RegionType::table;
  if (lower == "text_only" || lower == "text-only" || lower == "text only" || lower == "text-only image")
    return RegionType::text_only;
  if (lower == "other") return RegionType::other;
  return std::nullopt;
}

AnnotationRequest AnnotationRequest::for_unit(const DocumentUnit& unit, std::shared_ptr<const std::string> data_url,
                                              const PayloadSchema& payload, bool include_images) {
  AnnotationRequest r;
  r.parent = unit.parent;
  r.unit_id = unit.unit_id;
  r.data_url = std::move(data_url);
  r.payload = &payload;
  r.include_images = include_images;
  if (unit.kind == UnitKind::page_chunk) {
    r.pages = unit.pages;
  } else {
    r.caption_text = unit.caption_text;
  }
  return r;
}

UnitAnnotation UnitAnnotation::failed(const AnnotationRequest& request, std::string error, int attempts) {
  UnitAnnotation a;
  a.parent = request.parent;
  a.unit_id = request.unit_id;
  a.payload_id = request.payload->id;
  a.status = AnnotationStatus::failed;
  a.error = std::move(error);
  a.attempts = attempts;
  a.conformance = 0.0;
  return a;
}

bool is_retryable(const TransportError& err) {
  switch (err.status) {
    case 429:
    case 500:
    case 502:
    case 503:
    case 504:
      return true;
    default:
      break;
  }
  return text::contains_ci(err.message, "rate limit") || text::contains_ci(err.message, "quota");
}

UnitAnnotation make_annotation(const AnnotationRequest& request, const nlohmann::json& raw_values,
                               std::vector<std::string> page_markdowns, std::vector<ImageObject> images) {
  auto validated = validate_annotation(*request.payload, raw_values);
  UnitAnnotation a;
  a.parent = request.parent;
  a.unit_id = request.unit_id;
  a.payload_id = request.payload->id;
  a.values = std::move(validated.values);
  a.page_markdowns = std::move(page_markdowns);
  a.images = std::move(images);
  a.status = AnnotationStatus::ok;
  a.attempts = 1;
  a.conformance = validated.conformance();
  a.violations = static_cast<int>(validated.violations.size());
  return a;
}

nlohmann::json to_json(const UnitAnnotation& a) {
  nlohmann::json j;
  j["parent"] = a.parent.hex();
  j["unit_id"] = a.unit_id;
  j["payload_id"] = to_string(a.payload_id);
  j["status"] = a.ok() ? "ok" : "failed";
  j["error"] = a.error ? nlohmann::json(*a.error) : nlohmann::json(nullptr);
  j["attempts"] = a.attempts;
  nlohmann::json values = nlohmann::json::object();
  for (const auto& [name, v] : a.values) values[name] = to_json(v);
  j["values"] = values;
  j["page_markdowns"] = a.page_markdowns;
  j["images"] = nlohmann::json::array();
  for (const auto& img : a.images) {
    j["images"].push_back({{"id", img.id},
                           {"page", img.page},
                           {"bbox", img.bbox},
                           {"image_base64", img.image_base64},
                           {"mime", img.mime},
                           {"description", img.description},
                           {"region_type", to_string(img.region_type)}});
  }
  return j;
}

UnitAnnotation annotation_from_json(const nlohmann::json& j, const PayloadSchema& payload) {
  AnnotationRequest request;
  request.parent = SourceKey(j.at("parent").get<std::string>());
  request.unit_id = j.at("unit_id").get<std::string>();
  request.payload = &payload;
  if (j.at("payload_id").get<std::string>() != to_string(payload.id))
    throw InvalidArgument("cached annotation belongs to payload " + j.at("payload_id").get<std::string>());
  if (j.value("status", "ok") != "ok") {
    return UnitAnnotation::failed(request, j.value("error", std::string("failed")), j.value("attempts", 1));
  }
  std::vector<ImageObject> images;
  for (const auto& ij : j.value("images", nlohmann::json::array())) {
    ImageObject img;
    img.id = ij.value("id", "");
    img.page = ij.value("page", 0);
    img.bbox = ij.value("bbox", std::array<int, 4>{});
    img.image_base64 = ij.value("image_base64", "");
    img.mime = ij.value("mime", "image/png");
    img.description = ij.value("description", "");
    img.region_type = parse_region_type(ij.value("region_type", "other")).value_or(RegionType::other);
    images.push_back(std::move(img));
  }
  UnitAnnotation a = make_annotation(request, j.value("values", nlohmann::json::object()),
                                     j.value("page_markdowns", std::vector<std::string>{}), std::move(images));
  a.attempts = j.value("attempts", 1);
  return a;
}

}  // namespace evidex
