#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace evidex {

enum class PayloadId { meta_design, population_indications, methods, outcomes, diagnostic_performance };

inline constexpr std::array<PayloadId, 5> kPayloadOrder = {
    PayloadId::meta_design, PayloadId::population_indications, PayloadId::methods, PayloadId::outcomes,
    PayloadId::diagnostic_performance};

std::string_view to_string(PayloadId id);
std::optional<PayloadId> parse_payload_id(std::string_view s);

enum class FieldKind { integer, real, text, enumeration, list_of_enum, list_of_text, evidence_text };

std::string_view to_string(FieldKind kind);
std::optional<FieldKind> parse_field_kind(std::string_view s);

// Plausibility check applied by the quality monitor. `unit_pattern` is an
// ECMAScript regex the whole value must match (text and list_of_text fields).
struct NumericRule {
  std::optional<double> min;
  std::optional<double> max;
  std::string unit_pattern;
};

struct FieldSpec {
  std::string name;
  FieldKind kind = FieldKind::text;
  std::vector<std::string> vocabulary;
  // alias (trimmed, NFC) -> vocabulary label
  std::map<std::string, std::string> aliases;
  std::string description;
  std::optional<std::string> evidence_partner;
  std::optional<NumericRule> rule;
  bool nullable = true;

  bool is_list() const {
    return kind == FieldKind::list_of_enum || kind == FieldKind::list_of_text || kind == FieldKind::evidence_text;
  }
  bool is_categorical() const { return kind == FieldKind::enumeration || kind == FieldKind::list_of_enum; }

  // Exact match on trimmed+NFC input against labels, then aliases.
  std::optional<std::string> resolve_label(std::string_view raw) const;
};

struct PayloadSchema {
  PayloadId id = PayloadId::meta_design;
  std::string version;
  std::vector<FieldSpec> fields;

  const FieldSpec* field(std::string_view name) const;
  // Fields whose evidence_partner is `evidence_field`.
  std::vector<std::string> supported_by(std::string_view evidence_field) const;
};

struct SchemaSet {
  std::string name;
  std::string version;
  std::vector<PayloadSchema> payloads;  // kPayloadOrder
  std::string caption_pattern;          // empty: built-in caption grammar

  const PayloadSchema& payload(PayloadId id) const;
};

// Throws SchemaError naming the offending field on any invariant violation.
SchemaSet parse_schema_set(const nlohmann::json& doc);
SchemaSet load_schema_set(const std::filesystem::path& file);
nlohmann::ordered_json to_json(const SchemaSet& set);

// null | integer | real | text/enum | list
using FieldValue = std::variant<std::monostate, int64_t, double, std::string, std::vector<std::string>>;
using ValueMap = std::map<std::string, FieldValue, std::less<>>;

bool is_null(const FieldValue& v);
nlohmann::json to_json(const FieldValue& v);
nlohmann::json to_json(const PayloadSchema& payload, const ValueMap& values);

struct Violation {
  enum class Kind { type_mismatch, out_of_vocabulary };
  std::string field;
  Kind kind = Kind::type_mismatch;
  std::string detail;
};

struct ValidationResult {
  ValueMap values;  // every schema field, null when absent or rejected
  std::vector<Violation> violations;
  int unknown_keys = 0;
  int fields_present = 0;
  int fields_conforming = 0;

  // conforming / present; 1.0 when no schema field was present.
  double conformance() const {
    return fields_present == 0 ? 1.0 : static_cast<double>(fields_conforming) / fields_present;
  }
};

// Never throws on content: anything that does not fit the schema becomes null
// and is recorded as a violation.
ValidationResult validate_annotation(const PayloadSchema& payload, const nlohmann::json& raw);

// source_key, conflict_flags, then <payload>.<field> in declaration order.
std::vector<std::string> derive_columns(const SchemaSet& set);

inline constexpr std::string_view kSourceKeyColumn = "source_key";
inline constexpr std::string_view kConflictColumn = "conflict_flags";

}  // namespace evidex
