#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "evidex/backend.hpp"
#include "evidex/schema.hpp"

namespace evidex {

struct Observation {
  FieldValue value;
  std::string unit_id;  // empty when read back from an exported table
};

// Raised when units disagree on a scalar field. The consolidated value is
// left null and a reviewer decides.
struct ConflictFlag {
  PayloadId payload = PayloadId::meta_design;
  std::string field;
  std::vector<Observation> observed;  // every non-null observation, unit order

  // Distinct observed values in first-appearance order.
  std::vector<FieldValue> distinct_values() const;
};

struct MergedPayload {
  PayloadId payload = PayloadId::meta_design;
  ValueMap values;  // every schema field; evidence fields hold sentence lists
  std::vector<ConflictFlag> conflicts;

  const FieldValue& value(std::string_view field) const;
  // Sentences of an evidence_text field; empty if none.
  std::vector<std::string> evidence(std::string_view field) const;
};

struct StudyRecord {
  SourceKey source_key;
  std::vector<MergedPayload> payloads;  // kPayloadOrder
  bool review_needed = false;
  std::vector<std::string> failed_units;  // distinct unit ids

  const MergedPayload& payload(PayloadId id) const;
  std::vector<ConflictFlag> conflicts() const;
};

// Text scalars compare after trim + NFC; numbers compare exactly.
bool scalar_equal(const FieldValue& a, const FieldValue& b);

// Merges one payload's annotations across the units of one document, in the
// order given. Failed annotations contribute nothing. Throws InvalidArgument
// if the annotations belong to different documents or payloads.
MergedPayload merge_payload(const PayloadSchema& payload, std::span<const UnitAnnotation> annotations);

// Throws InvalidArgument unless exactly one merge per payload is supplied.
StudyRecord integrate_payloads(std::vector<MergedPayload> merged, const SourceKey& key,
                               std::vector<std::string> failed_units);

// Merge + integrate. `annotations` maps each payload to its annotations in
// unit order; failed units are collected across payloads.
StudyRecord consolidate(const SchemaSet& schema, const SourceKey& key,
                        const std::map<PayloadId, std::vector<UnitAnnotation>>& annotations);

// "payload.field{v1|v2}" entries joined by ';'. '\', '|', ';', '{' and '}'
// inside values are backslash-escaped.
std::string serialize_conflicts(const std::vector<ConflictFlag>& flags);
std::vector<ConflictFlag> parse_conflicts(std::string_view text, const SchemaSet& schema);

// Cell text for a scalar value: shortest round-trip form for numbers.
std::string format_scalar(const FieldValue& v);

}  // namespace evidex
