#include <gtest/gtest.h>

#include "evidex/error.hpp"
#include "evidex/schema.hpp"
#include "support.hpp"

using namespace evidex;
using evidex::testing::bundled_schema;
using nlohmann::json;

namespace {

json minimal_schema() {
  json doc = {{"schema_set", "t"}, {"version", "t.v1"}, {"payloads", json::array()}};
  for (PayloadId id : kPayloadOrder)
    doc["payloads"].push_back({{"id", std::string(to_string(id))}, {"fields", json::array()}});
  doc["payloads"][0]["fields"] = {
      {{"name", "design"}, {"kind", "enum"}, {"vocabulary", {{{"label", "trial"}, {"aliases", {"RCT"}}}, "cohort"}},
       {"evidence_partner", "design_evidence"}},
      {{"name", "design_evidence"}, {"kind", "evidence_text"}}};
  return doc;
}

std::string schema_error_field(const json& doc) {
  try {
    parse_schema_set(doc);
  } catch (const SchemaError& e) {
    return e.field();
  }
  return "<no error>";
}

const PayloadSchema& meta() { return bundled_schema().payload(PayloadId::meta_design); }
const PayloadSchema& population() { return bundled_schema().payload(PayloadId::population_indications); }

}  // namespace

TEST(SchemaLoad, BundledSchemaShape) {
  const auto& s = bundled_schema();
  EXPECT_EQ(s.version, "doac.v1");
  ASSERT_EQ(s.payloads.size(), 5u);
  for (size_t i = 0; i < kPayloadOrder.size(); ++i) EXPECT_EQ(s.payloads[i].id, kPayloadOrder[i]);
  const auto* design = meta().field("study_design");
  ASSERT_NE(design, nullptr);
  EXPECT_EQ(design->kind, FieldKind::enumeration);
  EXPECT_EQ(design->evidence_partner, "study_design_evidence");
  EXPECT_EQ(design->resolve_label("RCT"), "randomized controlled trial");
  EXPECT_EQ(design->resolve_label(" randomised controlled trial "), "randomized controlled trial");
  EXPECT_EQ(design->resolve_label("rct"), std::nullopt);  // exact match only
  EXPECT_EQ(meta().supported_by("study_design_evidence"), (std::vector<std::string>{"study_design"}));
}

TEST(SchemaLoad, RoundTripsThroughJson) {
  const auto& s = bundled_schema();
  const auto again = parse_schema_set(json::parse(to_json(s).dump()));
  EXPECT_EQ(to_json(again).dump(), to_json(s).dump());
  EXPECT_EQ(derive_columns(again), derive_columns(s));
}

TEST(SchemaLoad, ColumnsInDeclarationOrder) {
  const auto cols = derive_columns(bundled_schema());
  ASSERT_GE(cols.size(), 4u);
  EXPECT_EQ(cols[0], "source_key");
  EXPECT_EQ(cols[1], "conflict_flags");
  EXPECT_EQ(cols[2], "meta_design.title");
  EXPECT_EQ(cols.back(), "diagnostic_performance.performance_evidence");
  size_t fields = 0;
  for (const auto& p : bundled_schema().payloads) fields += p.fields.size();
  EXPECT_EQ(cols.size(), fields + 2);
}

TEST(SchemaLoad, InvariantsNameTheField) {
  EXPECT_NO_THROW(parse_schema_set(minimal_schema()));

  auto doc = minimal_schema();
  doc["payloads"][0]["fields"][0]["vocabulary"].push_back("trial");
  EXPECT_EQ(schema_error_field(doc), "meta_design.design");

  doc = minimal_schema();
  doc["payloads"][0]["fields"][0]["evidence_partner"] = "missing";
  EXPECT_EQ(schema_error_field(doc), "meta_design.design");

  doc = minimal_schema();
  doc["payloads"][0]["fields"][1]["nullable"] = false;
  EXPECT_EQ(schema_error_field(doc), "meta_design.design_evidence");

  doc = minimal_schema();
  doc["payloads"][0]["fields"].push_back({{"name", "design"}, {"kind", "text"}});
  EXPECT_EQ(schema_error_field(doc), "meta_design.design");

  doc = minimal_schema();
  doc["payloads"][0]["fields"][0]["kind"] = "float";
  EXPECT_EQ(schema_error_field(doc), "meta_design.design");

  doc = minimal_schema();
  doc["payloads"][0]["fields"][0]["vocabulary"] = json::array();
  EXPECT_EQ(schema_error_field(doc), "meta_design.design");

  doc = minimal_schema();
  doc["payloads"][0]["fields"][0]["vocabulary"][0]["aliases"] = {"cohort"};
  EXPECT_EQ(schema_error_field(doc), "meta_design.design");

  doc = minimal_schema();
  doc["payloads"].erase(4);
  EXPECT_EQ(schema_error_field(doc), "payloads");

  doc = minimal_schema();
  doc["payloads"][4]["id"] = "meta_design";
  EXPECT_EQ(schema_error_field(doc), "meta_design");

  doc = minimal_schema();
  doc.erase("version");
  EXPECT_EQ(schema_error_field(doc), "version");
}

TEST(SchemaLoad, MissingFileIsConfigError) {
  EXPECT_THROW(load_schema_set(evidex::testing::source_dir() / "schemas" / "nope.json"), ConfigError);
}

TEST(Validate, TypedValuesAndAliases) {
  const auto r = validate_annotation(meta(), {{"title", "  A title "},
                                              {"year", 2021},
                                              {"study_design", "RCT"},
                                              {"study_design_evidence", {"We randomised.", "We randomised.", " "}},
                                              {"journal", nullptr}});
  EXPECT_TRUE(r.violations.empty());
  EXPECT_EQ(r.fields_present, 5);
  EXPECT_EQ(r.fields_conforming, 5);
  EXPECT_DOUBLE_EQ(r.conformance(), 1.0);
  EXPECT_EQ(std::get<std::string>(r.values.at("title")), "A title");
  EXPECT_EQ(std::get<int64_t>(r.values.at("year")), 2021);
  EXPECT_EQ(std::get<std::string>(r.values.at("study_design")), "randomized controlled trial");
  EXPECT_EQ(std::get<std::vector<std::string>>(r.values.at("study_design_evidence")),
            (std::vector<std::string>{"We randomised."}));
  EXPECT_TRUE(is_null(r.values.at("journal")));
  EXPECT_TRUE(is_null(r.values.at("field_specialty")));  // absent
}

TEST(Validate, ViolationsBecomeNull) {
  const auto r = validate_annotation(meta(), {{"year", "2021"},
                                              {"study_design", "umbrella review"},
                                              {"title", 7},
                                              {"bogus", 1}});
  EXPECT_EQ(r.unknown_keys, 1);
  EXPECT_EQ(r.fields_present, 3);
  EXPECT_EQ(r.fields_conforming, 0);
  ASSERT_EQ(r.violations.size(), 3u);
  EXPECT_TRUE(is_null(r.values.at("year")));
  EXPECT_TRUE(is_null(r.values.at("study_design")));
  bool oov = false;
  for (const auto& v : r.violations)
    if (v.field == "study_design") oov = v.kind == Violation::Kind::out_of_vocabulary;
  EXPECT_TRUE(oov);
}

TEST(Validate, ListOfEnumKeepsValidItems) {
  const auto r = validate_annotation(population(), {{"anticoagulation_indications", {"AF", "VTE", "scurvy", "AF"}},
                                                    {"total_patients_with_levels", 12.0}});
  EXPECT_EQ(std::get<std::vector<std::string>>(r.values.at("anticoagulation_indications")),
            (std::vector<std::string>{"atrial fibrillation", "venous thromboembolism"}));
  EXPECT_EQ(std::get<int64_t>(r.values.at("total_patients_with_levels")), 12);
  EXPECT_EQ(r.fields_conforming, 1);
  EXPECT_DOUBLE_EQ(r.conformance(), 0.5);
}

TEST(Validate, NonObjectIsAllNull) {
  const auto r = validate_annotation(meta(), json::array({1, 2}));
  EXPECT_EQ(r.fields_present, 0);
  EXPECT_EQ(r.values.size(), meta().fields.size());
  EXPECT_DOUBLE_EQ(r.conformance(), 1.0);
}

TEST(Validate, FractionalIntegerRejected) {
  const auto r = validate_annotation(meta(), {{"year", 2021.5}});
  EXPECT_EQ(r.violations.size(), 1u);
  EXPECT_EQ(r.violations[0].kind, Violation::Kind::type_mismatch);
}

TEST(FieldValueJson, RendersNullAndTypes) {
  EXPECT_EQ(to_json(FieldValue{}), json(nullptr));
  EXPECT_EQ(to_json(FieldValue{int64_t{3}}), json(3));
  EXPECT_EQ(to_json(FieldValue{std::vector<std::string>{"a"}}), json({"a"}));
  EXPECT_TRUE(is_null(FieldValue{std::vector<std::string>{}}));
}
