#include "evidex/schema.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <regex>
#include <set>

#include <fmt/format.h>

#include "evidex/error.hpp"
#include "evidex/text.hpp"

namespace evidex {

namespace {

constexpr std::array<std::pair<FieldKind, std::string_view>, 7> kKindNames = {{
    {FieldKind::integer, "integer"},
    {FieldKind::real, "real"},
    {FieldKind::text, "text"},
    {FieldKind::enumeration, "enum"},
    {FieldKind::list_of_enum, "list_of_enum"},
    {FieldKind::list_of_text, "list_of_text"},
    {FieldKind::evidence_text, "evidence_text"},
}};

}  // namespace

std::string_view to_string(PayloadId id) {
  switch (id) {
    case PayloadId::meta_design: return "meta_design";
    case PayloadId::population_indications: return "population_indications";
    case PayloadId::methods: return "methods";
    case PayloadId::outcomes: return "outcomes";
    case PayloadId::diagnostic_performance: return "diagnostic_performance";
  }
  return "unknown";
}

std::optional<PayloadId> parse_payload_id(std::string_view s) {
  for (PayloadId id : kPayloadOrder)
    if (to_string(id) == s) return id;
  return std::nullopt;
}

std::string_view to_string(FieldKind kind) {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name;
  return "unknown";
}

std::optional<FieldKind> parse_field_kind(std::string_view s) {
  for (const auto& [k, name] : kKindNames)
    if (name == s) return k;
  return std::nullopt;
}

std::optional<std::string> FieldSpec::resolve_label(std::string_view raw) const {
  const std::string c = text::canonical(raw);
  for (const auto& label : vocabulary)
    if (label == c) return label;
  if (const auto it = aliases.find(c); it != aliases.end()) return it->second;
  return std::nullopt;
}

const FieldSpec* PayloadSchema::field(std::string_view name) const {
  for (const auto& f : fields)
    if (f.name == name) return &f;
  return nullptr;
}

std::vector<std::string> PayloadSchema::supported_by(std::string_view evidence_field) const {
  std::vector<std::string> out;
  for (const auto& f : fields)
    if (f.evidence_partner && *f.evidence_partner == evidence_field) out.push_back(f.name);
  return out;
}

const PayloadSchema& SchemaSet::payload(PayloadId id) const {
  for (const auto& p : payloads)
    if (p.id == id) return p;
  throw SchemaError(std::string(to_string(id)), "payload missing from schema set");
}

SchemaSet parse_schema_set(const nlohmann::json& doc) {
  if (!doc.is_object()) throw SchemaError("", "schema definition must be an object");
  SchemaSet set;
  set.name = doc.value("schema_set", "");
  set.version = doc.value("version", "");
  set.caption_pattern = doc.value("caption_pattern", "");
  if (set.version.empty()) throw SchemaError("version", "schema set must declare a version");
  if (!set.caption_pattern.empty()) {
    try {
      std::regex probe(set.caption_pattern, std::regex::icase);
    } catch (const std::regex_error& e) {
      throw SchemaError("caption_pattern", e.what());
    }
  }
  const auto& payloads = doc.value("payloads", nlohmann::json::array());
  if (!payloads.is_array() || payloads.size() != kPayloadOrder.size())
    throw SchemaError("payloads", fmt::format("expected exactly {} payloads", kPayloadOrder.size()));

  std::map<PayloadId, PayloadSchema> by_id;
  for (const auto& p : payloads) {
    const std::string pid = p.value("id", "");
    const auto id = parse_payload_id(pid);
    if (!id) throw SchemaError(pid, "unknown payload id");
    if (by_id.contains(*id)) throw SchemaError(pid, "duplicate payload");
    PayloadSchema schema;
    schema.id = *id;
    schema.version = set.version;
    std::set<std::string> names;
    for (const auto& f : p.value("fields", nlohmann::json::array())) {
      FieldSpec spec;
      spec.name = f.value("name", "");
      const std::string qualified = pid + "." + spec.name;
      if (spec.name.empty()) throw SchemaError(pid, "field without a name");
      if (!names.insert(spec.name).second) throw SchemaError(qualified, "duplicate field name");
      const auto kind = parse_field_kind(f.value("kind", ""));
      if (!kind) throw SchemaError(qualified, "unknown kind '" + f.value("kind", "") + "'");
      spec.kind = *kind;
      spec.description = f.value("description", "");
      if (f.contains("nullable") && !f.at("nullable").get<bool>())
        throw SchemaError(qualified, "every field must be nullable");
      if (f.contains("evidence_partner") && !f.at("evidence_partner").is_null())
        spec.evidence_partner = f.at("evidence_partner").get<std::string>();
      std::set<std::string> labels;
      for (const auto& v : f.value("vocabulary", nlohmann::json::array())) {
        std::string label;
        std::vector<std::string> aliases;
        if (v.is_string()) {
          label = v.get<std::string>();
        } else {
          label = v.value("label", "");
          aliases = v.value("aliases", std::vector<std::string>{});
        }
        label = text::canonical(label);
        if (label.empty()) throw SchemaError(qualified, "empty vocabulary label");
        if (!labels.insert(label).second) throw SchemaError(qualified, "duplicate vocabulary label '" + label + "'");
        spec.vocabulary.push_back(label);
        for (const auto& a : aliases) spec.aliases[text::canonical(a)] = label;
      }
      for (const auto& [alias, label] : spec.aliases)
        if (labels.contains(alias) && alias != label)
          throw SchemaError(qualified, "alias '" + alias + "' shadows a vocabulary label");
      if (spec.is_categorical() && spec.vocabulary.empty()) throw SchemaError(qualified, "enum field without vocabulary");
      if (!spec.is_categorical() && !spec.vocabulary.empty())
        throw SchemaError(qualified, "vocabulary given for a non-enum field");
      if (f.contains("plausible")) {
        const auto& r = f.at("plausible");
        NumericRule rule;
        if (r.contains("min")) rule.min = r.at("min").get<double>();
        if (r.contains("max")) rule.max = r.at("max").get<double>();
        rule.unit_pattern = r.value("unit_pattern", "");
        if (!rule.unit_pattern.empty()) {
          try {
            std::regex probe(rule.unit_pattern);
          } catch (const std::regex_error& e) {
            throw SchemaError(qualified, std::string("bad unit_pattern: ") + e.what());
          }
        }
        spec.rule = rule;
      }
      schema.fields.push_back(std::move(spec));
    }
    for (const auto& spec : schema.fields) {
      if (!spec.evidence_partner) continue;
      const FieldSpec* partner = schema.field(*spec.evidence_partner);
      const std::string qualified = pid + "." + spec.name;
      if (!partner) throw SchemaError(qualified, "evidence_partner '" + *spec.evidence_partner + "' does not exist");
      if (partner->kind != FieldKind::evidence_text)
        throw SchemaError(qualified, "evidence_partner '" + *spec.evidence_partner + "' is not an evidence_text field");
      if (spec.kind == FieldKind::evidence_text) throw SchemaError(qualified, "evidence fields cannot have partners");
    }
    by_id.emplace(*id, std::move(schema));
  }
  for (PayloadId id : kPayloadOrder) set.payloads.push_back(std::move(by_id.at(id)));
  return set;
}

SchemaSet load_schema_set(const std::filesystem::path& file) {
  std::filesystem::path path = file;
  if (!std::filesystem::exists(path) && std::filesystem::exists(path.string() + ".json")) path += ".json";
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read schema definition " + file.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("", std::string("schema definition does not parse: ") + e.what());
  }
  return parse_schema_set(doc);
}

nlohmann::ordered_json to_json(const SchemaSet& set) {
  nlohmann::ordered_json doc;
  doc["schema_set"] = set.name;
  doc["version"] = set.version;
  if (!set.caption_pattern.empty()) doc["caption_pattern"] = set.caption_pattern;
  doc["payloads"] = nlohmann::ordered_json::array();
  for (const auto& p : set.payloads) {
    nlohmann::ordered_json pj;
    pj["id"] = to_string(p.id);
    pj["fields"] = nlohmann::ordered_json::array();
    for (const auto& f : p.fields) {
      nlohmann::ordered_json fj;
      fj["name"] = f.name;
      fj["kind"] = to_string(f.kind);
      if (!f.description.empty()) fj["description"] = f.description;
      if (!f.vocabulary.empty()) {
        fj["vocabulary"] = nlohmann::ordered_json::array();
        for (const auto& label : f.vocabulary) {
          std::vector<std::string> aliases;
          for (const auto& [alias, target] : f.aliases)
            if (target == label) aliases.push_back(alias);
          if (aliases.empty()) {
            fj["vocabulary"].push_back(label);
          } else {
            fj["vocabulary"].push_back({{"label", label}, {"aliases", aliases}});
          }
        }
      }
      if (f.evidence_partner) fj["evidence_partner"] = *f.evidence_partner;
      if (f.rule) {
        nlohmann::ordered_json r;
        if (f.rule->min) r["min"] = *f.rule->min;
        if (f.rule->max) r["max"] = *f.rule->max;
        if (!f.rule->unit_pattern.empty()) r["unit_pattern"] = f.rule->unit_pattern;
        fj["plausible"] = r;
      }
      pj["fields"].push_back(fj);
    }
    doc["payloads"].push_back(pj);
  }
  return doc;
}

bool is_null(const FieldValue& v) {
  if (std::holds_alternative<std::monostate>(v)) return true;
  if (const auto* list = std::get_if<std::vector<std::string>>(&v)) return list->empty();
  return false;
}

nlohmann::json to_json(const FieldValue& v) {
  return std::visit(
      [](const auto& x) -> nlohmann::json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, std::monostate>) {
          return nullptr;
        } else {
          return x;
        }
      },
      v);
}

nlohmann::json to_json(const PayloadSchema& payload, const ValueMap& values) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& f : payload.fields) {
    const auto it = values.find(f.name);
    out[f.name] = it == values.end() ? nlohmann::json(nullptr) : to_json(it->second);
  }
  return out;
}

namespace {

std::optional<int64_t> as_integer(const nlohmann::json& v) {
  if (v.is_number_integer()) {
    if (v.is_number_unsigned() && v.get<uint64_t>() > static_cast<uint64_t>(std::numeric_limits<int64_t>::max()))
      return std::nullopt;
    return v.get<int64_t>();
  }
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (std::isfinite(d) && std::floor(d) == d && std::fabs(d) < 9.0e15) return static_cast<int64_t>(d);
  }
  return std::nullopt;
}

std::string describe(const nlohmann::json& v) {
  std::string s = v.dump();
  if (s.size() > 80) s = s.substr(0, 77) + "...";
  return s;
}

}  // namespace

ValidationResult validate_annotation(const PayloadSchema& payload, const nlohmann::json& raw) {
  ValidationResult result;
  for (const auto& f : payload.fields) result.values[f.name] = std::monostate{};
  if (!raw.is_object()) return result;

  for (const auto& [key, value] : raw.items()) {
    const FieldSpec* spec = payload.field(key);
    if (!spec) {
      ++result.unknown_keys;
      continue;
    }
    ++result.fields_present;
    const size_t before = result.violations.size();
    const auto violate = [&](Violation::Kind kind, std::string detail) {
      result.violations.push_back({spec->name, kind, std::move(detail)});
    };
    FieldValue typed;
    if (value.is_null()) {
      // explicit null: the model declined to answer, which is conforming
    } else {
      switch (spec->kind) {
        case FieldKind::integer:
          if (auto i = as_integer(value)) {
            typed = *i;
          } else {
            violate(Violation::Kind::type_mismatch, "expected integer, got " + describe(value));
          }
          break;
        case FieldKind::real:
          if (value.is_number()) {
            typed = value.get<double>();
          } else {
            violate(Violation::Kind::type_mismatch, "expected number, got " + describe(value));
          }
          break;
        case FieldKind::text:
          if (value.is_string()) {
            std::string s = text::trim(value.get<std::string>());
            if (!s.empty()) typed = std::move(s);
          } else {
            violate(Violation::Kind::type_mismatch, "expected text, got " + describe(value));
          }
          break;
        case FieldKind::enumeration:
          if (value.is_string()) {
            if (text::trim(value.get<std::string>()).empty()) break;
            if (auto label = spec->resolve_label(value.get<std::string>())) {
              typed = *label;
            } else {
              violate(Violation::Kind::out_of_vocabulary, "'" + value.get<std::string>() + "' not in vocabulary");
            }
          } else {
            violate(Violation::Kind::type_mismatch, "expected label, got " + describe(value));
          }
          break;
        case FieldKind::list_of_enum:
        case FieldKind::list_of_text:
        case FieldKind::evidence_text: {
          if (!value.is_array()) {
            violate(Violation::Kind::type_mismatch, "expected list, got " + describe(value));
            break;
          }
          std::vector<std::string> items;
          std::set<std::string> seen;
          for (const auto& item : value) {
            if (!item.is_string()) {
              violate(Violation::Kind::type_mismatch, "list item is not text: " + describe(item));
              continue;
            }
            std::string s = text::trim(item.get<std::string>());
            if (s.empty()) continue;
            if (spec->kind == FieldKind::list_of_enum) {
              auto label = spec->resolve_label(s);
              if (!label) {
                violate(Violation::Kind::out_of_vocabulary, "'" + s + "' not in vocabulary");
                continue;
              }
              s = *label;
            }
            if (seen.insert(s).second) items.push_back(std::move(s));
          }
          if (!items.empty()) typed = std::move(items);
          break;
        }
      }
    }
    if (result.violations.size() == before) ++result.fields_conforming;
    result.values[spec->name] = std::move(typed);
  }
  return result;
}

std::vector<std::string> derive_columns(const SchemaSet& set) {
  std::vector<std::string> columns{std::string(kSourceKeyColumn), std::string(kConflictColumn)};
  for (const auto& p : set.payloads)
    for (const auto& f : p.fields) columns.push_back(fmt::format("{}.{}", to_string(p.id), f.name));
  return columns;
}

}  // namespace evidex
