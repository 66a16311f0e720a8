#include "evidex/consolidate.hpp"

#include <algorithm>
#include <charconv>
#include <set>

#include <fmt/format.h>

#include "evidex/error.hpp"
#include "evidex/text.hpp"

namespace evidex {

namespace {

const FieldValue kNull{};

}  // namespace

std::string format_scalar(const FieldValue& v) {
  if (const auto* i = std::get_if<int64_t>(&v)) return std::to_string(*i);
  if (const auto* d = std::get_if<double>(&v)) {
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, *d);
    return std::string(buf, p);
  }
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  if (const auto* l = std::get_if<std::vector<std::string>>(&v)) return text::join(*l, "|");
  return {};
}

bool scalar_equal(const FieldValue& a, const FieldValue& b) {
  if (a.index() != b.index()) return false;
  if (const auto* s = std::get_if<std::string>(&a)) return text::canonical(*s) == text::canonical(std::get<std::string>(b));
  return a == b;
}

std::vector<FieldValue> ConflictFlag::distinct_values() const {
  std::vector<FieldValue> out;
  for (const auto& o : observed) {
    if (std::none_of(out.begin(), out.end(), [&](const FieldValue& v) { return scalar_equal(v, o.value); }))
      out.push_back(o.value);
  }
  return out;
}

const FieldValue& MergedPayload::value(std::string_view field) const {
  const auto it = values.find(field);
  return it == values.end() ? kNull : it->second;
}

std::vector<std::string> MergedPayload::evidence(std::string_view field) const {
  if (const auto* l = std::get_if<std::vector<std::string>>(&value(field))) return *l;
  return {};
}

const MergedPayload& StudyRecord::payload(PayloadId id) const {
  for (const auto& p : payloads)
    if (p.payload == id) return p;
  throw InvalidArgument(fmt::format("study record has no payload {}", to_string(id)));
}

std::vector<ConflictFlag> StudyRecord::conflicts() const {
  std::vector<ConflictFlag> out;
  for (const auto& p : payloads) out.insert(out.end(), p.conflicts.begin(), p.conflicts.end());
  return out;
}

MergedPayload merge_payload(const PayloadSchema& payload, std::span<const UnitAnnotation> annotations) {
  for (const auto& a : annotations) {
    if (a.payload_id != payload.id)
      throw InvalidArgument(fmt::format("annotation {} is for payload {}, not {}", a.unit_id, to_string(a.payload_id),
                                        to_string(payload.id)));
    if (a.parent != annotations.front().parent)
      throw InvalidArgument(fmt::format("annotations from different documents: {} and {}",
                                        annotations.front().parent.hex(), a.parent.hex()));
  }

  MergedPayload merged;
  merged.payload = payload.id;
  for (const auto& spec : payload.fields) {
    FieldValue result;
    if (spec.is_list()) {
      std::vector<std::string> items;
      std::set<std::string> seen;
      for (const auto& a : annotations) {
        if (!a.ok()) continue;
        const auto it = a.values.find(spec.name);
        if (it == a.values.end()) continue;
        if (const auto* list = std::get_if<std::vector<std::string>>(&it->second)) {
          for (const auto& item : *list) {
            std::string t = text::trim(item);
            if (!t.empty() && seen.insert(text::canonical(t)).second) items.push_back(std::move(t));
          }
        }
      }
      if (!items.empty()) result = std::move(items);
    } else {
      ConflictFlag flag{payload.id, spec.name, {}};
      for (const auto& a : annotations) {
        if (!a.ok()) continue;
        const auto it = a.values.find(spec.name);
        if (it == a.values.end() || is_null(it->second)) continue;
        flag.observed.push_back({it->second, a.unit_id});
      }
      const auto distinct = flag.distinct_values();
      if (distinct.size() == 1) {
        result = distinct.front();
      } else if (distinct.size() > 1) {
        merged.conflicts.push_back(std::move(flag));
      }
    }
    merged.values[spec.name] = std::move(result);
  }
  return merged;
}

StudyRecord integrate_payloads(std::vector<MergedPayload> merged, const SourceKey& key,
                               std::vector<std::string> failed_units) {
  StudyRecord record;
  record.source_key = key;
  for (const PayloadId id : kPayloadOrder) {
    const auto n = std::count_if(merged.begin(), merged.end(), [&](const MergedPayload& m) { return m.payload == id; });
    if (n != 1)
      throw InvalidArgument(fmt::format("expected one merged {} payload, got {}", to_string(id), n));
    record.payloads.push_back(*std::find_if(merged.begin(), merged.end(),
                                            [&](const MergedPayload& m) { return m.payload == id; }));
  }
  std::vector<std::string> distinct;
  for (auto& u : failed_units)
    if (std::find(distinct.begin(), distinct.end(), u) == distinct.end()) distinct.push_back(std::move(u));
  record.failed_units = std::move(distinct);
  record.review_needed = !record.failed_units.empty() || !record.conflicts().empty();
  return record;
}

StudyRecord consolidate(const SchemaSet& schema, const SourceKey& key,
                        const std::map<PayloadId, std::vector<UnitAnnotation>>& annotations) {
  std::vector<MergedPayload> merged;
  std::vector<std::string> failed;
  // Failed unit ids in unit order: walk units position by position.
  std::size_t longest = 0;
  for (const auto& [id, list] : annotations) longest = std::max(longest, list.size());
  for (std::size_t i = 0; i < longest; ++i) {
    for (const PayloadId id : kPayloadOrder) {
      const auto it = annotations.find(id);
      if (it == annotations.end() || i >= it->second.size()) continue;
      if (!it->second[i].ok()) failed.push_back(it->second[i].unit_id);
    }
  }
  for (const PayloadId id : kPayloadOrder) {
    const auto it = annotations.find(id);
    const std::span<const UnitAnnotation> list =
        it == annotations.end() ? std::span<const UnitAnnotation>{} : std::span<const UnitAnnotation>(it->second);
    merged.push_back(merge_payload(schema.payload(id), list));
  }
  return integrate_payloads(std::move(merged), key, std::move(failed));
}

namespace {

std::string escape_conflict_value(std::string_view s) {
  std::string out;
  for (const char c : s) {
    if (c == '\\' || c == '|' || c == ';' || c == '{' || c == '}') out += '\\';
    out += c;
  }
  return out;
}

FieldValue typed_from_text(const FieldSpec* spec, const std::string& s) {
  if (spec && spec->kind == FieldKind::integer) {
    int64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec == std::errc() && p == s.data() + s.size()) return v;
  }
  if (spec && spec->kind == FieldKind::real) {
    double v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec == std::errc() && p == s.data() + s.size()) return v;
  }
  return s;
}

}  // namespace

std::string serialize_conflicts(const std::vector<ConflictFlag>& flags) {
  std::vector<std::string> parts;
  for (const auto& f : flags) {
    std::vector<std::string> values;
    for (const auto& v : f.distinct_values()) values.push_back(escape_conflict_value(format_scalar(v)));
    parts.push_back(fmt::format("{}.{}{{{}}}", to_string(f.payload), f.field, text::join(values, "|")));
  }
  return text::join(parts, ";");
}

std::vector<ConflictFlag> parse_conflicts(std::string_view s, const SchemaSet& schema) {
  std::vector<ConflictFlag> flags;
  size_t i = 0;
  while (i < s.size()) {
    const size_t brace = s.find('{', i);
    if (brace == std::string_view::npos) throw InvalidArgument(fmt::format("malformed conflict flags: {}", s));
    const std::string_view column = s.substr(i, brace - i);
    const size_t dot = column.find('.');
    const auto payload = dot == std::string_view::npos ? std::nullopt : parse_payload_id(column.substr(0, dot));
    if (!payload) throw InvalidArgument(fmt::format("malformed conflict flag column: {}", column));
    ConflictFlag flag{*payload, std::string(column.substr(dot + 1)), {}};
    const FieldSpec* spec = schema.payload(*payload).field(flag.field);
    std::string current;
    i = brace + 1;
    bool closed = false;
    while (i < s.size()) {
      const char c = s[i++];
      if (c == '\\' && i < s.size()) {
        current += s[i++];
      } else if (c == '|' || c == '}') {
        flag.observed.push_back({typed_from_text(spec, current), {}});
        current.clear();
        if (c == '}') {
          closed = true;
          break;
        }
      } else {
        current += c;
      }
    }
    if (!closed) throw InvalidArgument(fmt::format("unterminated conflict flag: {}", s));
    flags.push_back(std::move(flag));
    if (i < s.size() && s[i] == ';') ++i;
  }
  return flags;
}

}  // namespace evidex
