#include "evidex/export.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "evidex/csv.hpp"
#include "evidex/error.hpp"
#include "evidex/parquet.hpp"
#include "evidex/text.hpp"

namespace evidex {

namespace fs = std::filesystem;

namespace {

std::string escape_item(std::string_view item) {
  std::string out;
  for (std::size_t i = 0; i < item.size(); ++i) {
    if (item[i] == '\\' || item[i] == '|') {
      out += '\\';
    } else if (item.substr(i, kEvidenceSeparator.size()) == kEvidenceSeparator) {
      out += '\\';
    }
    out += item[i];
  }
  return out;
}

std::vector<std::string> split_items(std::string_view cell, std::string_view sep) {
  std::vector<std::string> items;
  std::string current;
  for (std::size_t i = 0; i < cell.size();) {
    if (cell[i] == '\\' && i + 1 < cell.size()) {
      ++i;
      // Copy one whole UTF-8 sequence so an escaped pilcrow stays intact.
      std::size_t len = 1;
      const auto lead = static_cast<unsigned char>(cell[i]);
      if (lead >= 0xF0) {
        len = 4;
      } else if (lead >= 0xE0) {
        len = 3;
      } else if (lead >= 0xC0) {
        len = 2;
      }
      current += cell.substr(i, len);
      i += len;
    } else if (cell.substr(i, sep.size()) == sep) {
      items.push_back(std::move(current));
      current.clear();
      i += sep.size();
    } else {
      current += cell[i++];
    }
  }
  items.push_back(std::move(current));
  return items;
}

void write_text_file(const fs::path& file, const std::string& content) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + file.string());
  out << content;
}

std::string rows_to_csv(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::string s = csv::format_row(header);
  for (const auto& r : rows) s += csv::format_row(r);
  return s;
}

}  // namespace

std::string encode_cell(const FieldSpec& spec, const FieldValue& value) {
  if (is_null(value)) return {};
  if (const auto* list = std::get_if<std::vector<std::string>>(&value)) {
    std::vector<std::string> escaped;
    for (const auto& item : *list) escaped.push_back(escape_item(item));
    return text::join(escaped, spec.kind == FieldKind::evidence_text ? kEvidenceSeparator : kListSeparator);
  }
  return format_scalar(value);
}

FieldValue decode_cell(const FieldSpec& spec, std::string_view cell) {
  if (cell.empty()) return {};
  switch (spec.kind) {
    case FieldKind::integer: {
      int64_t v = 0;
      const auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || p != cell.data() + cell.size())
        throw InvalidArgument(fmt::format("{}: '{}' is not an integer", spec.name, cell));
      return v;
    }
    case FieldKind::real: {
      double v = 0;
      const auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || p != cell.data() + cell.size())
        throw InvalidArgument(fmt::format("{}: '{}' is not a number", spec.name, cell));
      return v;
    }
    case FieldKind::text:
    case FieldKind::enumeration: return std::string(cell);
    case FieldKind::list_of_enum:
    case FieldKind::list_of_text: return split_items(cell, kListSeparator);
    case FieldKind::evidence_text: return split_items(cell, kEvidenceSeparator);
  }
  return {};
}

std::vector<std::string> record_to_row(const SchemaSet& schema, const StudyRecord& record) {
  std::vector<std::string> row{record.source_key.hex(), serialize_conflicts(record.conflicts())};
  for (const auto& payload : schema.payloads) {
    const MergedPayload& merged = record.payload(payload.id);
    for (const auto& spec : payload.fields) row.push_back(encode_cell(spec, merged.value(spec.name)));
  }
  return row;
}

StudyRecord row_to_record(const SchemaSet& schema, const std::vector<std::string>& row) {
  const std::size_t expected = derive_columns(schema).size();
  if (row.size() != expected)
    throw InvalidArgument(fmt::format("study row has {} cells, expected {}", row.size(), expected));
  std::vector<MergedPayload> merged;
  std::size_t col = 2;
  const auto conflicts = row[1].empty() ? std::vector<ConflictFlag>{} : parse_conflicts(row[1], schema);
  for (const auto& payload : schema.payloads) {
    MergedPayload m;
    m.payload = payload.id;
    for (const auto& spec : payload.fields) m.values[spec.name] = decode_cell(spec, row[col++]);
    for (const auto& c : conflicts)
      if (c.payload == payload.id) m.conflicts.push_back(c);
    merged.push_back(std::move(m));
  }
  return integrate_payloads(std::move(merged), SourceKey(row[0]), {});
}

StudyTable::StudyTable(const SchemaSet& schema, fs::path file)
    : schema_(schema), file_(std::move(file)), columns_(derive_columns(schema)) {}

void StudyTable::open() {
  if (fs::exists(file_) && fs::file_size(file_) > 0) {
    const auto parsed = csv::read_file(file_);
    if (parsed.empty() || parsed.front() != columns_) {
      throw SchemaVersionError(fmt::format(
          "{} was written with a different schema (header mismatch); refusing to mix schema versions in one table",
          file_.string()));
    }
    keys_.clear();
    for (std::size_t i = 1; i < parsed.size(); ++i)
      if (!parsed[i].empty()) keys_.insert(parsed[i][0]);
    return;
  }
  keys_.clear();
  write_text_file(file_, csv::format_row(columns_));
}

std::vector<std::vector<std::string>> StudyTable::rows() const {
  auto parsed = csv::read_file(file_);
  if (!parsed.empty()) parsed.erase(parsed.begin());
  return parsed;
}

std::vector<StudyRecord> StudyTable::records() const {
  std::vector<StudyRecord> out;
  for (const auto& row : rows()) out.push_back(row_to_record(schema_, row));
  return out;
}

void StudyTable::upsert(const StudyRecord& record) {
  const auto row = record_to_row(schema_, record);
  if (keys_.insert(record.source_key.hex()).second) {
    std::ofstream out(file_, std::ios::binary | std::ios::app);
    csv::write_row(out, row);
    return;
  }
  auto all = rows();
  for (auto& r : all)
    if (!r.empty() && r[0] == record.source_key.hex()) r = row;
  const fs::path tmp = file_.string() + ".tmp";
  write_text_file(tmp, rows_to_csv(columns_, all));
  fs::rename(tmp, file_);
}

namespace {

std::string display_value(const FieldValue& v) {
  if (const auto* l = std::get_if<std::vector<std::string>>(&v)) return text::join(*l, ", ");
  return format_scalar(v);
}

std::string quote_block(const std::string& s) {
  std::string out;
  for (const auto& line : text::split_lines(s)) out += "> " + line + "\n";
  return out;
}

std::string escape_alt(std::string_view s) {
  std::string out;
  for (const char c : s) {
    if (c == '[' || c == ']' || c == '\\') out += '\\';
    out += (c == '\n' ? ' ' : c);
  }
  return out;
}

}  // namespace

std::string render_markdown(const SchemaSet& schema, const DocumentArtifacts& a) {
  const StudyRecord& record = *a.record;
  std::string md;
  md += fmt::format("# {}\n\n", a.document ? a.document->canonical_id : record.source_key.hex());
  md += fmt::format("Source key: `{}`\n\n", record.source_key.hex());

  for (const auto& payload : schema.payloads) {
    const MergedPayload& merged = record.payload(payload.id);
    std::string section;
    for (const auto& spec : payload.fields) {
      const FieldValue& v = merged.value(spec.name);
      if (is_null(v)) continue;
      if (spec.kind == FieldKind::evidence_text) {
        section += fmt::format("**{}**:\n", spec.name);
        for (const auto& sentence : std::get<std::vector<std::string>>(v)) section += quote_block(sentence);
        section += "\n";
      } else {
        section += fmt::format("**{}**: {}\n\n", spec.name, display_value(v));
      }
    }
    if (!section.empty()) md += fmt::format("## {}\n\n{}", to_string(payload.id), section);
  }

  if (record.review_needed) {
    md += "## Review\n\n";
    for (const auto& c : record.conflicts()) md += fmt::format("- conflict: {}\n", serialize_conflicts({c}));
    for (const auto& u : record.failed_units) md += fmt::format("- failed unit: `{}`\n", u);
    md += "\n";
  }

  std::vector<const DocumentUnit*> captions;
  for (const auto& u : a.units)
    if (u.kind == UnitKind::caption_unit) captions.push_back(&u);
  if (!captions.empty()) {
    md += "## Captions\n\n";
    for (const auto* u : captions) md += fmt::format("- `{}` (page {}): {}\n", u->unit_id, u->caption_origin->page + 1,
                                                     text::join(text::split_lines(u->caption_text), " "));
    md += "\n";
  }

  std::map<std::string, const ImageObject*> images;
  for (const auto& img : a.images) images.emplace(img.id, &img);

  md += "## Pages\n";
  for (std::size_t p = 0; p < a.pages.size(); ++p) {
    md += fmt::format("\n### Page {}\n\n", p + 1);
    if (!a.pages[p]) {
      md += fmt::format("[page {} unavailable]\n", p + 1);
      continue;
    }
    for (const auto& line : text::split_lines(*a.pages[p])) {
      const std::string t = text::trim(line);
      const auto close = t.find("](");
      if (t.starts_with("![") && t.ends_with(")") && close != std::string::npos) {
        const std::string id = t.substr(close + 2, t.size() - close - 3);
        if (const auto it = images.find(id); it != images.end()) {
          const ImageObject& img = *it->second;
          md += fmt::format("![{}](data:{};base64,{})\n", escape_alt(img.description), img.mime, img.image_base64);
          md += fmt::format("*{}*: {}\n", to_string(img.region_type), img.description);
          continue;
        }
      }
      md += line + "\n";
    }
  }
  return md;
}

std::vector<FrequencyTable> frequency_tables(const SchemaSet& schema, const std::vector<StudyRecord>& records) {
  std::vector<FrequencyTable> tables;
  for (const auto& payload : schema.payloads) {
    for (const auto& spec : payload.fields) {
      if (spec.kind == FieldKind::evidence_text) continue;
      FrequencyTable t{payload.id, spec.name, 0, {}};
      std::map<std::string, int> counts;
      for (const auto& r : records) {
        const FieldValue& v = r.payload(payload.id).value(spec.name);
        if (is_null(v)) continue;
        ++t.studies_reporting;
        if (const auto* l = std::get_if<std::vector<std::string>>(&v)) {
          std::set<std::string> once(l->begin(), l->end());
          for (const auto& item : once) ++counts[item];
        } else {
          ++counts[format_scalar(v)];
        }
      }
      t.counts.assign(counts.begin(), counts.end());
      std::stable_sort(t.counts.begin(), t.counts.end(),
                       [](const auto& x, const auto& y) { return x.second > y.second; });
      tables.push_back(std::move(t));
    }
  }
  return tables;
}

std::vector<std::pair<std::string, int>> chart_data(const FrequencyTable& table, int min_exclusive, std::size_t top_n) {
  std::vector<std::pair<std::string, int>> out;
  for (const auto& entry : table.counts) {
    if (entry.second <= min_exclusive) continue;
    if (out.size() == top_n) break;
    out.push_back(entry);
  }
  return out;
}

namespace {

std::pair<PayloadId, const FieldSpec*> resolve_column(const SchemaSet& schema, const std::string& name) {
  const auto dot = name.find('.');
  const auto payload = dot == std::string::npos ? std::nullopt : parse_payload_id(name.substr(0, dot));
  const FieldSpec* spec = payload ? schema.payload(*payload).field(name.substr(dot + 1)) : nullptr;
  if (!spec) throw ConfigError(fmt::format("unknown field '{}' (expected <payload>.<field>)", name));
  return {*payload, spec};
}

std::vector<std::string> values_of(const FieldValue& v) {
  if (is_null(v)) return {};
  if (const auto* l = std::get_if<std::vector<std::string>>(&v)) {
    std::vector<std::string> out;
    for (const auto& item : *l)
      if (std::find(out.begin(), out.end(), item) == out.end()) out.push_back(item);
    return out;
  }
  return {format_scalar(v)};
}

}  // namespace

Stratification composite_stratification(const SchemaSet& schema, const std::vector<StudyRecord>& records,
                                        const std::string& field_a, const std::string& field_b) {
  const auto [pa, sa] = resolve_column(schema, field_a);
  const auto [pb, sb] = resolve_column(schema, field_b);
  std::map<std::pair<std::string, std::string>, int> counts;
  for (const auto& r : records) {
    const auto as = values_of(r.payload(pa).value(sa->name));
    const auto bs = values_of(r.payload(pb).value(sb->name));
    for (const auto& x : as)
      for (const auto& y : bs) ++counts[{x, y}];
  }
  Stratification s{field_a, field_b, {}};
  for (const auto& [k, n] : counts) s.counts.emplace_back(k.first, k.second, n);
  std::stable_sort(s.counts.begin(), s.counts.end(),
                   [](const auto& x, const auto& y) { return std::get<2>(x) > std::get<2>(y); });
  return s;
}

std::vector<std::vector<int>> missingness_matrix(const SchemaSet& schema, const std::vector<StudyRecord>& records) {
  std::vector<std::vector<int>> matrix;
  for (const auto& r : records) {
    std::vector<int> row{0, r.conflicts().empty() ? 1 : 0};
    for (const auto& payload : schema.payloads) {
      const MergedPayload& m = r.payload(payload.id);
      for (const auto& spec : payload.fields) row.push_back(is_null(m.value(spec.name)) ? 1 : 0);
    }
    matrix.push_back(std::move(row));
  }
  return matrix;
}

namespace {

double percent_1dp(int part, int whole) {
  if (whole == 0) return 0.0;
  return std::round(1000.0 * part / whole) / 10.0;
}

}  // namespace

std::vector<CompletenessRow> completeness_summary(const SchemaSet& schema, const std::vector<StudyRecord>& records) {
  std::vector<CompletenessRow> rows;
  const int n = static_cast<int>(records.size());
  for (const auto& payload : schema.payloads) {
    int complete = 0;
    for (const auto& r : records) {
      const MergedPayload& m = r.payload(payload.id);
      if (std::any_of(payload.fields.begin(), payload.fields.end(),
                      [&](const FieldSpec& f) { return !is_null(m.value(f.name)); }))
        ++complete;
    }
    rows.push_back({"payload", std::string(to_string(payload.id)), n, complete, percent_1dp(complete, n)});
  }
  for (const auto& payload : schema.payloads) {
    for (const auto& spec : payload.fields) {
      int complete = 0;
      for (const auto& r : records)
        if (!is_null(r.payload(payload.id).value(spec.name))) ++complete;
      rows.push_back({"field", fmt::format("{}.{}", to_string(payload.id), spec.name), n, complete,
                      percent_1dp(complete, n)});
    }
  }
  return rows;
}

std::vector<std::pair<std::string, std::string>> default_strata(const SchemaSet& schema) {
  const std::string a = "population_indications.doac_molecules";
  const std::string b = "methods.concurrent_tests";
  if (schema.payload(PayloadId::population_indications).field("doac_molecules") &&
      schema.payload(PayloadId::methods).field("concurrent_tests"))
    return {{a, b}};
  return {};
}

namespace {

std::string xml_escape(std::string_view s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string bar_chart_svg(const std::string& title, const std::vector<std::pair<std::string, int>>& data) {
  const int bar = 22, label_w = 260, plot_w = 400, top = 40;
  const int height = top + bar * static_cast<int>(std::max<std::size_t>(data.size(), 1)) + 20;
  int max_count = 1;
  for (const auto& d : data) max_count = std::max(max_count, d.second);
  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" "
      "font-size=\"12\">\n<text x=\"10\" y=\"22\" font-size=\"14\">{}</text>\n",
      label_w + plot_w + 60, height, xml_escape(title));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int y = top + bar * static_cast<int>(i);
    const int w = plot_w * data[i].second / max_count;
    svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n", label_w - 6, y + 15,
                       xml_escape(data[i].first));
    svg += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"#4c72b0\"/>\n", label_w, y + 3, w,
                       bar - 6);
    svg += fmt::format("<text x=\"{}\" y=\"{}\">{}</text>\n", label_w + w + 4, y + 15, data[i].second);
  }
  if (data.empty()) svg += fmt::format("<text x=\"10\" y=\"{}\">no value occurs more than three times</text>\n", top + 15);
  svg += "</svg>\n";
  return svg;
}

}  // namespace

void write_aggregates(const fs::path& out_dir, const SchemaSet& schema, const std::vector<StudyRecord>& records,
                      const AggregateOptions& options) {
  const fs::path agg = out_dir / "aggregates";
  fs::create_directories(agg / "charts");

  std::vector<std::vector<std::string>> manifest;
  for (const auto& t : frequency_tables(schema, records)) {
    const std::string stem = fmt::format("{}.{}", to_string(t.payload), t.field);
    std::vector<std::vector<std::string>> rows;
    for (const auto& [v, n] : t.counts) rows.push_back({v, std::to_string(n)});
    write_text_file(agg / (stem + ".csv"), rows_to_csv({"value", "count"}, rows));

    const auto chart = chart_data(t);
    std::vector<std::vector<std::string>> chart_rows;
    for (const auto& [v, n] : chart) chart_rows.push_back({v, std::to_string(n)});
    write_text_file(agg / "charts" / (stem + ".csv"), rows_to_csv({"value", "count"}, chart_rows));
    if (options.charts) write_text_file(agg / "charts" / (stem + ".svg"), bar_chart_svg(stem, chart));

    const FieldSpec* spec = schema.payload(t.payload).field(t.field);
    manifest.push_back({stem + ".csv", std::string(to_string(t.payload)), t.field, std::string(to_string(spec->kind)),
                        std::to_string(t.studies_reporting), std::to_string(t.counts.size())});
  }
  write_text_file(agg / "manifest.csv",
                  rows_to_csv({"file", "payload", "field", "kind", "studies_reporting", "distinct_values"}, manifest));

  for (const auto& [a, b] : options.strata) {
    const auto s = composite_stratification(schema, records, a, b);
    std::vector<std::vector<std::string>> rows;
    for (const auto& [x, y, n] : s.counts) rows.push_back({x, y, std::to_string(n)});
    write_text_file(agg / fmt::format("strata.{}__{}.csv", a, b), rows_to_csv({a, b, "count"}, rows));
  }

  const auto columns = derive_columns(schema);
  const auto matrix = missingness_matrix(schema, records);
  std::vector<std::vector<std::string>> mrows;
  for (std::size_t i = 0; i < records.size(); ++i) {
    std::vector<std::string> row{records[i].source_key.hex()};
    for (std::size_t c = 1; c < matrix[i].size(); ++c) row.push_back(std::to_string(matrix[i][c]));
    mrows.push_back(std::move(row));
  }
  write_text_file(out_dir / "missingness.csv", rows_to_csv(columns, mrows));

  std::vector<std::vector<std::string>> crows;
  for (const auto& c : completeness_summary(schema, records))
    crows.push_back({c.level, c.name, std::to_string(c.studies), std::to_string(c.complete), fmt::format("{:.1f}", c.percent)});
  write_text_file(out_dir / "completeness.csv", rows_to_csv({"level", "name", "studies", "complete", "percent"}, crows));
}

void write_parquet_from_csv(const fs::path& csv_file, const fs::path& parquet_file) {
  auto rows = csv::read_file(csv_file);
  if (rows.empty()) throw InvalidArgument(csv_file.string() + " has no header");
  parquet::Table table;
  table.columns = rows.front();
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::vector<std::optional<std::string>> row;
    for (auto& cell : rows[i]) row.push_back(cell.empty() ? std::nullopt : std::optional<std::string>(std::move(cell)));
    table.rows.push_back(std::move(row));
  }
  parquet::write_file(parquet_file, table);
}

ArtifactWriter::ArtifactWriter(const SchemaSet& schema, fs::path out_dir, AggregateOptions options,
                               QualityWeights weights)
    : schema_(schema),
      out_dir_(std::move(out_dir)),
      options_(std::move(options)),
      table_(schema, out_dir_ / "studies.csv"),
      quality_(schema, weights) {}

void ArtifactWriter::begin() {
  fs::create_directories(out_dir_ / "markdown");
  table_.open();
}

void ArtifactWriter::write_document(const DocumentArtifacts& artifacts) {
  const StudyRecord& record = *artifacts.record;
  write_text_file(out_dir_ / "markdown" / (record.source_key.hex() + ".md"), render_markdown(schema_, artifacts));
  table_.upsert(record);
  std::vector<UnitAnnotation> all;
  for (const auto& [p, list] : artifacts.annotations) all.insert(all.end(), list.begin(), list.end());
  quality_.observe(record.source_key, record, artifacts.pages, all);
}

void ArtifactWriter::finish(const std::vector<StudyRecord>&, const RunReport&) {
  write_parquet_from_csv(out_dir_ / "studies.csv", out_dir_ / "studies.parquet");
  write_aggregates(out_dir_, schema_, table_.records(), options_);

  // Quality rows of earlier runs are kept; this run's rows replace theirs.
  const fs::path qfile = out_dir_ / "quality_report.csv";
  const std::vector<std::string> header{"source_key", "corruption", "numeric_sanity", "type_conformance",
                                        "structural_completeness", "proxy_score"};
  std::vector<std::vector<std::string>> rows;
  if (fs::exists(qfile)) {
    rows = csv::read_file(qfile);
    if (!rows.empty()) rows.erase(rows.begin());
  }
  for (const auto& q : quality_.finish()) {
    std::vector<std::string> row{q.source_key,
                                 fmt::format("{:.4f}", q.indicators.corruption),
                                 fmt::format("{:.4f}", q.indicators.numeric_sanity),
                                 fmt::format("{:.4f}", q.indicators.type_conformance),
                                 fmt::format("{:.4f}", q.indicators.structural_completeness),
                                 fmt::format("{:.2f}", q.proxy)};
    const auto it = std::find_if(rows.begin(), rows.end(), [&](const auto& r) { return !r.empty() && r[0] == q.source_key; });
    if (it != rows.end()) {
      *it = std::move(row);
    } else {
      rows.push_back(std::move(row));
    }
  }
  write_text_file(qfile, rows_to_csv(header, rows));
}

}  // namespace evidex
