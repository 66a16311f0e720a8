#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "evidex/consolidate.hpp"
#include "evidex/orchestrator.hpp"
#include "evidex/quality.hpp"
#include "evidex/schema.hpp"

namespace evidex {

inline constexpr std::string_view kListSeparator = "|";
inline constexpr std::string_view kEvidenceSeparator = "\xC2\xB6";  // pilcrow

// Table cell for one field value. Lists join with '|', evidence with the
// pilcrow; backslash, '|' and the pilcrow inside items are backslash-escaped.
// Null is the empty string.
std::string encode_cell(const FieldSpec& spec, const FieldValue& value);
// Inverse of encode_cell. Throws InvalidArgument on malformed numbers.
FieldValue decode_cell(const FieldSpec& spec, std::string_view cell);

std::vector<std::string> record_to_row(const SchemaSet& schema, const StudyRecord& record);
StudyRecord row_to_record(const SchemaSet& schema, const std::vector<std::string>& row);

// studies.csv: one row per study, header = derive_columns(schema).
class StudyTable {
 public:
  StudyTable(const SchemaSet& schema, std::filesystem::path file);

  // Creates the file with its header, or checks the existing header.
  // Throws SchemaVersionError when the header differs.
  void open();

  // Appends the record, or rewrites the file with the existing row for the
  // same source key replaced.
  void upsert(const StudyRecord& record);

  std::vector<std::vector<std::string>> rows() const;  // without header
  std::vector<StudyRecord> records() const;

 private:
  const SchemaSet& schema_;
  std::filesystem::path file_;
  std::vector<std::string> columns_;
  std::set<std::string> keys_;
};

// Header of bolded key-value pairs for every non-null field, grouped by
// payload in declaration order, then the pages with image placeholders
// replaced by inline base64 images.
std::string render_markdown(const SchemaSet& schema, const DocumentArtifacts& artifacts);

struct FrequencyTable {
  PayloadId payload = PayloadId::meta_design;
  std::string field;
  int studies_reporting = 0;
  std::vector<std::pair<std::string, int>> counts;  // count desc, value asc
};

// Every non-evidence field. List items count once per study.
std::vector<FrequencyTable> frequency_tables(const SchemaSet& schema, const std::vector<StudyRecord>& records);

// Values occurring more than `min_exclusive` times, at most `top_n` of them.
std::vector<std::pair<std::string, int>> chart_data(const FrequencyTable& table, int min_exclusive = 3,
                                                    std::size_t top_n = 20);

struct Stratification {
  std::string field_a;  // payload.field
  std::string field_b;
  std::vector<std::tuple<std::string, std::string, int>> counts;  // count desc, a asc, b asc
};

// Throws ConfigError for an unknown "payload.field" name.
Stratification composite_stratification(const SchemaSet& schema, const std::vector<StudyRecord>& records,
                                        const std::string& field_a, const std::string& field_b);

// Row per study in input order, column per derived column: 1 iff null.
// source_key is never null.
std::vector<std::vector<int>> missingness_matrix(const SchemaSet& schema, const std::vector<StudyRecord>& records);

struct CompletenessRow {
  std::string level;  // "payload" or "field"
  std::string name;
  int studies = 0;
  int complete = 0;
  double percent = 0;  // rounded to one decimal
};

std::vector<CompletenessRow> completeness_summary(const SchemaSet& schema, const std::vector<StudyRecord>& records);

struct AggregateOptions {
  std::vector<std::pair<std::string, std::string>> strata;
  bool charts = false;  // also write SVG bar charts
};

// Default strata for a schema: the molecule x concurrent-test pair when both
// fields exist.
std::vector<std::pair<std::string, std::string>> default_strata(const SchemaSet& schema);

// aggregates/, missingness.csv and completeness.csv under `out_dir`.
void write_aggregates(const std::filesystem::path& out_dir, const SchemaSet& schema,
                      const std::vector<StudyRecord>& records, const AggregateOptions& options);

void write_parquet_from_csv(const std::filesystem::path& csv_file, const std::filesystem::path& parquet_file);

// The run's DocumentSink: markdown, studies.csv, quality report, and at the
// end the Parquet copy and all aggregates.
class ArtifactWriter : public DocumentSink {
 public:
  ArtifactWriter(const SchemaSet& schema, std::filesystem::path out_dir, AggregateOptions options = {},
                 QualityWeights weights = {});

  void begin() override;
  void write_document(const DocumentArtifacts& artifacts) override;
  void finish(const std::vector<StudyRecord>& records, const RunReport& report) override;

 private:
  const SchemaSet& schema_;
  std::filesystem::path out_dir_;
  AggregateOptions options_;
  StudyTable table_;
  QualityMonitor quality_;
};

}  // namespace evidex
