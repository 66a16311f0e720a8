#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "evidex/backend.hpp"
#include "evidex/consolidate.hpp"
#include "evidex/schema.hpp"

namespace evidex {

// A line is an artifact line when it holds a run of at least `min_run`
// identical non-alphanumeric, non-space characters, or when more than
// `max_symbol_share` of its non-space characters are non-alphanumeric.
struct CorruptionRules {
  int min_run = 4;
  double max_symbol_share = 0.40;
};

struct QualityWeights {
  double corruption = 0.25;
  double numeric_sanity = 0.25;
  double type_conformance = 0.25;
  double structural_completeness = 0.25;

  void validate() const;  // ConfigError unless non-negative and summing to 1
};

struct QualityIndicators {
  double corruption = 0;  // share of clean lines
  double numeric_sanity = 0;
  double type_conformance = 0;
  double structural_completeness = 0;
};

bool is_artifact_line(std::string_view line, const CorruptionRules& rules = {});

// Share of non-empty lines that are clean; empty text scores 0.
double corruption_indicator(std::string_view text, const CorruptionRules& rules = {});

// Share of checked fields passing their plausibility rule; 1.0 when no field
// was checked. Numbers are range-checked; text values must match the unit
// pattern and their leading number must be in range. A list passes only if
// every item does.
double numeric_sanity(const SchemaSet& schema, const StudyRecord& record);

// Mean conformance over successful annotations; 0 when there are none.
double type_conformance(const std::vector<UnitAnnotation>& annotations);

// Whitespace-separated tokens.
int64_t count_tokens(std::string_view text);

// Share of pages whose token count reaches `floor_ratio` of the corpus median.
// A missing page never passes.
double structural_completeness(const std::vector<std::optional<std::string>>& pages, double corpus_median_tokens,
                               double floor_ratio = 0.10);

// 100 * sum(w_i * component_i).
double proxy_score(const QualityIndicators& ind, const QualityWeights& weights = {});

struct QualityRow {
  std::string source_key;
  QualityIndicators indicators;
  double proxy = 0;
};

// Collects per-document indicators during a run. Structural completeness
// needs the corpus-wide median, so it is settled in finish().
class QualityMonitor {
 public:
  explicit QualityMonitor(const SchemaSet& schema, QualityWeights weights = {}, CorruptionRules rules = {});

  void observe(const SourceKey& key, const StudyRecord& record, const std::vector<std::optional<std::string>>& pages,
               const std::vector<UnitAnnotation>& annotations);

  std::vector<QualityRow> finish() const;

 private:
  struct Pending {
    QualityRow row;
    std::vector<std::optional<std::string>> pages;
  };
  const SchemaSet& schema_;
  QualityWeights weights_;
  CorruptionRules rules_;
  std::vector<Pending> pending_;
};

struct WilsonInterval {
  double lower = 0;  // percent
  double upper = 0;
};

inline constexpr double kWilsonZ = 1.96;

// Wilson score interval for successes/n, in percent, unrounded.
// Throws InvalidArgument unless 0 <= successes <= n and n > 0.
WilsonInterval wilson_interval(int64_t successes, int64_t n, double z = kWilsonZ);

// Rounded to one decimal.
WilsonInterval round_interval(WilsonInterval w);

}  // namespace evidex
