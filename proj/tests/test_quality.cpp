#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "evidex/consolidate.hpp"
#include "evidex/error.hpp"
#include "evidex/quality.hpp"
#include "support.hpp"

using namespace evidex;
using evidex::testing::bundled_schema;

namespace {

StudyRecord empty_record() {
  std::vector<MergedPayload> merged;
  for (PayloadId id : kPayloadOrder) merged.push_back(merge_payload(bundled_schema().payload(id), {}));
  return integrate_payloads(std::move(merged), source_key("doc.pdf"), {});
}

void set(StudyRecord& r, PayloadId id, const std::string& field, FieldValue v) {
  for (auto& p : r.payloads)
    if (p.payload == id) p.values[field] = std::move(v);
}

}  // namespace

// Reference values computed with mpmath at 50 digits (tests/oracles/wilson_oracle.py).
TEST(Wilson, MatchesHighPrecisionOracle) {
  std::ifstream in(evidex::testing::data_dir() / "wilson_oracle.tsv");
  ASSERT_TRUE(in);
  std::string header;
  std::getline(in, header);
  int rows = 0;
  for (std::string line; std::getline(in, line);) {
    std::istringstream ss(line);
    int64_t s = 0, n = 0;
    double lo = 0, hi = 0;
    ss >> s >> n >> lo >> hi;
    const auto w = wilson_interval(s, n);
    EXPECT_NEAR(w.lower, lo, 1e-9) << s << "/" << n;
    EXPECT_NEAR(w.upper, hi, 1e-9) << s << "/" << n;
    const auto r = round_interval(w);
    EXPECT_NEAR(r.lower, lo, 0.05 + 1e-9);
    EXPECT_NEAR(r.upper, hi, 0.05 + 1e-9);
    ++rows;
  }
  EXPECT_EQ(rows, 100);
}

// Intervals for n = 50 as they appear in the refinement results table.
TEST(Wilson, RefinementTableIntervals) {
  const std::vector<std::tuple<int, double, double>> cases = {
      {16, 20.8, 45.8}, {25, 36.6, 63.4}, {32, 50.1, 75.9}, {35, 56.2, 80.9}, {38, 62.6, 85.7},
      {40, 67.0, 88.8}, {45, 78.6, 95.7}, {48, 86.5, 98.9}, {50, 92.9, 100.0}};
  for (const auto& [s, lo, hi] : cases) {
    const auto r = round_interval(wilson_interval(s, 50));
    EXPECT_DOUBLE_EQ(r.lower, lo) << s;
    EXPECT_DOUBLE_EQ(r.upper, hi) << s;
  }
  const auto zero = round_interval(wilson_interval(0, 50));
  EXPECT_DOUBLE_EQ(zero.lower, 0.0);
  EXPECT_DOUBLE_EQ(zero.upper, 7.1);
}

TEST(Wilson, RejectsBadInput) {
  EXPECT_THROW(wilson_interval(1, 0), InvalidArgument);
  EXPECT_THROW(wilson_interval(-1, 5), InvalidArgument);
  EXPECT_THROW(wilson_interval(6, 5), InvalidArgument);
  EXPECT_THROW(wilson_interval(1, 5, 0), InvalidArgument);
}

TEST(Corruption, ArtifactLines) {
  EXPECT_FALSE(is_artifact_line("Plasma levels were 120 ng/mL (IQR 80-160)."));
  EXPECT_FALSE(is_artifact_line("Caf\xc3\xa9 \xc3\xa0 la cr\xc3\xa8me"));
  EXPECT_TRUE(is_artifact_line("Results ||||| here"));
  EXPECT_TRUE(is_artifact_line("#$%&*@!"));
  EXPECT_FALSE(is_artifact_line("a - b - c"));
  EXPECT_TRUE(is_artifact_line("....", {4, 0.4}));
  EXPECT_FALSE(is_artifact_line("...", {4, 1.0}));
}

TEST(Corruption, IndicatorBounds) {
  EXPECT_DOUBLE_EQ(corruption_indicator("clean line\nanother clean line"), 1.0);
  EXPECT_DOUBLE_EQ(corruption_indicator("~~~~~~\n#$%&*@!"), 0.0);
  EXPECT_DOUBLE_EQ(corruption_indicator("clean\n~~~~~~\n\n![img](img)"), 0.5);
  EXPECT_DOUBLE_EQ(corruption_indicator(""), 0.0);
}

// Adding artifact lines never raises the indicator; removing them never lowers it.
TEST(Corruption, Monotone) {
  std::mt19937 gen(5);
  const std::vector<std::string> clean = {"Plasma levels rose.", "Table 1. Characteristics", "n = 40 patients"};
  const std::vector<std::string> noisy = {"~~~~~~~~", "#$%&*@!", "||||"};
  for (int trial = 0; trial < 500; ++trial) {
    std::string text;
    for (int i = std::uniform_int_distribution<int>(1, 8)(gen); i > 0; --i)
      text += clean[gen() % clean.size()] + "\n";
    double prev = corruption_indicator(text);
    for (int k = 0; k < 5; ++k) {
      text += noisy[gen() % noisy.size()] + "\n";
      const double now = corruption_indicator(text);
      ASSERT_LE(now, prev);
      prev = now;
    }
  }
}

TEST(NumericSanity, RangeAndUnitChecks) {
  auto r = empty_record();
  EXPECT_DOUBLE_EQ(numeric_sanity(bundled_schema(), r), 1.0);
  set(r, PayloadId::meta_design, "year", int64_t{2019});
  EXPECT_DOUBLE_EQ(numeric_sanity(bundled_schema(), r), 1.0);
  set(r, PayloadId::meta_design, "year", int64_t{1066});
  EXPECT_DOUBLE_EQ(numeric_sanity(bundled_schema(), r), 0.0);
  set(r, PayloadId::population_indications, "total_patients_with_levels", int64_t{40});
  EXPECT_DOUBLE_EQ(numeric_sanity(bundled_schema(), r), 0.5);
}

TEST(NumericSanity, MonotoneInImplausibleFields) {
  // Replacing a plausible value by an implausible one never raises the score.
  auto r = empty_record();
  set(r, PayloadId::meta_design, "year", int64_t{2019});
  set(r, PayloadId::population_indications, "total_patients_with_levels", int64_t{40});
  const double all_ok = numeric_sanity(bundled_schema(), r);
  set(r, PayloadId::population_indications, "total_patients_with_levels", int64_t{0});
  const double one_bad = numeric_sanity(bundled_schema(), r);
  set(r, PayloadId::meta_design, "year", int64_t{3000});
  const double two_bad = numeric_sanity(bundled_schema(), r);
  EXPECT_GT(all_ok, one_bad);
  EXPECT_GT(one_bad, two_bad);
  EXPECT_DOUBLE_EQ(two_bad, 0.0);
}

TEST(TypeConformance, MeanOverSuccessful) {
  std::vector<UnitAnnotation> anns(3);
  anns[0].conformance = 1.0;
  anns[1].conformance = 0.5;
  anns[2].status = AnnotationStatus::failed;
  anns[2].conformance = 0.0;
  EXPECT_DOUBLE_EQ(type_conformance(anns), 0.75);
  EXPECT_DOUBLE_EQ(type_conformance({}), 0.0);
}

TEST(Structural, FloorAgainstMedian) {
  EXPECT_EQ(count_tokens("  a bb\tccc\n d "), 4);
  const std::vector<std::optional<std::string>> pages = {std::string(100, 'x') + " y", std::nullopt, std::string("a"),
                                                         std::string("")};
  // Median 20 tokens: floor 2.
  EXPECT_DOUBLE_EQ(structural_completeness(pages, 20.0), 0.25);
  EXPECT_DOUBLE_EQ(structural_completeness(pages, 10.0), 0.5);
  EXPECT_DOUBLE_EQ(structural_completeness({}, 10.0), 0.0);
}

TEST(Proxy, WeightsAndBounds) {
  EXPECT_DOUBLE_EQ(proxy_score({1, 1, 1, 1}), 100.0);
  EXPECT_DOUBLE_EQ(proxy_score({0, 0, 0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(proxy_score({1, 0, 1, 0}), 50.0);
  EXPECT_DOUBLE_EQ(proxy_score({0.5, 1, 1, 1}), 87.5);
  EXPECT_DOUBLE_EQ(proxy_score({1, 0, 0, 0}, {1, 0, 0, 0}), 100.0);
  EXPECT_THROW(proxy_score({1, 1, 1, 1}, {0.5, 0.5, 0.5, 0}), ConfigError);
  EXPECT_THROW(QualityWeights({-0.5, 0.5, 0.5, 0.5}).validate(), ConfigError);
}

// The corruption component alone: all-clean pages give 100, all-corrupt 0,
// and the proxy is monotone in the share of clean lines.
TEST(Proxy, CorruptionComponentEndpointsAndMonotone) {
  const QualityWeights only_corruption{1, 0, 0, 0};
  double prev = 101;
  for (int bad = 0; bad <= 10; ++bad) {
    std::string text;
    for (int i = 0; i < 10; ++i) text += i < bad ? "~~~~~~~~\n" : "Clean prose line.\n";
    const double score = proxy_score({corruption_indicator(text), 0, 0, 0}, only_corruption);
    if (bad == 0) EXPECT_DOUBLE_EQ(score, 100.0);
    if (bad == 10) EXPECT_DOUBLE_EQ(score, 0.0);
    EXPECT_LT(score, prev);
    prev = score;
  }
}

TEST(Monitor, SettlesStructuralCompletenessAtFinish) {
  QualityMonitor m(bundled_schema());
  auto r = empty_record();
  UnitAnnotation ok;
  ok.conformance = 1.0;
  m.observe(r.source_key, r, {std::string("one two three four"), std::string("five six seven eight")}, {ok});
  m.observe(source_key("b.pdf"), r, {std::string("~~~~~~"), std::nullopt}, {ok});
  const auto rows = m.finish();
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_DOUBLE_EQ(rows[0].indicators.structural_completeness, 1.0);
  EXPECT_DOUBLE_EQ(rows[0].proxy, 100.0);
  EXPECT_DOUBLE_EQ(rows[1].indicators.corruption, 0.0);
  EXPECT_DOUBLE_EQ(rows[1].indicators.structural_completeness, 0.5);
  EXPECT_DOUBLE_EQ(rows[1].proxy, 62.5);
  EXPECT_EQ(rows[1].source_key, source_key("b.pdf").hex());
}
