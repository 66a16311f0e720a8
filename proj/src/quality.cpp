#include "evidex/quality.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <regex>

#include <fmt/format.h>

#include "evidex/error.hpp"
#include "evidex/text.hpp"

namespace evidex {

void QualityWeights::validate() const {
  const double w[] = {corruption, numeric_sanity, type_conformance, structural_completeness};
  double sum = 0;
  for (const double x : w) {
    if (!(x >= 0) || !std::isfinite(x)) throw ConfigError(fmt::format("quality weight {} is not a non-negative number", x));
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError(fmt::format("quality weights sum to {}, expected 1", sum));
}

namespace {

// Bytes >= 0x80 belong to multi-byte UTF-8 sequences; treat them as letters so
// accented prose is not mistaken for noise.
bool alnum_byte(unsigned char c) { return c >= 0x80 || std::isalnum(c); }

}  // namespace

bool is_artifact_line(std::string_view line, const CorruptionRules& rules) {
  int symbols = 0;
  int visible = 0;
  int run = 0;
  unsigned char prev = 0;
  for (const char ch : line) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      run = 0;
      prev = 0;
      continue;
    }
    ++visible;
    if (alnum_byte(c)) {
      run = 0;
      prev = 0;
      continue;
    }
    ++symbols;
    run = (c == prev) ? run + 1 : 1;
    prev = c;
    if (run >= rules.min_run) return true;
  }
  return visible > 0 && static_cast<double>(symbols) / visible > rules.max_symbol_share;
}

namespace {

// "![alt](target)" on its own line is an image placeholder, not OCR text.
bool is_image_placeholder(const std::string& line) {
  return line.size() > 5 && line.starts_with("![") && line.ends_with(")") && line.find("](") != std::string::npos;
}

}  // namespace

double corruption_indicator(std::string_view text, const CorruptionRules& rules) {
  int lines = 0;
  int bad = 0;
  for (const auto& line : text::split_lines(text)) {
    const std::string t = text::trim(line);
    if (t.empty() || is_image_placeholder(t)) continue;
    ++lines;
    if (is_artifact_line(line, rules)) ++bad;
  }
  return lines == 0 ? 0.0 : 1.0 - static_cast<double>(bad) / lines;
}

namespace {

bool in_range(double v, const NumericRule& rule) {
  if (rule.min && v < *rule.min) return false;
  if (rule.max && v > *rule.max) return false;
  return true;
}

bool text_plausible(const std::string& value, const NumericRule& rule) {
  if (!rule.unit_pattern.empty()) {
    const std::regex re(rule.unit_pattern);
    if (!std::regex_match(value, re)) return false;
  }
  const std::string t = text::trim(value);
  double v = 0;
  if (std::from_chars(t.data(), t.data() + t.size(), v).ec != std::errc()) return !rule.min && !rule.max;
  return in_range(v, rule);
}

}  // namespace

double numeric_sanity(const SchemaSet& schema, const StudyRecord& record) {
  int checked = 0;
  int passed = 0;
  for (const auto& payload : schema.payloads) {
    const MergedPayload& merged = record.payload(payload.id);
    for (const auto& spec : payload.fields) {
      if (!spec.rule) continue;
      const FieldValue& v = merged.value(spec.name);
      if (is_null(v)) continue;
      bool ok = true;
      if (const auto* i = std::get_if<int64_t>(&v)) {
        ok = in_range(static_cast<double>(*i), *spec.rule);
      } else if (const auto* d = std::get_if<double>(&v)) {
        ok = std::isfinite(*d) && in_range(*d, *spec.rule);
      } else if (const auto* s = std::get_if<std::string>(&v)) {
        ok = text_plausible(*s, *spec.rule);
      } else if (const auto* l = std::get_if<std::vector<std::string>>(&v)) {
        ok = std::all_of(l->begin(), l->end(), [&](const std::string& item) { return text_plausible(item, *spec.rule); });
      }
      ++checked;
      if (ok) ++passed;
    }
  }
  return checked == 0 ? 1.0 : static_cast<double>(passed) / checked;
}

double type_conformance(const std::vector<UnitAnnotation>& annotations) {
  double sum = 0;
  int n = 0;
  for (const auto& a : annotations) {
    if (!a.ok()) continue;
    sum += a.conformance;
    ++n;
  }
  return n == 0 ? 0.0 : sum / n;
}

int64_t count_tokens(std::string_view s) {
  int64_t tokens = 0;
  bool in_token = false;
  for (const char ch : s) {
    const bool space = std::isspace(static_cast<unsigned char>(ch)) != 0;
    if (!space && !in_token) ++tokens;
    in_token = !space;
  }
  return tokens;
}

double structural_completeness(const std::vector<std::optional<std::string>>& pages, double corpus_median_tokens,
                               double floor_ratio) {
  if (pages.empty()) return 0.0;
  const double floor = floor_ratio * corpus_median_tokens;
  int ok = 0;
  for (const auto& p : pages) {
    if (p && static_cast<double>(count_tokens(*p)) >= floor && count_tokens(*p) > 0) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(pages.size());
}

double proxy_score(const QualityIndicators& ind, const QualityWeights& w) {
  w.validate();
  const double score = w.corruption * ind.corruption + w.numeric_sanity * ind.numeric_sanity +
                       w.type_conformance * ind.type_conformance +
                       w.structural_completeness * ind.structural_completeness;
  return std::clamp(100.0 * score, 0.0, 100.0);
}

QualityMonitor::QualityMonitor(const SchemaSet& schema, QualityWeights weights, CorruptionRules rules)
    : schema_(schema), weights_(weights), rules_(rules) {
  weights_.validate();
}

void QualityMonitor::observe(const SourceKey& key, const StudyRecord& record,
                             const std::vector<std::optional<std::string>>& pages,
                             const std::vector<UnitAnnotation>& annotations) {
  Pending p;
  p.row.source_key = key.hex();
  std::string all;
  for (const auto& page : pages) {
    if (!page) continue;
    all += *page;
    all += '\n';
  }
  p.row.indicators.corruption = corruption_indicator(all, rules_);
  p.row.indicators.numeric_sanity = numeric_sanity(schema_, record);
  p.row.indicators.type_conformance = type_conformance(annotations);
  p.pages = pages;
  pending_.push_back(std::move(p));
}

std::vector<QualityRow> QualityMonitor::finish() const {
  std::vector<int64_t> counts;
  for (const auto& p : pending_)
    for (const auto& page : p.pages)
      if (page) counts.push_back(count_tokens(*page));
  double median = 0;
  if (!counts.empty()) {
    std::sort(counts.begin(), counts.end());
    const size_t mid = counts.size() / 2;
    median = counts.size() % 2 ? static_cast<double>(counts[mid]) : (counts[mid - 1] + counts[mid]) / 2.0;
  }
  std::vector<QualityRow> rows;
  for (const auto& p : pending_) {
    QualityRow row = p.row;
    row.indicators.structural_completeness = structural_completeness(p.pages, median);
    row.proxy = proxy_score(row.indicators, weights_);
    rows.push_back(row);
  }
  return rows;
}

WilsonInterval wilson_interval(int64_t successes, int64_t n, double z) {
  if (n <= 0) throw InvalidArgument(fmt::format("Wilson interval needs n > 0, got {}", n));
  if (successes < 0 || successes > n)
    throw InvalidArgument(fmt::format("successes must lie in [0, {}], got {}", n, successes));
  if (!(z > 0)) throw InvalidArgument(fmt::format("critical value must be positive, got {}", z));
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(successes) / nn;
  const double z2 = z * z;
  const double denom = 1 + z2 / nn;
  const double centre = (p + z2 / (2 * nn)) / denom;
  const double half = z * std::sqrt(p * (1 - p) / nn + z2 / (4 * nn * nn)) / denom;
  return {std::clamp((centre - half) * 100, 0.0, 100.0), std::clamp((centre + half) * 100, 0.0, 100.0)};
}

WilsonInterval round_interval(WilsonInterval w) {
  const auto r = [](double x) { return std::round(x * 10) / 10 + 0.0; };
  return {r(w.lower), r(w.upper)};
}

}  // namespace evidex
