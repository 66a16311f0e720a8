#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <tuple>
#include <vector>

#include "evidex/backend.hpp"
#include "evidex/schema.hpp"

namespace evidex {

// One row of a keyword table: when `phrase` occurs in a line of unit text,
// `field` of `payload` receives `value`. A phrase may hold one capture slot,
// {int}, {real} or {text}; "$1" in the value is replaced by what it matched.
// The line that fired is appended to the field's evidence partner.
struct KeywordRule {
  std::string phrase;
  PayloadId payload = PayloadId::meta_design;
  std::string field;
  std::string value;
  std::regex pattern;
  std::string anchor;  // longest literal word of the phrase, case-folded; cheap prefilter
};

class KeywordTable {
 public:
  // Tab-separated: phrase, payload, field, value. '#' starts a comment line.
  // Throws ConfigError on malformed rows or rows that name unknown fields.
  static KeywordTable parse(std::istream& in, const SchemaSet& schema);
  static KeywordTable load(const std::filesystem::path& file, const SchemaSet& schema);

  const std::vector<KeywordRule>& rules() const { return rules_; }

  // Raw (unvalidated) document annotation for `lines`.
  nlohmann::json annotate(const PayloadSchema& payload, const std::vector<std::string>& lines) const;

 private:
  std::vector<KeywordRule> rules_;
};

// Injected transport faults keyed by (unit_id, payload, 1-based attempt).
class FaultSchedule {
 public:
  struct Fault {
    int status = 0;
    std::string message;
  };

  // Lines: <unit_id> <payload_id> <attempt_no> <status_code> [message...]
  static FaultSchedule parse(std::istream& in);
  static FaultSchedule load(const std::filesystem::path& file);

  void add(const std::string& unit_id, PayloadId payload, int attempt, Fault fault);
  std::optional<Fault> find(const std::string& unit_id, PayloadId payload, int attempt) const;
  std::size_t size() const { return faults_.size(); }
  bool empty() const { return faults_.empty(); }

 private:
  std::map<std::tuple<std::string, PayloadId, int>, Fault> faults_;
};

// Page text comes from the PDF in the request's data URL. A line of the form
// "[[image: <region type> | <description>]]" stands for an embedded figure and
// becomes a markdown placeholder plus an ImageObject when images are requested.
class MockBackend : public AnnotationBackend {
 public:
  MockBackend(KeywordTable table, FaultSchedule faults = {}, uint64_t seed = 0);

  AnnotateResult annotate(const AnnotationRequest& request) override;

  int64_t calls() const { return calls_.load(); }

 private:
  KeywordTable table_;
  FaultSchedule faults_;
  uint64_t seed_;
  std::atomic<int64_t> calls_{0};
  std::mutex attempts_mutex_;
  std::map<std::pair<std::string, PayloadId>, int> attempts_;
};

// Tiny solid-colour PNG; the colour is derived from `seed`.
std::string make_png(int width, int height, uint64_t seed);

uint64_t fnv1a64(std::string_view s, uint64_t basis = 14695981039346656037ull);

}  // namespace evidex
