#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evidex/orchestrator.hpp"
#include "evidex/schema.hpp"

namespace evidex::sim {

// Small deterministic generator (splitmix64). Used instead of <random>
// distributions, whose output differs between standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}
  uint64_t next();
  uint64_t below(uint64_t n) { return n == 0 ? 0 : next() % n; }
  int between(int lo, int hi) { return lo + static_cast<int>(below(static_cast<uint64_t>(hi - lo + 1))); }
  double unit();  // [0, 1)
  bool chance(double p) { return unit() < p; }

 private:
  uint64_t state_;
};

// What one planted sentence should make the mock extract.
struct Effect {
  PayloadId payload = PayloadId::meta_design;
  std::string field;
  nlohmann::json value;  // label after alias resolution, or the typed number/text
};

struct Plant {
  int page = 0;
  std::string sentence;
  std::vector<Effect> effects;
};

struct CaptionPlant {
  int page = 0;
  std::string text;
  std::optional<std::string> image;  // "[[image: ...]]" line drawn above the caption
};

struct DocSpec {
  std::string file;  // relative path under the corpus root
  int pages = 1;
  std::vector<Plant> plants;
  std::vector<CaptionPlant> captions;
};

struct CorpusSpec {
  uint64_t seed = 0;
  int max_pages = kDefaultMaxPages;  // used for the expected unit counts only
  std::vector<DocSpec> docs;
};

// 734 documents, 7,228 pages, 978 chunks of at most 8 pages, 824 captions;
// 672 documents carry population plants.
CorpusSpec paper_shape_spec(uint64_t seed);

// `docs` documents of `pages` pages with `captions` captions each.
CorpusSpec uniform_spec(int docs, int pages, int captions, uint64_t seed);

// Random field plants for one document, drawn against the bundled keyword
// table. `population` controls whether population fields may be planted.
void plant_fields(DocSpec& doc, Rng& rng, bool population, bool conflict);

// Writes the PDFs and manifest.json under `dir` and returns the manifest.
// Throws InvalidPath when `dir` cannot be written.
nlohmann::json generate_corpus(const CorpusSpec& spec, const SchemaSet& schema, const std::filesystem::path& dir);

// "none", "fixed:<seconds>" or "lognormal:<median>:<sigma>[:<seed>]".
struct LatencySpec {
  enum class Kind { none, fixed, lognormal };
  Kind kind = Kind::none;
  double seconds = 0;
  double median = 0;
  double sigma = 0;
  uint64_t seed = 0;
};

LatencySpec parse_latency(const std::string& text);
// Lognormal draws are keyed by (unit, payload, attempt), so they do not
// depend on dispatch order.
LatencyModel make_latency_model(const LatencySpec& spec);

// Keys as in RunConfig, plus max_retries / backoff_min / backoff_max / images.
// Unknown keys throw ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);

struct Check {
  std::string name;
  bool ok = false;
  std::string detail;
};

struct PassResult {
  RunReport report;
  int64_t backend_calls = 0;
  double min_dispatch_gap = 0;  // seconds; 0 with fewer than two dispatches
  std::vector<Check> checks;
};

struct ScenarioResult {
  std::string name;
  nlohmann::json manifest;
  std::vector<PassResult> passes;
  bool passed() const;
};

// Runs a scenario document (see scenarios/*.json). Relative schema and
// keyword paths resolve against `base_dir`; the corpus and outputs go under
// `work_dir`, which is cleared first.
ScenarioResult run_scenario(const nlohmann::json& scenario, const std::filesystem::path& base_dir,
                            const std::filesystem::path& work_dir);
ScenarioResult run_scenario_file(const std::filesystem::path& file, const std::filesystem::path& work_dir);

// Manifest-vs-output comparisons, also used directly by the tests.
Check check_manifest_fidelity(const SchemaSet& schema, const nlohmann::json& manifest,
                              const std::vector<StudyRecord>& records);
Check check_evidence_fidelity(const SchemaSet& schema, const nlohmann::json& manifest,
                              const std::vector<StudyRecord>& records, const std::filesystem::path& out_dir);

// SHA-1 of every deterministic artifact under `out_dir`, keyed by relative path.
std::vector<std::pair<std::string, std::string>> artifact_digests(const std::filesystem::path& out_dir);

}  // namespace evidex::sim
