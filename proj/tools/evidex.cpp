// evidex command line: corpus runs, re-rendering, aggregation and the
// simulation harness.
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "evidex/error.hpp"
#include "evidex/export.hpp"
#include "evidex/http_backend.hpp"
#include "evidex/mock_backend.hpp"
#include "evidex/orchestrator.hpp"
#include "evidex/csv.hpp"
#include "evidex/quality.hpp"
#include "evidex/schema.hpp"
#include "evidex/sim.hpp"

namespace fs = std::filesystem;
using namespace evidex;

namespace {

constexpr int kExitConfig = 2;

// Accepts "schemas/doac.v1" as well as "schemas/doac.v1.json".
fs::path schema_path(const std::string& arg) {
  fs::path p(arg);
  if (!fs::exists(p) && p.extension() != ".json") p += ".json";
  return p;
}

fs::path keywords_for(const fs::path& schema_file) {
  return fs::path(schema_file).replace_extension("").concat(".keywords.tsv");
}

// Serves annotations from cache/ only; used to re-render without the service.
class CacheOnlyBackend : public AnnotationBackend {
 public:
  AnnotateResult annotate(const AnnotationRequest& request) override {
    return TransportError{404, "no cached annotation for " + request.unit_id};
  }
};

void print_report(const RunReport& r) {
  fmt::print("seen: {}\nprocessed: {}\nskipped: {}\nexcluded: {}\n", r.docs_seen, r.docs_processed, r.docs_skipped,
             r.docs_excluded);
  fmt::print("chunks: {}\ncaptions: {}\nrequests: {}\nretries: {}\ntransient errors: {}\nfailed units: {}\n",
             r.chunks, r.captions, r.requests_issued, r.retries, r.transient_errors, r.failed_units);
  fmt::print("cache hits: {}\nmax in flight: {}\nwall clock: {:.1f} s\nobserved rps: {:.2f}\nmean per document: {:.1f} s\n",
             r.cache_hits, r.max_in_flight, r.wall_clock_seconds, r.observed_rps, r.mean_doc_seconds);
}

struct RunOptions {
  std::string corpus;
  std::string schema = "schemas/doac.v1.json";
  std::string backend = "mock";
  std::string keywords;
  uint64_t seed = 0;
  RunConfig config;
  std::string out = "out";
  std::string fault_schedule;
  std::vector<std::string> strata;
  bool charts = false;
  std::string clock = "auto";
  std::string latency = "none";
};

AggregateOptions aggregate_options(const SchemaSet& schema, const std::vector<std::string>& strata, bool charts) {
  AggregateOptions o;
  o.charts = charts;
  if (strata.empty()) {
    o.strata = default_strata(schema);
  } else {
    if (strata.size() % 2 != 0) throw ConfigError("--strata takes field pairs: A B [A B ...]");
    for (std::size_t i = 0; i < strata.size(); i += 2) o.strata.emplace_back(strata[i], strata[i + 1]);
  }
  return o;
}

int cmd_run(RunOptions o, bool render_only) {
  const fs::path schema_file = schema_path(o.schema);
  const SchemaSet schema = load_schema_set(schema_file);
  if (!fs::is_directory(o.corpus)) throw ConfigError("corpus directory not found: " + o.corpus);

  std::unique_ptr<AnnotationBackend> backend;
  MockBackend* mock = nullptr;
  if (render_only) {
    o.config.overwrite = true;
    o.config.only_indexed = true;
    backend = std::make_unique<CacheOnlyBackend>();
  } else if (o.backend == "mock") {
    const fs::path kw = o.keywords.empty() ? keywords_for(schema_file) : fs::path(o.keywords);
    FaultSchedule faults;
    if (!o.fault_schedule.empty()) faults = FaultSchedule::load(o.fault_schedule);
    auto m = std::make_unique<MockBackend>(KeywordTable::load(kw, schema), std::move(faults), o.seed);
    mock = m.get();
    backend = std::move(m);
  } else if (o.backend == "http") {
    if (!o.fault_schedule.empty()) throw ConfigError("--fault-schedule applies to the mock backend only");
    backend = std::make_unique<HttpBackend>(HttpBackendConfig::from_env());
  } else {
    throw ConfigError("unknown backend '" + o.backend + "' (mock | http)");
  }

  if (o.clock == "auto") o.clock = o.backend == "http" && !render_only ? "real" : "simulated";
  if (o.clock == "real") {
    o.config.clock = ClockMode::real;
  } else if (o.clock == "simulated") {
    o.config.clock = ClockMode::simulated;
  } else {
    throw ConfigError("unknown clock '" + o.clock + "' (auto | simulated | real)");
  }

  Orchestrator orch(o.config, schema, *backend, o.out);
  orch.set_latency_model(sim::make_latency_model(sim::parse_latency(o.latency)));
  ArtifactWriter writer(schema, o.out, aggregate_options(schema, o.strata, o.charts));
  orch.set_sink(&writer);
  const RunResult result = orch.run_corpus(o.corpus);
  print_report(result.report);
  if (mock) fmt::print("backend calls: {}\n", mock->calls());
  return 0;
}

int cmd_aggregate(const std::string& schema_arg, const std::string& out, const std::vector<std::string>& strata,
                  bool charts) {
  const SchemaSet schema = load_schema_set(schema_path(schema_arg));
  const fs::path table_file = fs::path(out) / "studies.csv";
  if (!fs::exists(table_file)) throw ConfigError("no studies table at " + table_file.string());
  StudyTable table(schema, table_file);
  table.open();
  const auto records = table.records();
  write_aggregates(out, schema, records, aggregate_options(schema, strata, charts));
  fmt::print("aggregated {} studies\n", records.size());
  return 0;
}

int cmd_validate_schema(const std::string& schema_arg) {
  const SchemaSet schema = load_schema_set(schema_path(schema_arg));
  std::size_t fields = 0;
  for (const auto& p : schema.payloads) fields += p.fields.size();
  fmt::print("{} ({}): {} payloads, {} fields, {} columns\n", schema.name, schema.version, schema.payloads.size(),
             fields, derive_columns(schema).size());
  return 0;
}

int cmd_wilson(int64_t successes, int64_t n, double z) {
  const WilsonInterval w = round_interval(wilson_interval(successes, n, z));
  fmt::print("{:.1f} {:.1f}\n", w.lower, w.upper);
  return 0;
}

int cmd_report(const std::string& out) {
  const fs::path report_file = fs::path(out) / "run_report.json";
  if (!fs::exists(report_file)) throw ConfigError("no run report at " + report_file.string());
  std::ifstream in(report_file);
  fmt::print("{}\n", nlohmann::ordered_json::parse(in).dump(2));

  const fs::path quality_file = fs::path(out) / "quality_report.csv";
  if (!fs::exists(quality_file)) return 0;
  const auto rows = csv::read_file(quality_file);
  std::vector<double> scores;
  for (std::size_t i = 1; i < rows.size(); ++i) scores.push_back(std::stod(rows[i].back()));
  if (scores.empty()) return 0;
  std::sort(scores.begin(), scores.end());
  const std::size_t m = scores.size() / 2;
  const double median = scores.size() % 2 ? scores[m] : (scores[m - 1] + scores[m]) / 2;
  fmt::print("proxy score: median {:.1f}, min {:.1f}, max {:.1f} over {} documents\n", median, scores.front(),
             scores.back(), scores.size());
  return 0;
}

int cmd_gen_corpus(const std::string& out, const std::string& schema_arg, const std::string& shape, uint64_t seed,
                   int docs, int pages, int captions) {
  const SchemaSet schema = load_schema_set(schema_path(schema_arg));
  sim::CorpusSpec spec;
  if (shape == "paper") {
    spec = sim::paper_shape_spec(seed);
  } else if (shape == "uniform") {
    spec = sim::uniform_spec(docs, pages, captions, seed);
  } else {
    throw ConfigError("unknown corpus shape '" + shape + "' (paper | uniform)");
  }
  const auto manifest = sim::generate_corpus(spec, schema, out);
  fmt::print("{} documents, {} pages, {} chunks, {} captions, {} requests\n", manifest["documents"].get<int64_t>(),
             manifest["pages"].get<int64_t>(), manifest["chunks"].get<int64_t>(), manifest["captions"].get<int64_t>(),
             manifest["requests"].get<int64_t>());
  return 0;
}

int cmd_scenario(const std::string& file, const std::string& work) {
  const auto result = sim::run_scenario_file(file, work);
  for (std::size_t i = 0; i < result.passes.size(); ++i) {
    const auto& p = result.passes[i];
    fmt::print("pass {}: requests {} retries {} errors {} failed {} calls {} rps {:.2f}\n", i + 1,
               p.report.requests_issued, p.report.retries, p.report.transient_errors, p.report.failed_units,
               p.backend_calls, p.report.observed_rps);
    for (const auto& c : p.checks) fmt::print("  {} {}: {}\n", c.ok ? "ok  " : "FAIL", c.name, c.detail);
  }
  fmt::print("{} {}\n", result.name, result.passed() ? "passed" : "FAILED");
  return result.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Schema-driven evidence extraction over PDF corpora"};
  app.require_subcommand(1);
  app.get_formatter()->column_width(40);

  RunOptions ro;
  bool images = true;
  const auto add_run_flags = [&](CLI::App* sub, bool full) {
    sub->add_option("--corpus", ro.corpus, "Directory of PDFs (searched recursively)")->required();
    sub->add_option("--schema", ro.schema, "Schema file")->capture_default_str();
    sub->add_option("--out", ro.out, "Output directory")->capture_default_str();
    sub->add_option("--strata", ro.strata, "Stratify by field pairs: payload.field payload.field")->expected(2, 64);
    sub->add_flag("--charts", ro.charts, "Also write SVG bar charts");
    if (!full) return;
    sub->add_option("--backend", ro.backend, "mock | http")->capture_default_str();
    sub->add_option("--keywords", ro.keywords, "Mock keyword table (default: next to the schema)");
    sub->add_option("--seed", ro.seed, "Mock backend seed")->capture_default_str();
    sub->add_option("--max-pages", ro.config.max_pages, "Maximum pages per request")->capture_default_str();
    sub->add_option("--concurrency", ro.config.concurrency, "Maximum requests in flight")->capture_default_str();
    sub->add_option("--rps", ro.config.rps, "Requests per second")->capture_default_str();
    sub->add_option("--retries", ro.config.retry.max_retries, "Retries per unit and payload")->capture_default_str();
    sub->add_option("--backoff-min", ro.config.retry.backoff_min, "First backoff, seconds")->capture_default_str();
    sub->add_option("--backoff-max", ro.config.retry.backoff_max, "Backoff cap, seconds")->capture_default_str();
    sub->add_flag("--images,!--no-images", images, "Request embedded images")->capture_default_str();
    sub->add_flag("--overwrite", ro.config.overwrite, "Re-export indexed documents from cached annotations");
    sub->add_option("--fault-schedule", ro.fault_schedule, "Mock transport faults: unit payload attempt status");
    sub->add_option("--window", ro.config.document_window, "Documents annotated at once")->capture_default_str();
    sub->add_option("--clock", ro.clock, "auto | simulated | real")->capture_default_str();
    sub->add_option("--latency", ro.latency, "Simulated call latency: none | fixed:S | lognormal:M:SIGMA[:SEED]")
        ->capture_default_str();
  };

  auto* run = app.add_subcommand("run", "Annotate a corpus; indexed documents are skipped");
  add_run_flags(run, true);
  auto* render = app.add_subcommand("render", "Re-render indexed documents from cached annotations");
  add_run_flags(render, false);

  auto* aggregate = app.add_subcommand("aggregate", "Rebuild aggregates from an existing studies table");
  std::string agg_schema = "schemas/doac.v1.json", agg_out = "out";
  std::vector<std::string> agg_strata;
  bool agg_charts = false;
  aggregate->add_option("--schema", agg_schema, "Schema file")->capture_default_str();
  aggregate->add_option("--out", agg_out, "Output directory holding studies.csv")->capture_default_str();
  aggregate->add_option("--strata", agg_strata, "Field pairs to stratify by")->expected(2, 64);
  aggregate->add_flag("--charts", agg_charts, "Also write SVG bar charts");

  auto* validate = app.add_subcommand("validate-schema", "Load and check a schema file");
  std::string validate_file;
  validate->add_option("schema", validate_file, "Schema file")->required();

  auto* wilson = app.add_subcommand("wilson", "Wilson score interval in percent");
  int64_t successes = 0, trials = 0;
  double z = kWilsonZ;
  wilson->add_option("successes", successes)->required();
  wilson->add_option("n", trials)->required();
  wilson->add_option("--z", z, "Normal critical value")->capture_default_str();

  auto* report = app.add_subcommand("report", "Print the last run report and quality summary");
  std::string report_out = "out";
  report->add_option("--out", report_out, "Output directory")->capture_default_str();

  auto* gen = app.add_subcommand("gen-corpus", "Write a synthetic corpus and its ground-truth manifest");
  std::string gen_out, gen_shape = "uniform", gen_schema = "schemas/doac.v1.json";
  uint64_t gen_seed = 1;
  int gen_docs = 10, gen_pages = 8, gen_captions = 1;
  gen->add_option("--out", gen_out, "Target directory")->required();
  gen->add_option("--schema", gen_schema, "Schema file")->capture_default_str();
  gen->add_option("--shape", gen_shape, "paper | uniform")->capture_default_str();
  gen->add_option("--seed", gen_seed)->capture_default_str();
  gen->add_option("--docs", gen_docs, "Documents (uniform)")->capture_default_str();
  gen->add_option("--pages", gen_pages, "Pages per document (uniform)")->capture_default_str();
  gen->add_option("--captions", gen_captions, "Captions per document (uniform)")->capture_default_str();

  auto* scenario = app.add_subcommand("scenario", "Run a simulation scenario and check its assertions");
  std::string scenario_file, scenario_work = "scenario-work";
  scenario->add_option("file", scenario_file, "Scenario JSON")->required();
  scenario->add_option("--work", scenario_work, "Working directory (cleared)")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  ro.config.include_images = images;

  try {
    if (*run) return cmd_run(ro, false);
    if (*render) return cmd_run(ro, true);
    if (*aggregate) return cmd_aggregate(agg_schema, agg_out, agg_strata, agg_charts);
    if (*validate) return cmd_validate_schema(validate_file);
    if (*wilson) return cmd_wilson(successes, trials, z);
    if (*report) return cmd_report(report_out);
    if (*gen) return cmd_gen_corpus(gen_out, gen_schema, gen_shape, gen_seed, gen_docs, gen_pages, gen_captions);
    if (*scenario) return cmd_scenario(scenario_file, scenario_work);
  } catch (const SchemaVersionError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitConfig;
  } catch (const ConfigError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitConfig;
  } catch (const SchemaError& e) {
    fmt::print(stderr, "schema error: {}\n", e.what());
    return kExitConfig;
  } catch (const Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
