#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evidex/backend.hpp"
#include "evidex/chunking.hpp"
#include "evidex/consolidate.hpp"
#include "evidex/ingest.hpp"
#include "evidex/runtime.hpp"
#include "evidex/schema.hpp"

namespace evidex {

struct RetryPolicy {
  int max_retries = 3;
  double backoff_min = 1.0;   // seconds
  double backoff_max = 60.0;  // seconds
};

enum class ClockMode { simulated, real };

struct RunConfig {
  int max_pages = kDefaultMaxPages;
  int concurrency = 3;
  double rps = 5.0;
  RetryPolicy retry;
  bool include_images = true;
  // Re-export already indexed documents from cached annotations; units
  // without a cache entry go to the backend.
  bool overwrite = false;
  // Touch indexed documents only (used to re-render from cache).
  bool only_indexed = false;
  // Documents annotated at the same time. Exports still commit in discovery
  // order, so the outputs do not depend on this.
  int document_window = 2;
  bool cache_annotations = true;
  ClockMode clock = ClockMode::simulated;

  void validate() const;  // throws ConfigError
};

struct RunReport {
  int docs_seen = 0;
  int docs_processed = 0;
  int docs_skipped = 0;
  int docs_excluded = 0;
  int64_t chunks = 0;
  int64_t captions = 0;
  int64_t requests_issued = 0;  // first attempts
  int64_t retries = 0;          // re-attempts after a retryable error
  int64_t transient_errors = 0;  // error responses of any kind
  int64_t failed_units = 0;      // (unit, payload) pairs that ended failed
  int64_t cache_hits = 0;
  int max_in_flight = 0;
  double wall_clock_seconds = 0;
  double observed_rps = 0;      // requests_issued / wall clock
  double mean_doc_seconds = 0;  // first dispatch to consolidation

  nlohmann::ordered_json to_json() const;
};

// One backend invocation as recorded in calls.log.
struct CallRecord {
  std::string unit_id;
  PayloadId payload = PayloadId::meta_design;
  int attempt = 0;
  rt::TimePoint dispatched{};
  rt::TimePoint completed{};
  int status = 200;
  std::string error;
  rt::Duration backoff{};  // sleep scheduled after this attempt
};

// Called in discovery order, once per consolidated document.
struct DocumentArtifacts {
  const DocumentDescriptor* document = nullptr;
  const StudyRecord* record = nullptr;
  std::vector<DocumentUnit> units;  // page chunks, then caption units
  std::map<PayloadId, std::vector<UnitAnnotation>> annotations;  // aligned with `units`
  std::vector<std::optional<std::string>> pages;  // markdown per page, nullopt when every payload failed
  std::vector<ImageObject> images;
};

class DocumentSink {
 public:
  virtual ~DocumentSink() = default;
  // Before any backend call; may refuse the run (e.g. SchemaVersionError).
  virtual void begin() {}
  virtual void write_document(const DocumentArtifacts& artifacts) = 0;
  virtual void finish(const std::vector<StudyRecord>& records, const RunReport& report) = 0;
};

using LatencyModel = std::function<rt::Duration(const AnnotationRequest&, int attempt)>;

struct RunResult {
  RunReport report;
  std::vector<StudyRecord> records;
};

class Orchestrator {
 public:
  Orchestrator(RunConfig config, const SchemaSet& schema, AnnotationBackend& backend, std::filesystem::path out_dir);
  ~Orchestrator();

  // Modelled service time per call; only applied under the simulated clock.
  void set_latency_model(LatencyModel model) { latency_ = std::move(model); }
  void set_sink(DocumentSink* sink) { sink_ = sink; }

  RunResult run_corpus(const std::filesystem::path& corpus);

  struct DocState {
    std::optional<rt::TimePoint> first_dispatch;
  };

  // Semaphore, rate limit, call, bounded exponential backoff. Never throws on
  // transport errors: exhaustion or a non-retryable error yields a failed
  // annotation.
  rt::Task<UnitAnnotation> bounded_call(AnnotationRequest request, DocState* doc = nullptr);

  // Every (unit, payload) pair concurrently, results by payload in unit order.
  rt::Task<std::map<PayloadId, std::vector<UnitAnnotation>>> process_document_units(
      std::vector<DocumentUnit> units, std::shared_ptr<const std::string> data_url, DocState* doc = nullptr);

  rt::EventLoop& loop() { return loop_; }
  const RunReport& report() const { return report_; }
  const std::vector<CallRecord>& calls() const { return calls_; }

 private:
  rt::Task<UnitAnnotation> annotate_unit(DocumentUnit unit, PayloadId payload,
                                         std::shared_ptr<const std::string> data_url, DocState* doc);
  rt::Task<void> drive(std::vector<std::filesystem::path> files);
  rt::Task<void> process_document(std::size_t index, std::filesystem::path file);
  std::filesystem::path cache_path(const std::string& unit_id, PayloadId payload) const;
  void log_call(const CallRecord& record);

  RunConfig config_;
  const SchemaSet& schema_;
  AnnotationBackend& backend_;
  std::filesystem::path out_dir_;
  CaptionGrammar grammar_;
  rt::EventLoop loop_;
  rt::Semaphore slots_;
  rt::Semaphore doc_slots_;
  rt::RateLimiter limiter_;
  LatencyModel latency_;
  DocumentSink* sink_ = nullptr;

  RunReport report_;
  std::vector<CallRecord> calls_;
  std::ofstream call_log_;
  int in_flight_ = 0;

  // per run_corpus
  std::filesystem::path corpus_;
  std::unique_ptr<ProcessedIndex> index_;
  std::unique_ptr<ExclusionLog> exclusions_;
  std::vector<std::unique_ptr<rt::Event>> committed_;
  std::vector<StudyRecord> records_;
  std::vector<double> doc_seconds_;
};

std::string rfc3339(std::chrono::system_clock::time_point t);

}  // namespace evidex
