#include "evidex/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/chrono.h>
#include <fmt/format.h>

#include "evidex/error.hpp"

namespace evidex {

namespace fs = std::filesystem;

void RunConfig::validate() const {
  if (max_pages < 1) throw ConfigError(fmt::format("max pages per chunk must be >= 1, got {}", max_pages));
  if (concurrency < 1) throw ConfigError(fmt::format("concurrency must be >= 1, got {}", concurrency));
  if (!(rps > 0) || !std::isfinite(rps)) throw ConfigError(fmt::format("requests per second must be > 0, got {}", rps));
  if (retry.max_retries < 0) throw ConfigError(fmt::format("max retries must be >= 0, got {}", retry.max_retries));
  if (!(retry.backoff_min > 0) || !(retry.backoff_max >= retry.backoff_min))
    throw ConfigError(fmt::format("backoff bounds must satisfy 0 < min <= max, got {} and {}", retry.backoff_min,
                                  retry.backoff_max));
  if (document_window < 1) throw ConfigError(fmt::format("document window must be >= 1, got {}", document_window));
}

nlohmann::ordered_json RunReport::to_json() const {
  nlohmann::ordered_json j;
  j["docs_seen"] = docs_seen;
  j["docs_processed"] = docs_processed;
  j["docs_skipped"] = docs_skipped;
  j["docs_excluded"] = docs_excluded;
  j["chunks"] = chunks;
  j["captions"] = captions;
  j["requests_issued"] = requests_issued;
  j["retries"] = retries;
  j["transient_errors"] = transient_errors;
  j["failed_units"] = failed_units;
  j["cache_hits"] = cache_hits;
  j["max_in_flight"] = max_in_flight;
  j["wall_clock_seconds"] = wall_clock_seconds;
  j["observed_rps"] = observed_rps;
  j["mean_doc_seconds"] = mean_doc_seconds;
  return j;
}

std::string rfc3339(std::chrono::system_clock::time_point t) {
  const auto secs = std::chrono::time_point_cast<std::chrono::seconds>(t);
  const auto millis = std::chrono::duration_cast<std::chrono::milliseconds>(t - secs).count();
  return fmt::format("{:%Y-%m-%dT%H:%M:%S}.{:03d}Z", fmt::gmtime(std::chrono::system_clock::to_time_t(secs)), millis);
}

namespace {

RunConfig validated(RunConfig c) {
  c.validate();
  return c;
}

}  // namespace

Orchestrator::Orchestrator(RunConfig config, const SchemaSet& schema, AnnotationBackend& backend, fs::path out_dir)
    : config_(validated(std::move(config))),
      schema_(schema),
      backend_(backend),
      out_dir_(std::move(out_dir)),
      grammar_(schema.caption_pattern),
      loop_(config_.clock == ClockMode::simulated ? rt::EventLoop::Mode::simulated : rt::EventLoop::Mode::real),
      slots_(loop_, config_.concurrency),
      doc_slots_(loop_, config_.document_window),
      limiter_(config_.rps) {}

Orchestrator::~Orchestrator() = default;

fs::path Orchestrator::cache_path(const std::string& unit_id, PayloadId payload) const {
  return out_dir_ / "cache" / fmt::format("{}.{}.json", unit_id, to_string(payload));
}

void Orchestrator::log_call(const CallRecord& r) {
  calls_.push_back(r);
  if (!call_log_.is_open()) return;
  nlohmann::ordered_json j;
  j["unit_id"] = r.unit_id;
  j["payload"] = to_string(r.payload);
  j["attempt"] = r.attempt;
  j["dispatched_s"] = rt::to_seconds(r.dispatched);
  j["completed_s"] = rt::to_seconds(r.completed);
  j["status"] = r.status;
  if (!r.error.empty()) j["error"] = r.error;
  if (r.backoff.count() > 0) j["backoff_s"] = rt::to_seconds(r.backoff);
  call_log_ << j.dump() << '\n';
}

rt::Task<UnitAnnotation> Orchestrator::bounded_call(AnnotationRequest request, DocState* doc) {
  int attempts = 0;
  int retries = 0;
  rt::Duration backoff = rt::from_seconds(config_.retry.backoff_min);
  const rt::Duration cap = rt::from_seconds(config_.retry.backoff_max);
  for (;;) {
    co_await slots_.acquire();
    const rt::TimePoint dispatch = limiter_.acquire(loop_.now());
    co_await loop_.sleep_until(dispatch);
    ++attempts;
    if (attempts == 1) ++report_.requests_issued;
    if (doc && !doc->first_dispatch) doc->first_dispatch = loop_.now();
    report_.max_in_flight = std::max(report_.max_in_flight, ++in_flight_);

    CallRecord record;
    record.unit_id = request.unit_id;
    record.payload = request.payload->id;
    record.attempt = attempts;
    record.dispatched = loop_.now();

    AnnotateResult result = co_await loop_.offload([this, &request] { return backend_.annotate(request); });
    if (latency_ && loop_.simulated()) co_await loop_.sleep_for(latency_(request, attempts));
    --in_flight_;
    slots_.release();
    record.completed = loop_.now();

    if (auto* annotation = std::get_if<UnitAnnotation>(&result)) {
      annotation->attempts = attempts;
      log_call(record);
      co_return std::move(*annotation);
    }
    const TransportError err = std::get<TransportError>(result);
    ++report_.transient_errors;
    record.status = err.status;
    record.error = err.message;
    if (!is_retryable(err)) {
      log_call(record);
      co_return UnitAnnotation::failed(request, fmt::format("{} {}", err.status, err.message), attempts);
    }
    if (retries >= config_.retry.max_retries) {
      log_call(record);
      co_return UnitAnnotation::failed(request, "retry_exhausted", attempts);
    }
    record.backoff = backoff;
    log_call(record);
    co_await loop_.sleep_for(backoff);
    backoff = std::min(backoff * 2, cap);
    ++retries;
    ++report_.retries;
  }
}

rt::Task<UnitAnnotation> Orchestrator::annotate_unit(DocumentUnit unit, PayloadId payload,
                                                     std::shared_ptr<const std::string> data_url, DocState* doc) {
  const PayloadSchema& schema = schema_.payload(payload);
  if (config_.overwrite) {
    const fs::path cached = cache_path(unit.unit_id, payload);
    if (fs::exists(cached)) {
      std::ifstream in(cached);
      const auto j = nlohmann::json::parse(in, nullptr, false);
      if (!j.is_discarded()) {
        ++report_.cache_hits;
        co_return annotation_from_json(j, schema);
      }
    }
  }
  UnitAnnotation annotation =
      co_await bounded_call(AnnotationRequest::for_unit(unit, std::move(data_url), schema, config_.include_images), doc);
  if (annotation.ok() && config_.cache_annotations && !out_dir_.empty()) {
    const fs::path cached = cache_path(unit.unit_id, payload);
    fs::create_directories(cached.parent_path());
    std::ofstream(cached) << to_json(annotation).dump();
  }
  co_return annotation;
}

rt::Task<std::map<PayloadId, std::vector<UnitAnnotation>>> Orchestrator::process_document_units(
    std::vector<DocumentUnit> units, std::shared_ptr<const std::string> data_url, DocState* doc) {
  std::vector<rt::Task<UnitAnnotation>> tasks;
  tasks.reserve(units.size() * kPayloadOrder.size());
  for (const auto& unit : units)
    for (const PayloadId p : kPayloadOrder) tasks.push_back(annotate_unit(unit, p, data_url, doc));
  std::vector<UnitAnnotation> results = co_await rt::when_all(loop_, std::move(tasks));
  std::map<PayloadId, std::vector<UnitAnnotation>> by_payload;
  for (const PayloadId p : kPayloadOrder) by_payload[p].reserve(units.size());
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (!results[i].ok()) ++report_.failed_units;
    by_payload[kPayloadOrder[i % kPayloadOrder.size()]].push_back(std::move(results[i]));
  }
  co_return by_payload;
}

rt::Task<void> Orchestrator::process_document(std::size_t index, fs::path file) {
  const std::string canonical = relative_canonical_id(corpus_, file);
  const SourceKey key = source_key(canonical);
  const bool indexed = index_->is_processed(key);

  std::optional<DocumentDescriptor> desc;
  if ((indexed && !config_.overwrite) || (!indexed && config_.only_indexed)) {
    ++report_.docs_skipped;
  } else {
    try {
      desc = describe(corpus_, file);
    } catch (const Error& e) {
      exclusions_->record(canonical, e.what());
      ++report_.docs_excluded;
    }
  }

  if (desc) {
    DocState state;
    const auto data_url = std::make_shared<const std::string>(std::move(desc->data_url));
    desc->data_url.clear();
    std::vector<DocumentUnit> chunks = build_chunk_units(key, desc->page_count, config_.max_pages);
    report_.chunks += static_cast<int64_t>(chunks.size());
    auto chunk_results = co_await process_document_units(chunks, data_url, &state);

    DocumentArtifacts artifacts;
    artifacts.document = &*desc;
    artifacts.pages.assign(static_cast<std::size_t>(desc->page_count), std::nullopt);
    for (std::size_t c = 0; c < chunks.size(); ++c) {
      const PageRange range = *chunks[c].pages;
      for (const PayloadId p : kPayloadOrder) {
        const UnitAnnotation& a = chunk_results[p][c];
        if (!a.ok() || a.page_markdowns.size() != static_cast<std::size_t>(range.size())) continue;
        for (int page = range.start; page < range.end; ++page)
          artifacts.pages[static_cast<std::size_t>(page)] = a.page_markdowns[static_cast<std::size_t>(page - range.start)];
        artifacts.images.insert(artifacts.images.end(), a.images.begin(), a.images.end());
        break;
      }
    }
    std::vector<std::string> page_text;
    for (const auto& p : artifacts.pages) page_text.push_back(p.value_or(""));
    std::vector<DocumentUnit> captions = extract_caption_units(page_text, key, 0, grammar_);
    report_.captions += static_cast<int64_t>(captions.size());
    auto caption_results = co_await process_document_units(captions, data_url, &state);

    artifacts.units = chunks;
    artifacts.units.insert(artifacts.units.end(), captions.begin(), captions.end());
    for (const PayloadId p : kPayloadOrder) {
      auto& merged = artifacts.annotations[p];
      merged = std::move(chunk_results[p]);
      for (auto& a : caption_results[p]) merged.push_back(std::move(a));
    }
    StudyRecord record = consolidate(schema_, key, artifacts.annotations);
    if (state.first_dispatch) doc_seconds_.push_back(rt::to_seconds(loop_.now() - *state.first_dispatch));
    artifacts.record = &record;

    if (index > 0) co_await committed_[index - 1]->wait();
    if (sink_) sink_->write_document(artifacts);
    index_->mark_processed(key, {rfc3339(loop_.wall_time()), schema_.version,
                                 static_cast<int64_t>(artifacts.units.size())});
    ++report_.docs_processed;
    records_.push_back(std::move(record));
  } else if (index > 0) {
    co_await committed_[index - 1]->wait();
  }
  committed_[index]->set();
  doc_slots_.release();
}

rt::Task<void> Orchestrator::drive(std::vector<fs::path> files) {
  for (std::size_t i = 0; i < files.size(); ++i) {
    co_await doc_slots_.acquire();
    loop_.spawn(process_document(i, files[i]));
  }
}

RunResult Orchestrator::run_corpus(const fs::path& corpus) {
  corpus_ = corpus;
  const std::vector<fs::path> files = discover(corpus);
  fs::create_directories(out_dir_);
  index_ = std::make_unique<ProcessedIndex>(out_dir_ / "processed.index.jsonl");
  exclusions_ = std::make_unique<ExclusionLog>(out_dir_ / "excluded.log");
  call_log_.open(out_dir_ / "calls.log", std::ios::app);
  if (sink_) sink_->begin();

  report_ = RunReport{};
  report_.docs_seen = static_cast<int>(files.size());
  records_.clear();
  doc_seconds_.clear();
  committed_.clear();
  for (std::size_t i = 0; i < files.size(); ++i) committed_.push_back(std::make_unique<rt::Event>(loop_));

  const rt::TimePoint start = loop_.now();
  loop_.spawn(drive(files));
  loop_.run();
  const double wall = rt::to_seconds(loop_.now() - start);
  report_.wall_clock_seconds = wall;
  report_.observed_rps = wall > 0 ? static_cast<double>(report_.requests_issued) / wall : 0.0;
  report_.mean_doc_seconds =
      doc_seconds_.empty() ? 0.0
                           : std::accumulate(doc_seconds_.begin(), doc_seconds_.end(), 0.0) / doc_seconds_.size();
  call_log_.close();

  if (sink_) sink_->finish(records_, report_);
  std::ofstream(out_dir_ / "run_report.json") << report_.to_json().dump(2) << '\n';
  return {report_, records_};
}

}  // namespace evidex
