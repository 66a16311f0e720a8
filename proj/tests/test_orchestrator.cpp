#include <gtest/gtest.h>

#include <fstream>

#include "evidex/error.hpp"
#include "evidex/export.hpp"
#include "evidex/mock_backend.hpp"
#include "evidex/orchestrator.hpp"
#include "evidex/pdf.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace evidex;
using evidex::testing::bundled_schema;
using evidex::testing::TempDir;

namespace {

const KeywordTable& table() {
  static const KeywordTable t = KeywordTable::load(evidex::testing::keywords_file(), bundled_schema());
  return t;
}

const SourceKey kKey = source_key("doc.pdf");
const DocumentUnit kCaption = DocumentUnit::caption(kKey, {0, 0}, "Table 1. Publication year: 2020");

AnnotationRequest caption_request(PayloadId id = PayloadId::meta_design) {
  return AnnotationRequest::for_unit(kCaption, nullptr, bundled_schema().payload(id), false);
}

FaultSchedule failing(int attempts, int status = 503) {
  FaultSchedule s;
  for (int a = 1; a <= attempts; ++a) s.add(kCaption.unit_id, PayloadId::meta_design, a, {status, ""});
  return s;
}

UnitAnnotation call_once(Orchestrator& orch, AnnotationRequest req) {
  UnitAnnotation out;
  auto body = [&]() -> rt::Task<void> { out = co_await orch.bounded_call(std::move(req)); };
  orch.loop().spawn(body());
  orch.loop().run();
  return out;
}

std::vector<double> backoffs(const Orchestrator& orch) {
  std::vector<double> b;
  for (const auto& c : orch.calls()) b.push_back(rt::to_seconds(c.backoff));
  return b;
}

void write_doc(const fs::path& file, const std::vector<std::vector<std::string>>& pages) {
  fs::create_directories(file.parent_path());
  std::ofstream(file, std::ios::binary) << pdf::write_text_document(pages);
}

// Three documents: 3, 10 and 1 pages; the second has one caption.
void make_corpus(const fs::path& dir) {
  write_doc(dir / "a.pdf", {{"Study title: Alpha"}, {"Publication year: 2019"}, {"x"}});
  std::vector<std::vector<std::string>> pages(10, std::vector<std::string>{"filler text"});
  pages[2] = {"Filler", "", "Figure 1. Drug levels were measured in 40 patients", "", "more"};
  pages[9] = {"Publication year: 2021"};
  write_doc(dir / "b.pdf", pages);
  write_doc(dir / "c.pdf", {{"This was a case series."}});
}

RunConfig fast_config() {
  RunConfig c;
  c.rps = 1000;
  return c;
}

}  // namespace

TEST(Config, Validation) {
  RunConfig c;
  EXPECT_NO_THROW(c.validate());
  for (auto mutate : std::vector<std::function<void(RunConfig&)>>{
           [](RunConfig& r) { r.max_pages = 0; }, [](RunConfig& r) { r.concurrency = 0; },
           [](RunConfig& r) { r.rps = 0; }, [](RunConfig& r) { r.retry.max_retries = -1; },
           [](RunConfig& r) { r.retry.backoff_min = 0; },
           [](RunConfig& r) { r.retry.backoff_max = 0.5; }, [](RunConfig& r) { r.document_window = 0; }}) {
    RunConfig bad;
    mutate(bad);
    EXPECT_THROW(bad.validate(), ConfigError);
  }
}

TEST(BoundedCall, TwoFailuresThenSuccessSleepsOneThenTwo) {
  MockBackend mock(table(), failing(2));
  Orchestrator orch(RunConfig{}, bundled_schema(), mock, {});
  const auto a = call_once(orch, caption_request());
  EXPECT_TRUE(a.ok());
  EXPECT_EQ(a.attempts, 3);
  EXPECT_EQ(std::get<int64_t>(a.values.at("year")), 2020);
  EXPECT_EQ(backoffs(orch), (std::vector<double>{1, 2, 0}));
  const auto& calls = orch.calls();
  EXPECT_DOUBLE_EQ(rt::to_seconds(calls[1].dispatched), 1.0);
  EXPECT_DOUBLE_EQ(rt::to_seconds(calls[2].dispatched), 3.0);
  EXPECT_EQ(orch.report().retries, 2);
  EXPECT_EQ(orch.report().transient_errors, 2);
  EXPECT_EQ(orch.report().requests_issued, 1);
}

TEST(BoundedCall, ExhaustionAfterFourAttempts) {
  MockBackend mock(table(), failing(10, 429));
  Orchestrator orch(RunConfig{}, bundled_schema(), mock, {});
  const auto a = call_once(orch, caption_request());
  EXPECT_FALSE(a.ok());
  EXPECT_EQ(a.error, "retry_exhausted");
  EXPECT_EQ(a.attempts, 4);
  EXPECT_EQ(mock.calls(), 4);
  EXPECT_EQ(backoffs(orch), (std::vector<double>{1, 2, 4, 0}));
  EXPECT_DOUBLE_EQ(rt::to_seconds(orch.loop().now()), 7.0);
  for (const auto& [name, v] : a.values) EXPECT_TRUE(is_null(v)) << name;
}

TEST(BoundedCall, BackoffIsCapped) {
  RunConfig c;
  c.retry = {5, 1.0, 3.0};
  MockBackend mock(table(), failing(10));
  Orchestrator orch(c, bundled_schema(), mock, {});
  call_once(orch, caption_request());
  EXPECT_EQ(backoffs(orch), (std::vector<double>{1, 2, 3, 3, 3, 0}));
}

TEST(BoundedCall, NonRetryableFailsImmediately) {
  MockBackend mock(table(), failing(1, 400));
  Orchestrator orch(RunConfig{}, bundled_schema(), mock, {});
  const auto a = call_once(orch, caption_request());
  EXPECT_FALSE(a.ok());
  EXPECT_EQ(a.attempts, 1);
  EXPECT_EQ(mock.calls(), 1);
  EXPECT_EQ(orch.report().retries, 0);
}

TEST(BoundedCall, ZeroRetries) {
  RunConfig c;
  c.retry.max_retries = 0;
  MockBackend mock(table(), failing(1));
  Orchestrator orch(c, bundled_schema(), mock, {});
  EXPECT_EQ(call_once(orch, caption_request()).attempts, 1);
}

TEST(BoundedCall, RateAndConcurrencyBounds) {
  RunConfig c;
  c.rps = 4;
  c.concurrency = 2;
  MockBackend mock(table());
  Orchestrator orch(c, bundled_schema(), mock, {});
  orch.set_latency_model([](const AnnotationRequest&, int) { return rt::from_seconds(1.3); });
  std::vector<DocumentUnit> units;
  for (int i = 0; i < 6; ++i) units.push_back(DocumentUnit::caption(kKey, {i, 0}, "Figure 1. x"));
  auto body = [&]() -> rt::Task<void> { co_await orch.process_document_units(units, nullptr); };
  orch.loop().spawn(body());
  orch.loop().run();
  const auto& calls = orch.calls();
  ASSERT_EQ(calls.size(), 30u);
  std::vector<rt::TimePoint> dispatched;
  for (const auto& r : calls) dispatched.push_back(r.dispatched);
  std::sort(dispatched.begin(), dispatched.end());
  for (size_t i = 1; i < dispatched.size(); ++i) EXPECT_GE(dispatched[i] - dispatched[i - 1], rt::from_seconds(0.25));
  EXPECT_EQ(orch.report().max_in_flight, 2);
  // Every instant has at most two calls open.
  for (const auto& probe : calls) {
    int open = 0;
    for (const auto& r : calls)
      if (r.dispatched <= probe.dispatched && probe.dispatched < r.completed) ++open;
    EXPECT_LE(open, 2);
  }
}

TEST(RunCorpus, CountsAndOutputs) {
  TempDir corpus, out;
  make_corpus(corpus.path());
  MockBackend mock(table());
  Orchestrator orch(fast_config(), bundled_schema(), mock, out.path());
  const auto result = orch.run_corpus(corpus.path());
  const auto& r = result.report;
  EXPECT_EQ(r.docs_seen, 3);
  EXPECT_EQ(r.docs_processed, 3);
  EXPECT_EQ(r.chunks, 4);  // 1 + 2 + 1
  EXPECT_EQ(r.captions, 1);
  EXPECT_EQ(r.requests_issued, 25);
  EXPECT_EQ(mock.calls(), 25);
  EXPECT_EQ(r.failed_units, 0);
  ASSERT_EQ(result.records.size(), 3u);
  const auto& b = result.records[1];
  EXPECT_EQ(b.source_key, source_key("b.pdf"));
  EXPECT_EQ(std::get<int64_t>(b.payload(PayloadId::population_indications).value("total_patients_with_levels")), 40);
  EXPECT_EQ(std::get<int64_t>(b.payload(PayloadId::meta_design).value("year")), 2021);
  EXPECT_TRUE(fs::exists(out / "run_report.json"));
  EXPECT_TRUE(fs::exists(out / "calls.log"));
  EXPECT_TRUE(fs::exists(out / ("cache/" + source_key("c.pdf").hex() + ":p0-1.methods.json")));
  EXPECT_EQ(ProcessedIndex(out / "processed.index.jsonl").size(), 3u);
}

TEST(RunCorpus, ResumeSkipsIndexedDocuments) {
  TempDir corpus, out;
  make_corpus(corpus.path());
  {
    MockBackend mock(table());
    Orchestrator(fast_config(), bundled_schema(), mock, out.path()).run_corpus(corpus.path());
  }
  write_doc(corpus / "d.pdf", {{"Publication year: 2001"}});
  MockBackend mock(table());
  Orchestrator orch(fast_config(), bundled_schema(), mock, out.path());
  const auto r = orch.run_corpus(corpus.path()).report;
  EXPECT_EQ(r.docs_skipped, 3);
  EXPECT_EQ(r.docs_processed, 1);
  EXPECT_EQ(mock.calls(), 5);
}

TEST(RunCorpus, OverwriteUsesCache) {
  TempDir corpus, out;
  make_corpus(corpus.path());
  std::vector<StudyRecord> first;
  {
    MockBackend mock(table());
    first = Orchestrator(fast_config(), bundled_schema(), mock, out.path()).run_corpus(corpus.path()).records;
  }
  RunConfig c = fast_config();
  c.overwrite = true;
  MockBackend mock(table());
  Orchestrator orch(c, bundled_schema(), mock, out.path());
  const auto result = orch.run_corpus(corpus.path());
  EXPECT_EQ(mock.calls(), 0);
  EXPECT_EQ(result.report.cache_hits, 25);
  EXPECT_EQ(result.report.docs_processed, 3);
  ASSERT_EQ(result.records.size(), first.size());
  for (size_t i = 0; i < first.size(); ++i)
    EXPECT_EQ(record_to_row(bundled_schema(), result.records[i]), record_to_row(bundled_schema(), first[i]));
}

TEST(RunCorpus, UnreadableFilesAreExcluded) {
  TempDir corpus, out;
  make_corpus(corpus.path());
  std::ofstream(corpus / "broken.pdf") << "this is not a pdf";
  std::ofstream(corpus / "empty.pdf");
  MockBackend mock(table());
  Orchestrator orch(fast_config(), bundled_schema(), mock, out.path());
  const auto r = orch.run_corpus(corpus.path()).report;
  EXPECT_EQ(r.docs_seen, 5);
  EXPECT_EQ(r.docs_excluded, 2);
  EXPECT_EQ(r.docs_processed, 3);
  std::ifstream log(out / "excluded.log");
  std::string line;
  std::vector<std::string> ids;
  while (std::getline(log, line)) ids.push_back(line.substr(0, line.find('\t')));
  EXPECT_EQ(ids, (std::vector<std::string>{"broken.pdf", "empty.pdf"}));
}

TEST(RunCorpus, FailedUnitsFlagReview) {
  TempDir corpus, out;
  write_doc(corpus / "a.pdf", {{"Publication year: 2019"}});
  FaultSchedule faults;
  const std::string unit = source_key("a.pdf").hex() + ":p0-1";
  for (int a = 1; a <= 4; ++a) faults.add(unit, PayloadId::outcomes, a, {500, ""});
  MockBackend mock(table(), faults);
  Orchestrator orch(fast_config(), bundled_schema(), mock, out.path());
  const auto result = orch.run_corpus(corpus.path());
  EXPECT_EQ(result.report.failed_units, 1);
  EXPECT_EQ(result.report.retries, 3);
  EXPECT_EQ(result.report.transient_errors, 4);
  ASSERT_EQ(result.records.size(), 1u);
  EXPECT_TRUE(result.records[0].review_needed);
  EXPECT_EQ(result.records[0].failed_units, (std::vector<std::string>{unit}));
  EXPECT_EQ(std::get<int64_t>(result.records[0].payload(PayloadId::meta_design).value("year")), 2019);
  EXPECT_FALSE(fs::exists(out / ("cache/" + unit + ".outcomes.json")));
}

TEST(RunCorpus, OutputsIndependentOfDocumentWindow) {
  TempDir corpus;
  make_corpus(corpus.path());
  std::vector<std::vector<std::string>> rows;
  for (int window : {1, 3}) {
    TempDir out;
    RunConfig c = fast_config();
    c.document_window = window;
    MockBackend mock(table());
    Orchestrator orch(c, bundled_schema(), mock, out.path());
    ArtifactWriter writer(bundled_schema(), out.path());
    orch.set_sink(&writer);
    orch.run_corpus(corpus.path());
    std::ifstream in(out / "studies.csv");
    rows.push_back({std::string(std::istreambuf_iterator<char>(in), {})});
  }
  EXPECT_EQ(rows[0], rows[1]);
}

TEST(Timestamps, Rfc3339) {
  EXPECT_EQ(rfc3339(std::chrono::system_clock::time_point{} + std::chrono::milliseconds(1500)),
            "1970-01-01T00:00:01.500Z");
}
