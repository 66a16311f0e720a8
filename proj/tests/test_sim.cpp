#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "evidex/error.hpp"
#include "evidex/export.hpp"
#include "evidex/mock_backend.hpp"
#include "evidex/sim.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace evidex;
using evidex::testing::bundled_schema;
using evidex::testing::TempDir;
using nlohmann::json;

namespace {

const KeywordTable& table() {
  static const KeywordTable t = KeywordTable::load(evidex::testing::keywords_file(), bundled_schema());
  return t;
}

const sim::CorpusSpec& paper_spec() {
  static const sim::CorpusSpec s = sim::paper_shape_spec(2024);
  return s;
}

}  // namespace

// Reference outputs of splitmix64 from a few lines of Python.
TEST(SimRng, SplitMix64Reference) {
  sim::Rng a(0);
  EXPECT_EQ(a.next(), 0xe220a8397b1dcdafull);
  EXPECT_EQ(a.next(), 0x6e789e6aa1b965f4ull);
  EXPECT_EQ(a.next(), 0x06c45d188009454full);
  sim::Rng b(42);
  EXPECT_EQ(b.next(), 0xbdd732262feb6e95ull);
  EXPECT_EQ(b.next(), 0x28efe333b266f103ull);
  sim::Rng c(1);
  for (int i = 0; i < 1000; ++i) {
    const double u = c.unit();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const int k = c.between(3, 5);
    ASSERT_GE(k, 3);
    ASSERT_LE(k, 5);
  }
}

TEST(PaperShape, Totals) {
  const auto& s = paper_spec();
  ASSERT_EQ(s.docs.size(), 734u);
  int pages = 0, chunks = 0, captions = 0, population = 0, long_docs = 0;
  for (const auto& d : s.docs) {
    pages += d.pages;
    chunks += (d.pages + 7) / 8;
    captions += static_cast<int>(d.captions.size());
    long_docs += d.pages > 8 ? 1 : 0;
    EXPECT_LE(d.pages, 16);
    EXPECT_LE(d.captions.size(), 3u);
    bool pop = false;
    for (const auto& p : d.plants) {
      EXPECT_GE(p.page, 0);
      EXPECT_LT(p.page, d.pages);
      for (const auto& e : p.effects) pop = pop || e.payload == PayloadId::population_indications;
    }
    population += pop ? 1 : 0;
  }
  EXPECT_EQ(pages, 7228);
  EXPECT_EQ(chunks, 978);
  EXPECT_EQ(long_docs, 244);
  EXPECT_EQ(captions, 824);
  EXPECT_EQ(population, 672);
  EXPECT_EQ((chunks + captions) * 5, 9010);
}

TEST(PaperShape, DeterministicPerSeed) {
  const auto again = sim::paper_shape_spec(2024);
  const auto other = sim::paper_shape_spec(2025);
  ASSERT_EQ(again.docs.size(), paper_spec().docs.size());
  bool differs = false;
  for (std::size_t i = 0; i < again.docs.size(); ++i) {
    const auto& a = again.docs[i];
    const auto& b = paper_spec().docs[i];
    ASSERT_EQ(a.file, b.file);
    ASSERT_EQ(a.pages, b.pages);
    ASSERT_EQ(a.plants.size(), b.plants.size());
    for (std::size_t k = 0; k < a.plants.size(); ++k) ASSERT_EQ(a.plants[k].sentence, b.plants[k].sentence);
    if (other.docs[i].pages != b.pages) differs = true;
  }
  EXPECT_TRUE(differs);
}

// Every planted sentence, read on its own, yields exactly its declared effects
// through the keyword table and the schema gate.
TEST(PaperShape, PlantsAgreeWithKeywordTable) {
  std::size_t checked = 0;
  for (const auto& d : paper_spec().docs) {
    for (const auto& plant : d.plants) {
      for (const auto& e : plant.effects) {
        const auto& payload = bundled_schema().payload(e.payload);
        const auto v = validate_annotation(payload, table().annotate(payload, {plant.sentence}));
        ASSERT_TRUE(v.violations.empty()) << plant.sentence;
        const FieldSpec* spec = payload.field(e.field);
        ASSERT_NE(spec, nullptr);
        const json got = to_json(v.values.at(e.field));
        if (spec->is_list()) {
          ASSERT_EQ(got, json::array({e.value})) << plant.sentence;
        } else {
          ASSERT_EQ(got, e.value) << plant.sentence;
        }
        if (spec->evidence_partner) {
          ASSERT_EQ(to_json(v.values.at(*spec->evidence_partner)), json::array({plant.sentence})) << plant.sentence;
        }
        ++checked;
      }
    }
    for (const auto& cap : d.captions) {
      for (const auto& payload : bundled_schema().payloads) {
        ASSERT_TRUE(table().annotate(payload, {cap.text}).empty()) << cap.text;
      }
    }
  }
  EXPECT_GT(checked, 5000u);
}

TEST(PaperShape, ConflictsOnlyInLongDocuments) {
  int conflicts = 0;
  for (const auto& d : paper_spec().docs) {
    int years = 0;
    for (const auto& p : d.plants)
      for (const auto& e : p.effects) years += e.field == "year" ? 1 : 0;
    if (years > 1) {
      ++conflicts;
      EXPECT_GT(d.pages, 8) << d.file;
    }
  }
  EXPECT_GT(conflicts, 0);
}

TEST(GenerateCorpus, ManifestMatchesFilesAndRun) {
  TempDir dir;
  const auto spec = sim::uniform_spec(4, 11, 2, 7);
  const auto manifest = sim::generate_corpus(spec, bundled_schema(), dir / "corpus");
  EXPECT_EQ(manifest["documents"], 4);
  EXPECT_EQ(manifest["pages"], 44);
  EXPECT_EQ(manifest["chunks"], 8);
  EXPECT_EQ(manifest["captions"], 8);
  EXPECT_EQ(manifest["requests"], 80);
  for (const auto& doc : manifest["docs"]) {
    const auto bytes = read_file(dir / "corpus" / doc["file"].get<std::string>());
    EXPECT_EQ(page_count(bytes), 11);
    EXPECT_EQ(doc["source_key"], source_key(doc["canonical_id"].get<std::string>()).hex());
  }
  EXPECT_TRUE(fs::exists(dir / "corpus/manifest.json"));

  RunConfig config;
  config.rps = 1000;
  MockBackend mock(table());
  Orchestrator orch(config, bundled_schema(), mock, dir / "out");
  ArtifactWriter writer(bundled_schema(), dir / "out");
  orch.set_sink(&writer);
  const auto result = orch.run_corpus(dir / "corpus");
  EXPECT_EQ(result.report.requests_issued, 80);
  EXPECT_EQ(result.report.captions, 8);
  const auto fidelity = sim::check_manifest_fidelity(bundled_schema(), manifest, result.records);
  EXPECT_TRUE(fidelity.ok) << fidelity.detail;
  const auto evidence = sim::check_evidence_fidelity(bundled_schema(), manifest, result.records, dir / "out");
  EXPECT_TRUE(evidence.ok) << evidence.detail;

  const auto digests = sim::artifact_digests(dir / "out");
  EXPECT_FALSE(digests.empty());
}

TEST(GenerateCorpus, TamperedRecordFailsFidelity) {
  TempDir dir;
  const auto manifest = sim::generate_corpus(sim::uniform_spec(2, 3, 0, 1), bundled_schema(), dir / "corpus");
  RunConfig config;
  config.rps = 1000;
  MockBackend mock(table());
  Orchestrator orch(config, bundled_schema(), mock, dir / "out");
  auto records = orch.run_corpus(dir / "corpus").records;
  ASSERT_TRUE(sim::check_manifest_fidelity(bundled_schema(), manifest, records).ok);
  for (auto& p : records[0].payloads)
    if (p.payload == PayloadId::meta_design) p.values["title"] = std::string("something else");
  EXPECT_FALSE(sim::check_manifest_fidelity(bundled_schema(), manifest, records).ok);
}

TEST(Latency, ParseAndModel) {
  EXPECT_EQ(sim::parse_latency("none").kind, sim::LatencySpec::Kind::none);
  const auto fixed = sim::parse_latency("fixed:0.55");
  EXPECT_EQ(fixed.kind, sim::LatencySpec::Kind::fixed);
  EXPECT_DOUBLE_EQ(fixed.seconds, 0.55);
  const auto ln = sim::parse_latency("lognormal:0.8:0.5:9");
  EXPECT_DOUBLE_EQ(ln.median, 0.8);
  EXPECT_EQ(ln.seed, 9u);
  for (const char* bad : {"", "fixed", "fixed:x", "fixed:-1", "lognormal:1", "gamma:1:2", "none:1"})
    EXPECT_THROW(sim::parse_latency(bad), ConfigError) << bad;

  EXPECT_FALSE(sim::make_latency_model(sim::parse_latency("none")));
  const auto model = sim::make_latency_model(ln);
  AnnotationRequest req;
  req.payload = &bundled_schema().payload(PayloadId::methods);
  std::vector<double> logs;
  for (int i = 0; i < 4000; ++i) {
    req.unit_id = "u" + std::to_string(i);
    const double s = rt::to_seconds(model(req, 1));
    ASSERT_GT(s, 0);
    ASSERT_EQ(model(req, 1), model(req, 1));  // keyed, not sequential
    logs.push_back(std::log(s));
  }
  double mean = 0, var = 0;
  for (double x : logs) mean += x;
  mean /= logs.size();
  for (double x : logs) var += (x - mean) * (x - mean);
  var /= logs.size() - 1;
  EXPECT_NEAR(std::exp(mean), 0.8, 0.03);
  EXPECT_NEAR(std::sqrt(var), 0.5, 0.03);
}

TEST(ScenarioConfig, Keys) {
  const auto c = sim::run_config_from_json({{"concurrency", 2}, {"rps", 4.5}, {"max_retries", 1}, {"images", false}});
  EXPECT_EQ(c.concurrency, 2);
  EXPECT_DOUBLE_EQ(c.rps, 4.5);
  EXPECT_EQ(c.retry.max_retries, 1);
  EXPECT_FALSE(c.include_images);
  EXPECT_THROW(sim::run_config_from_json({{"speed", 1}}), ConfigError);
  EXPECT_THROW(sim::run_config_from_json({{"concurrency", "three"}}), ConfigError);
  EXPECT_THROW(sim::run_config_from_json({{"concurrency", 0}}), ConfigError);
}
