// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. argv[1] is a scratch directory.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "evidex/chunking.hpp"
#include "evidex/consolidate.hpp"
#include "evidex/mock_backend.hpp"
#include "evidex/orchestrator.hpp"
#include "evidex/quality.hpp"
#include "evidex/sim.hpp"
#include "evidex/text.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace evidex;
using evidex::testing::bundled_schema;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond && ok) {
      ok = false;
      detail = what;
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

fs::path scenario(const std::string& name) { return evidex::testing::source_dir() / "scenarios" / (name + ".json"); }

// Scenario runs are shared between criteria; each is run at most once.
class Scenarios {
 public:
  explicit Scenarios(fs::path work) : work_(std::move(work)) {}

  const sim::ScenarioResult& get(const std::string& name) {
    auto it = cache_.find(name);
    if (it == cache_.end()) {
      const auto t0 = Clock::now();
      auto r = sim::run_scenario_file(scenario(name), work_ / name);
      elapsed_[name] = seconds_since(t0);
      it = cache_.emplace(name, std::move(r)).first;
    }
    return it->second;
  }
  double elapsed(const std::string& name) const { return elapsed_.at(name); }

 private:
  fs::path work_;
  std::map<std::string, sim::ScenarioResult> cache_;
  std::map<std::string, double> elapsed_;
};

// Requires the named checks of one scenario pass to hold.
void require_checks(Outcome& o, const sim::ScenarioResult& r, std::size_t pass, const std::vector<std::string>& names) {
  if (pass >= r.passes.size()) {
    o.require(false, fmt::format("{}: no pass {}", r.name, pass + 1));
    return;
  }
  for (const auto& name : names) {
    const auto& checks = r.passes[pass].checks;
    const auto it = std::find_if(checks.begin(), checks.end(), [&](const sim::Check& c) { return c.name == name; });
    if (it == checks.end()) {
      o.require(false, fmt::format("{} pass {}: {} not checked", r.name, pass + 1, name));
    } else {
      o.require(it->ok, fmt::format("{} pass {}: {} ({})", r.name, pass + 1, name, it->detail));
    }
  }
}

const KeywordTable& keywords() {
  static const KeywordTable t = KeywordTable::load(evidex::testing::keywords_file(), bundled_schema());
  return t;
}

// 1
Outcome chunk_law() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937 gen(20240601);
  std::uniform_int_distribution<int> dn(1, 500), dk(1, 32);
  for (int i = 0; i < 1000 && o.ok; ++i) {
    const int n = dn(gen), k = dk(gen);
    const auto chunks = plan_page_chunks(n, k);
    o.require(static_cast<int>(chunks.size()) == (n + k - 1) / k, fmt::format("count for n={} k={}", n, k));
    int next = 0;
    for (const auto& c : chunks) {
      o.require(c.start == next && c.size() >= 1 && c.size() <= k, fmt::format("cover for n={} k={}", n, k));
      next = c.end;
    }
    o.require(next == n, fmt::format("end for n={} k={}", n, k));
    o.require(!chunks.empty() && chunks.back().size() == (n - 1) % k + 1, fmt::format("last for n={} k={}", n, k));
  }
  const double t = seconds_since(t0);
  o.require(t < 1.0, fmt::format("took {:.3f} s", t));
  if (o.ok) o.detail = fmt::format("1000 pairs in {:.3f} s", t);
  return o;
}

// 2
Outcome paper_accounting(Scenarios& s) {
  Outcome o;
  const auto& full = s.get("paper_shape");
  require_checks(o, full, 0, {"docs_seen", "chunks", "captions", "requests_issued", "backend_calls", "retries"});
  o.require(full.passes.size() > 0 && full.passes[0].report.requests_issued == 9010, "requests_issued != 9010");
  o.require(s.elapsed("paper_shape") < 60.0, fmt::format("paper_shape took {:.1f} s", s.elapsed("paper_shape")));

  // Independent count of the units of the two skipped documents.
  const auto spec = sim::paper_shape_spec(7);
  int64_t skipped_units = 0;
  for (int i = 0; i < 2; ++i)
    skipped_units += (spec.docs[i].pages + 7) / 8 + static_cast<int64_t>(spec.docs[i].captions.size());
  const auto& pre = s.get("paper_shape_preindexed");
  require_checks(o, pre, 0, {"docs_skipped", "docs_processed", "requests_issued", "backend_calls"});
  if (!pre.passes.empty()) {
    const int64_t got = pre.passes[0].report.requests_issued;
    o.require(got == 9010 - 5 * skipped_units,
              fmt::format("preindexed requests {} != 9010 - 5*{}", got, skipped_units));
    o.require(s.elapsed("paper_shape_preindexed") < 60.0,
              fmt::format("preindexed took {:.1f} s", s.elapsed("paper_shape_preindexed")));
  }
  if (o.ok)
    o.detail = fmt::format("9010 requests; 2 indexed docs remove {} units ({:.1f} s)", skipped_units,
                           s.elapsed("paper_shape_preindexed"));
  return o;
}

// 3
Outcome rate_contract(Scenarios& s) {
  Outcome o;
  std::string detail;
  for (const std::string name : {"throughput", "throughput_slow", "lognormal"}) {
    const auto& r = s.get(name);
    require_checks(o, r, 0, {"max_in_flight", "min_dispatch_gap", "observed_rps"});
    if (!r.passes.empty()) {
      const auto& p = r.passes[0];
      o.require(p.report.max_in_flight <= 3, name + ": in flight above 3");
      o.require(p.min_dispatch_gap >= 0.2 - 1e-9, name + ": dispatch gap below 0.2 s");
      detail += fmt::format("{}{} {:.2f} rps", detail.empty() ? "" : ", ", name, p.report.observed_rps);
    }
  }
  if (o.ok) o.detail = detail;
  return o;
}

// 4
Outcome retry_trace() {
  Outcome o;
  const SourceKey key = source_key("doc.pdf");
  const DocumentUnit unit = DocumentUnit::caption(key, {0, 0}, "Table 1. Publication year: 2020");
  const auto run = [&](std::vector<int> statuses, std::vector<double>& sleeps) {
    FaultSchedule faults;
    for (std::size_t i = 0; i < statuses.size(); ++i)
      faults.add(unit.unit_id, PayloadId::meta_design, static_cast<int>(i) + 1, {statuses[i], ""});
    MockBackend mock(keywords(), faults);
    RunConfig config;
    config.retry = {3, 1.0, 60.0};
    Orchestrator orch(config, bundled_schema(), mock, {});
    UnitAnnotation out;
    auto body = [&]() -> rt::Task<void> {
      out = co_await orch.bounded_call(
          AnnotationRequest::for_unit(unit, nullptr, bundled_schema().payload(PayloadId::meta_design), false));
    };
    orch.loop().spawn(body());
    orch.loop().run();
    // Sleeps are the gaps between consecutive dispatches on the simulated clock.
    const auto& calls = orch.calls();
    for (std::size_t i = 1; i < calls.size(); ++i)
      sleeps.push_back(rt::to_seconds(calls[i].dispatched) - rt::to_seconds(calls[i - 1].completed));
    return out;
  };

  std::vector<double> sleeps;
  const auto a = run({429, 429}, sleeps);
  o.require(a.ok() && a.attempts == 3, "{429,429,ok} did not succeed on attempt 3");
  o.require(sleeps == std::vector<double>{1, 2}, fmt::format("{{429,429,ok}} sleeps [{}]", fmt::join(sleeps, ",")));

  std::vector<double> sleeps2;
  const auto b = run({429, 429, 429, 429}, sleeps2);
  o.require(!b.ok() && b.error == "retry_exhausted" && b.attempts == 4,
            fmt::format("429x4 gave '{}' after {} attempts", b.error.value_or(""), b.attempts));
  o.require(sleeps2 == std::vector<double>{1, 2, 4}, fmt::format("429x4 sleeps [{}]", fmt::join(sleeps2, ",")));
  if (o.ok) o.detail = "sleeps [1,2] then ok; [1,2,4] then retry_exhausted";
  return o;
}

// 5: merge laws against a brute-force oracle on a toy payload.
using List = std::vector<std::string>;

FieldSpec toy_field(std::string name, FieldKind kind) {
  FieldSpec f;
  f.name = std::move(name);
  f.kind = kind;
  if (f.is_categorical()) f.vocabulary = {"a", "b", "c"};
  return f;
}

const PayloadSchema& toy() {
  static const PayloadSchema p = [] {
    PayloadSchema s;
    s.id = PayloadId::methods;
    s.fields = {toy_field("n", FieldKind::integer), toy_field("x", FieldKind::real), toy_field("t", FieldKind::text),
                toy_field("e", FieldKind::enumeration), toy_field("l", FieldKind::list_of_enum),
                toy_field("ev", FieldKind::evidence_text)};
    return s;
  }();
  return p;
}

std::string canon_key(const FieldValue& v) {
  if (const auto* s = std::get_if<std::string>(&v)) return "s:" + text::canonical(*s);
  if (const auto* i = std::get_if<int64_t>(&v)) return "i:" + std::to_string(*i);
  if (const auto* d = std::get_if<double>(&v)) return "d:" + format_scalar(*d);
  return "?";
}

// All non-null values per field, enumerated; returns the expected value
// (as canonical keys) and whether a conflict is expected.
struct Enumerated {
  List keys;
  bool conflict = false;
};

Enumerated enumerate(const FieldSpec& f, const std::vector<UnitAnnotation>& anns) {
  Enumerated e;
  for (const auto& a : anns) {
    if (!a.ok() || !a.values.contains(f.name)) continue;
    const FieldValue& v = a.values.at(f.name);
    List here;
    if (f.is_list()) {
      if (const auto* l = std::get_if<List>(&v))
        for (const auto& item : *l)
          if (!text::trim(item).empty()) here.push_back(text::canonical(text::trim(item)));
    } else if (!is_null(v)) {
      here.push_back(canon_key(v));
    }
    for (auto& k : here)
      if (std::find(e.keys.begin(), e.keys.end(), k) == e.keys.end()) e.keys.push_back(k);
  }
  e.conflict = !f.is_list() && e.keys.size() > 1;
  return e;
}

List merged_keys(const FieldSpec& f, const MergedPayload& m) {
  List keys;
  const auto& v = m.value(f.name);
  if (f.is_list()) {
    if (const auto* l = std::get_if<List>(&v))
      for (const auto& item : *l) keys.push_back(text::canonical(item));
  } else if (!is_null(v)) {
    keys.push_back(canon_key(v));
  }
  return keys;
}

bool has_conflict(const MergedPayload& m, const std::string& field) {
  return std::any_of(m.conflicts.begin(), m.conflicts.end(), [&](const ConflictFlag& c) { return c.field == field; });
}

std::vector<UnitAnnotation> random_fixture(std::mt19937& gen) {
  static const List texts = {"Caf\xc3\xa9", "Cafe\xcc\x81", " Caf\xc3\xa9 ", "tea", "Tea", "tea "};
  const auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen); };
  const SourceKey key = source_key("doc.pdf");
  std::vector<UnitAnnotation> anns;
  for (int u = pick(1, 6) - 1; u >= 0; --u) {
    UnitAnnotation a;
    a.parent = key;
    a.unit_id = fmt::format("{}:p{}-{}", key.hex(), anns.size() * 8, anns.size() * 8 + 8);
    a.payload_id = toy().id;
    for (const auto& f : toy().fields) {
      if (pick(0, 2) == 0) continue;
      if (pick(0, 3) == 0) {
        a.values[f.name] = FieldValue{};
        continue;
      }
      switch (f.kind) {
        case FieldKind::integer: a.values[f.name] = int64_t{pick(1, 3)}; break;
        case FieldKind::real: a.values[f.name] = pick(0, 2) * 0.5; break;
        case FieldKind::text: a.values[f.name] = texts[pick(0, 5)]; break;
        case FieldKind::enumeration: a.values[f.name] = f.vocabulary[pick(0, 2)]; break;
        default: {
          List items;
          for (int n = pick(0, 3); n > 0; --n) items.push_back(texts[pick(0, 5)]);
          a.values[f.name] = items;
        }
      }
    }
    if (pick(0, 7) == 0) {
      a.status = AnnotationStatus::failed;
      a.error = "retry_exhausted";
    }
    anns.push_back(std::move(a));
  }
  return anns;
}

Outcome merge_laws() {
  Outcome o;
  std::mt19937 gen(31337);
  const int fixtures = 10000;
  for (int i = 0; i < fixtures && o.ok; ++i) {
    const auto anns = random_fixture(gen);
    const auto m = merge_payload(toy(), anns);

    for (const auto& f : toy().fields) {
      const auto e = enumerate(f, anns);
      const auto got = merged_keys(f, m);
      // Oracle agreement, list first-appearance union, null preservation.
      if (f.is_list()) {
        o.require(got == e.keys, fmt::format("fixture {}: list {} differs from oracle", i, f.name));
      } else if (e.conflict) {
        o.require(got.empty() && has_conflict(m, f.name), fmt::format("fixture {}: {} conflict missed", i, f.name));
      } else {
        o.require(got == e.keys && !has_conflict(m, f.name), fmt::format("fixture {}: scalar {} differs", i, f.name));
      }
    }

    // Idempotence: a single annotation reproduces itself.
    if (anns[0].ok()) {
      const auto one = merge_payload(toy(), std::vector<UnitAnnotation>{anns[0]});
      for (const auto& f : toy().fields)
        o.require(merged_keys(f, one) == enumerate(f, std::vector<UnitAnnotation>{anns[0]}).keys,
                  fmt::format("fixture {}: single-unit merge changed {}", i, f.name));
    }

    // Scalar permutation invariance.
    auto shuffled = anns;
    std::shuffle(shuffled.begin(), shuffled.end(), gen);
    const auto p = merge_payload(toy(), shuffled);
    for (const auto& f : toy().fields) {
      if (f.is_list()) continue;
      o.require(has_conflict(m, f.name) == has_conflict(p, f.name) && merged_keys(f, m) == merged_keys(f, p),
                fmt::format("fixture {}: permutation changed {}", i, f.name));
    }

    // Monotonicity: one more unit never removes a list item.
    auto more = anns;
    auto extra = random_fixture(gen);
    extra[0].unit_id = fmt::format("{}:p{}-{}", extra[0].parent.hex(), more.size() * 8, more.size() * 8 + 8);
    more.push_back(extra[0]);
    const auto grown = merge_payload(toy(), more);
    for (const auto& f : toy().fields) {
      if (!f.is_list()) continue;
      const auto before = merged_keys(f, m);
      const auto after = merged_keys(f, grown);
      o.require(after.size() >= before.size() && std::equal(before.begin(), before.end(), after.begin()),
                fmt::format("fixture {}: adding a unit dropped items of {}", i, f.name));
    }
  }
  if (o.ok) o.detail = fmt::format("{} fixtures", fixtures);
  return o;
}

// 9
Outcome wilson() {
  Outcome o;
  const auto full = round_interval(wilson_interval(50, 50, 1.96));
  o.require(full.lower == 92.9 && full.upper == 100.0, fmt::format("50/50 -> ({}, {})", full.lower, full.upper));
  const auto none = round_interval(wilson_interval(0, 50, 1.96));
  o.require(none.lower == 0.0 && none.upper == 7.1, fmt::format("0/50 -> ({}, {})", none.lower, none.upper));

  std::ifstream in(evidex::testing::data_dir() / "wilson_oracle.tsv");
  o.require(static_cast<bool>(in), "oracle table missing");
  std::string line;
  std::getline(in, line);
  int rows = 0;
  double worst = 0;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    int64_t s = 0, n = 0;
    double lo = 0, hi = 0;
    ss >> s >> n >> lo >> hi;
    const auto r = round_interval(wilson_interval(s, n));
    worst = std::max({worst, std::abs(r.lower - lo), std::abs(r.upper - hi)});
    ++rows;
  }
  o.require(rows == 100, fmt::format("{} oracle rows", rows));
  o.require(worst <= 0.05 + 1e-9, fmt::format("max deviation {:.4f}", worst));
  if (o.ok) o.detail = fmt::format("100 oracle rows, max deviation {:.4f} pp", worst);
  return o;
}

// 10
Outcome quality() {
  Outcome o;
  const QualityWeights weights;
  std::string text;
  for (int i = 0; i < 12; ++i) text += fmt::format("Plasma concentration in patient {} was measured.\n", i + 1);
  double prev = proxy_score({corruption_indicator(text), 1, 1, 1}, weights);
  o.require(prev == 100.0, fmt::format("clean fixture scored {}", prev));
  const List junk = {"~~~~~~~~~~", "#$%&*@!#$%", "|||| |||| ||||", "@@@@@@"};
  for (int k = 0; k < 12; ++k) {
    text += junk[k % junk.size()] + "\n";
    const double now = proxy_score({corruption_indicator(text), 1, 1, 1}, weights);
    o.require(now < prev, fmt::format("injection {} did not lower the score ({} -> {})", k + 1, prev, now));
    prev = now;
  }
  std::string corrupt;
  for (const auto& j : junk) corrupt += j + "\n";
  const double c = corruption_indicator(corrupt);
  const double score = proxy_score({c, 0, 0, 0}, {1, 0, 0, 0});
  o.require(score == 0.0, fmt::format("all-corrupt corruption component scored {}", score));
  if (o.ok) o.detail = "100.0 clean, strictly decreasing over 12 injections, 0.0 all-corrupt";
  return o;
}

// 12
Outcome fault_containment(Scenarios& s) {
  Outcome o;
  const auto& r = s.get("faults");
  require_checks(o, r, 0, {"transient_errors", "retries", "failed_units", "docs_processed", "docs_excluded"});
  if (!r.passes.empty()) {
    const auto& rep = r.passes[0].report;
    o.require(rep.retries == 10 && rep.transient_errors == 15,
              fmt::format("retries {} transient_errors {}", rep.retries, rep.transient_errors));
    o.require(rep.docs_excluded == 0 && rep.docs_processed == rep.docs_seen, "a document was aborted");
    if (o.ok)
      o.detail = fmt::format("retries {}, transient_errors {}, failed_units {}, {} docs completed", rep.retries,
                             rep.transient_errors, rep.failed_units, rep.docs_processed);
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "evidex-acceptance";
  fs::remove_all(work);
  fs::create_directories(work);
  Scenarios scenarios(work);

  const auto guarded = [](const std::function<Outcome()>& f) {
    try {
      return f();
    } catch (const std::exception& e) {
      return Outcome{false, std::string("exception: ") + e.what()};
    }
  };

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"chunk-math law", chunk_law},
      {"paper-shape accounting", [&] { return paper_accounting(scenarios); }},
      {"rate/concurrency contract", [&] { return rate_contract(scenarios); }},
      {"retry/backoff trace", retry_trace},
      {"merge laws", merge_laws},
      {"provenance fidelity",
       [&] {
         Outcome o;
         require_checks(o, scenarios.get("paper_shape"), 0, {"evidence_fidelity", "manifest_fidelity"});
         if (o.ok) o.detail = "paper-shape corpus";
         return o;
       }},
      {"reproducibility",
       [&] {
         Outcome o;
         require_checks(o, scenarios.get("paper_shape"), 0, {"reproducible"});
         require_checks(o, scenarios.get("lognormal"), 0, {"reproducible"});
         for (const auto& c : scenarios.get("paper_shape").passes[0].checks)
           if (c.name == "reproducible" && o.ok) o.detail = c.detail;
         return o;
       }},
      {"resume",
       [&] {
         Outcome o;
         require_checks(o, scenarios.get("paper_shape"), 1,
                        {"docs_skipped", "docs_processed", "requests_issued", "backend_calls"});
         require_checks(o, scenarios.get("resume"), 1, {"docs_skipped", "backend_calls"});
         if (o.ok) o.detail = "second pass: 0 calls, every document skipped";
         return o;
       }},
      {"wilson intervals", wilson},
      {"quality monotonicity", quality},
      {"completeness/missingness",
       [&] {
         Outcome o;
         require_checks(o, scenarios.get("paper_shape"), 0, {"missingness_consistency", "completeness"});
         for (const auto& c : scenarios.get("paper_shape").passes[0].checks)
           if (c.name == "completeness" && o.ok) o.detail = c.detail;
         return o;
       }},
      {"fault containment", [&] { return fault_containment(scenarios); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = Clock::now();
    const Outcome o = guarded(criteria[i].second);
    failed += o.ok ? 0 : 1;
    std::cout << fmt::format("{} {:2d} {} ({:.1f} s){}{}\n", o.ok ? "PASS" : "FAIL", i + 1, criteria[i].first,
                             seconds_since(t0), o.detail.empty() ? "" : ": ", o.detail)
              << std::flush;
  }
  std::cout << fmt::format("{}/{} criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
