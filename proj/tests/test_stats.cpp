#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "demopos/stats.hpp"
#include "oracles.hpp"

using namespace demopos;

namespace {

PairedSample sample_from(const std::vector<double>& d) {
  PairedSample s;
  for (std::size_t i = 0; i < d.size(); ++i) {
    s.labels.push_back("m" + std::to_string(i));
    s.a.push_back(d[i]);
    s.b.push_back(0.0);
  }
  return s;
}

// Table-1 MMLU accuracy columns, ten models.
const std::vector<double> kMmluSsp = {0.5, 0.71, 0.83, 0.94, 0.96, 0.4, 0.57, 0.59, 0.59, 0.79};
const std::vector<double> kMmluEsp = {0.56, 0.7, 0.83, 0.92, 0.97, 0.45, 0.59, 0.58, 0.57, 0.77};
const std::vector<double> kMmluSum = {0.5, 0.69, 0.81, 0.93, 0.96, 0.46, 0.56, 0.57, 0.58, 0.81};
const std::vector<double> kMmluEum = {0.38, 0.41, 0.82, 0.05, 0.86, 0.29, 0.12, 0.23, 0.57, 0.77};

}  // namespace

TEST_CASE("all-positive differences give W = 0 and the exact tail") {
  std::vector<double> d;
  for (int i = 1; i <= 10; ++i) d.push_back(i * 0.1);
  WilcoxonResult r = wilcoxon_one_sided(sample_from(d));
  CHECK(r.w_statistic == 0.0);
  CHECK(r.n_effective == 10);
  CHECK(r.p_raw == doctest::Approx(1.0 / 1024.0).epsilon(1e-12));
}

TEST_CASE("three positive differences give p = 1/8") {
  WilcoxonResult r = wilcoxon_one_sided(sample_from({1.0, 2.0, 3.0}));
  CHECK(r.w_statistic == 0.0);
  CHECK(r.p_raw == doctest::Approx(0.125).epsilon(1e-15));
}

TEST_CASE("zeros are dropped before ranking") {
  WilcoxonResult r = wilcoxon_one_sided(sample_from({0.0, 1.0, 2.0, 0.0, 3.0}));
  CHECK(r.n_effective == 3);
  CHECK(r.p_raw == doctest::Approx(0.125).epsilon(1e-15));
}

TEST_CASE("all-zero differences are degenerate") {
  CHECK_THROWS_AS(wilcoxon_one_sided(sample_from({0.0, 0.0, 0.0})), DegenerateSample);
}

TEST_CASE("exact test equals full sign enumeration on random suites") {
  std::mt19937 rng(101);
  for (int trial = 0; trial < 120; ++trial) {
    std::size_t n = 2 + rng() % 9;  // up to 10
    std::vector<double> d;
    for (std::size_t i = 0; i < n; ++i) {
      // Small integer grid forces plenty of |d| ties.
      int v = static_cast<int>(rng() % 9) - 4;
      d.push_back(static_cast<double>(v));
    }
    bool all_zero = true;
    for (double x : d) {
      if (x != 0.0) all_zero = false;
    }
    if (all_zero) d[0] = 1.0;

    WilcoxonResult got = wilcoxon_one_sided(sample_from(d));
    oracle::WilcoxonOracle expected = oracle::wilcoxon_enumeration(d);
    CHECK(got.n_effective == expected.n);
    CHECK(got.w_statistic == doctest::Approx(expected.w).epsilon(1e-12));
    CHECK(got.p_raw == doctest::Approx(expected.p).epsilon(1e-12));
  }
}

TEST_CASE("one-sided p is monotone when strengthening an all-positive sample") {
  std::vector<double> d = {0.2, 0.4, 0.6};
  double previous = wilcoxon_one_sided(sample_from(d)).p_raw;
  for (int i = 0; i < 8; ++i) {
    d.push_back(0.8 + 0.1 * i);
    double p = wilcoxon_one_sided(sample_from(d)).p_raw;
    CHECK(p <= previous);
    previous = p;
  }
}

TEST_CASE("W and p are invariant under positive scaling") {
  std::mt19937 rng(131);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> d;
    std::size_t n = 3 + rng() % 8;
    for (std::size_t i = 0; i < n; ++i) {
      d.push_back((static_cast<int>(rng() % 11) - 5) * 0.25);
    }
    bool all_zero = std::all_of(d.begin(), d.end(), [](double x) { return x == 0.0; });
    if (all_zero) d[0] = 0.25;
    std::vector<double> scaled;
    for (double x : d) scaled.push_back(x * 37.5);
    WilcoxonResult base = wilcoxon_one_sided(sample_from(d));
    WilcoxonResult after = wilcoxon_one_sided(sample_from(scaled));
    CHECK(base.w_statistic == after.w_statistic);
    CHECK(base.p_raw == after.p_raw);
  }
}

TEST_CASE("large samples switch to the corrected normal approximation") {
  std::vector<double> d;
  for (int i = 1; i <= 40; ++i) d.push_back(i % 7 == 0 ? -0.1 : 0.1 + 0.01 * i);
  WilcoxonResult r = wilcoxon_one_sided(sample_from(d));
  CHECK(r.p_raw > 0.0);
  CHECK(r.p_raw < 0.01);
  CHECK(r.n_effective == 40);
}

TEST_CASE("effect size is the standardized mean difference") {
  CHECK(effect_size(sample_from({1.0, -1.0})) == 0.0);
  CHECK_THROWS_AS(effect_size(sample_from({0.5, 0.5, 0.5})), DegenerateSample);
  CHECK(effect_size(sample_from({0.1, 0.3, 0.2})) == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("bh adjustment matches the step-up oracle") {
  std::vector<double> p = {0.001, 0.01, 0.03, 0.2, 0.9, 0.9};
  std::vector<FdrEntry> got = fdr_bh(p, 0.05);
  std::vector<double> expected = oracle::bh_stepup(p);
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(got[i].p_adjusted == doctest::Approx(expected[i]).epsilon(1e-12));
  }
}

TEST_CASE("bh corner cases") {
  std::vector<FdrEntry> single = fdr_bh({0.01}, 0.05);
  CHECK(single[0].p_adjusted == 0.01);
  CHECK(single[0].reject);

  std::vector<FdrEntry> equal = fdr_bh({0.2, 0.2, 0.2, 0.2}, 0.05);
  for (const FdrEntry& e : equal) CHECK(e.p_adjusted == doctest::Approx(0.2).epsilon(1e-15));

  CHECK_THROWS(fdr_bh({0.5, 1.2}, 0.05));
  CHECK_THROWS(fdr_bh({-0.1}, 0.05));
}

TEST_CASE("bh properties hold on random vectors") {
  std::mt19937 rng(151);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t m = 1 + rng() % 20;
    std::vector<double> p;
    for (std::size_t i = 0; i < m; ++i) p.push_back((rng() % 10001) / 10000.0);
    std::vector<FdrEntry> adjusted = fdr_bh(p, 0.05);
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
    for (std::size_t i = 0; i < m; ++i) {
      CHECK(adjusted[i].p_adjusted >= p[i]);
      CHECK(adjusted[i].p_adjusted <= 1.0);
      if (i > 0) {
        CHECK(adjusted[order[i]].p_adjusted >= adjusted[order[i - 1]].p_adjusted);
      }
    }
  }
}

namespace {

MetricByModelLayout mmlu_metrics() {
  MetricByModelLayout metrics;
  for (std::size_t i = 0; i < 10; ++i) {
    std::string model = "m" + std::to_string(i);
    metrics[{model, PromptLayout::kSsp}] = kMmluSsp[i];
    metrics[{model, PromptLayout::kEsp}] = kMmluEsp[i];
    metrics[{model, PromptLayout::kSum}] = kMmluSum[i];
    metrics[{model, PromptLayout::kEum}] = kMmluEum[i];
  }
  return metrics;
}

}  // namespace

TEST_CASE("pairwise positions produce six jointly corrected tests") {
  std::vector<PromptLayout> layouts(kIclLayouts.begin(), kIclLayouts.end());
  std::vector<StatTestResult> results = pairwise_positions(mmlu_metrics(), layouts);
  REQUIRE(results.size() == 6);
  for (const StatTestResult& r : results) {
    CHECK(!r.degenerate);
    CHECK(r.p_adjusted >= r.p_raw);
  }
  auto ssp_eum = std::find_if(results.begin(), results.end(), [](const StatTestResult& r) {
    return r.comparison == "ssp_vs_eum";
  });
  REQUIRE(ssp_eum != results.end());
  CHECK(ssp_eum->w_statistic == 0.0);  // every ssp value beats eum
  CHECK(ssp_eum->mean_diff > 0.0);
}

TEST_CASE("identical layout columns surface as flagged degenerate results") {
  MetricByModelLayout metrics;
  for (int i = 0; i < 4; ++i) {
    std::string model = "m" + std::to_string(i);
    metrics[{model, PromptLayout::kSsp}] = 0.5 + i * 0.01;
    metrics[{model, PromptLayout::kEsp}] = 0.5 + i * 0.01;
    metrics[{model, PromptLayout::kSum}] = 0.4 + i * 0.02;
    metrics[{model, PromptLayout::kEum}] = 0.3 + i * 0.03;
  }
  std::vector<PromptLayout> layouts(kIclLayouts.begin(), kIclLayouts.end());
  std::vector<StatTestResult> results = pairwise_positions(metrics, layouts);
  REQUIRE(results.size() == 6);
  auto degenerate = std::find_if(results.begin(), results.end(), [](const StatTestResult& r) {
    return r.comparison == "ssp_vs_esp";
  });
  REQUIRE(degenerate != results.end());
  CHECK(degenerate->degenerate);
}

TEST_CASE("missing cells are rejected") {
  MetricByModelLayout metrics;
  metrics[{"m0", PromptLayout::kSsp}] = 0.5;
  metrics[{"m1", PromptLayout::kSsp}] = 0.6;
  metrics[{"m0", PromptLayout::kEum}] = 0.4;
  std::vector<PromptLayout> layouts = {PromptLayout::kSsp, PromptLayout::kEum};
  CHECK_THROWS(pairwise_positions(metrics, layouts));
}

TEST_CASE("baseline tests run one one-sided test per layout") {
  MetricByModelLayout metrics = mmlu_metrics();
  std::map<std::string, double> zero_shot;
  std::mt19937 rng(171);
  for (std::size_t i = 0; i < 10; ++i) {
    zero_shot["m" + std::to_string(i)] = 0.30 + (rng() % 100) / 2000.0;
  }
  std::vector<PromptLayout> layouts(kIclLayouts.begin(), kIclLayouts.end());
  std::vector<StatTestResult> results = baseline_tests(metrics, zero_shot, layouts);
  REQUIRE(results.size() == 4);
  for (const StatTestResult& r : results) {
    CHECK(r.comparison.find("_vs_zero_shot") != std::string::npos);
    if (!r.degenerate) {
      CHECK(r.p_raw >= 0.0);
      CHECK(r.p_raw <= 1.0);
      CHECK(r.p_adjusted >= r.p_raw);
    }
  }

  SUBCASE("a layout identical to zero-shot flags as degenerate") {
    MetricByModelLayout same = metrics;
    for (const auto& [model, value] : zero_shot) {
      same[{model, PromptLayout::kEum}] = value;
    }
    std::vector<StatTestResult> flagged = baseline_tests(same, zero_shot, layouts);
    CHECK(flagged[3].degenerate);
  }
}

TEST_CASE("baseline tests match the enumeration oracle on a synthetic fixture") {
  std::mt19937 rng(191);
  MetricByModelLayout metrics;
  std::map<std::string, double> zero_shot;
  std::vector<double> diffs;
  for (int i = 0; i < 10; ++i) {
    std::string model = "m" + std::to_string(i);
    double base = 0.3 + (rng() % 100) / 1000.0;
    double shift = ((rng() % 7) - 2) / 20.0;  // known per-model shift
    zero_shot[model] = base;
    metrics[{model, PromptLayout::kSsp}] = base + shift;
    diffs.push_back(shift);
  }
  bool all_zero = std::all_of(diffs.begin(), diffs.end(), [](double x) { return x == 0.0; });
  if (all_zero) {
    metrics[{"m0", PromptLayout::kSsp}] += 0.05;
    diffs[0] = 0.05;
  }
  std::vector<StatTestResult> results =
      baseline_tests(metrics, zero_shot, {PromptLayout::kSsp});
  REQUIRE(results.size() == 1);
  oracle::WilcoxonOracle expected = oracle::wilcoxon_enumeration(diffs);
  CHECK(results[0].w_statistic == doctest::Approx(expected.w).epsilon(1e-9));
  CHECK(results[0].p_raw == doctest::Approx(expected.p).epsilon(1e-9));

  double mean = 0.0;
  for (double d : diffs) mean += d;
  mean /= diffs.size();
  double ss = 0.0;
  for (double d : diffs) ss += (d - mean) * (d - mean);
  double sd = std::sqrt(ss / (diffs.size() - 1));
  CHECK(results[0].effect_size == doctest::Approx(mean / sd).epsilon(1e-9));
}
