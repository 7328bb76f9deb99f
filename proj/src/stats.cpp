#include "demopos/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace demopos {
namespace {

constexpr std::size_t kExactLimit = 25;

std::vector<double> paired_differences(const PairedSample& sample) {
  if (sample.a.size() != sample.b.size() ||
      (!sample.labels.empty() && sample.labels.size() != sample.a.size())) {
    throw Error("paired sample sides have different lengths");
  }
  if (sample.a.size() < 2) {
    throw Error("paired sample needs at least two pairs");
  }
  std::vector<double> d(sample.a.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = sample.a[i] - sample.b[i];
  return d;
}

struct Ranked {
  std::vector<double> ranks;      // rank of |d_i|, average ranks on ties
  std::vector<double> nonzero;    // the surviving differences
  std::vector<long> tie_sizes;    // sizes of tie groups among |d|
};

Ranked rank_absolute(const std::vector<double>& differences) {
  Ranked out;
  for (double d : differences) {
    if (d != 0.0) out.nonzero.push_back(d);
  }
  const std::size_t n = out.nonzero.size();
  if (n == 0) {
    throw DegenerateSample("all paired differences are zero");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return std::fabs(out.nonzero[i]) < std::fabs(out.nonzero[j]);
  });
  out.ranks.resize(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n &&
           std::fabs(out.nonzero[order[j + 1]]) == std::fabs(out.nonzero[order[i]])) {
      ++j;
    }
    double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) out.ranks[order[k]] = avg_rank;
    out.tie_sizes.push_back(static_cast<long>(j - i + 1));
    i = j + 1;
  }
  return out;
}

/// Exact cdf Pr(W* <= w) where W* sums a uniformly random subset of the
/// ranks. Works on doubled ranks so average ranks stay integral.
double exact_cdf(const std::vector<double>& ranks, double w) {
  std::vector<long> doubled(ranks.size());
  long total = 0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    doubled[i] = std::lround(2.0 * ranks[i]);
    total += doubled[i];
  }
  std::vector<double> counts(static_cast<std::size_t>(total) + 1, 0.0);
  counts[0] = 1.0;
  long reach = 0;
  for (long r : doubled) {
    for (long s = reach; s >= 0; --s) {
      if (counts[static_cast<std::size_t>(s)] > 0.0) {
        counts[static_cast<std::size_t>(s + r)] += counts[static_cast<std::size_t>(s)];
      }
    }
    reach += r;
  }
  // Half-integer observed W cannot occur between two doubled-integer sums,
  // but rounding toward +0.5 keeps <= semantics safe.
  long threshold = static_cast<long>(std::floor(2.0 * w + 0.5));
  double below = 0.0;
  for (long s = 0; s <= std::min(threshold, total); ++s) {
    below += counts[static_cast<std::size_t>(s)];
  }
  return below / std::ldexp(1.0, static_cast<int>(ranks.size()));
}

double normal_cdf(double z) {
  return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

/// Normal approximation with tie correction and continuity correction.
double approx_cdf(double w, std::size_t n, const std::vector<long>& tie_sizes) {
  double dn = static_cast<double>(n);
  double mean = dn * (dn + 1.0) / 4.0;
  double var = dn * (dn + 1.0) * (2.0 * dn + 1.0) / 24.0;
  for (long t : tie_sizes) {
    double dt = static_cast<double>(t);
    var -= (dt * dt * dt - dt) / 48.0;
  }
  if (var <= 0.0) {
    throw DegenerateSample("zero variance in rank sum");
  }
  return normal_cdf((w + 0.5 - mean) / std::sqrt(var));
}

double cdf(const Ranked& ranked, double w) {
  if (ranked.nonzero.size() <= kExactLimit) {
    return exact_cdf(ranked.ranks, w);
  }
  return approx_cdf(w, ranked.nonzero.size(), ranked.tie_sizes);
}

struct RankSums {
  double w_neg = 0.0;
  double w_pos = 0.0;
};

RankSums rank_sums(const Ranked& ranked) {
  RankSums sums;
  for (std::size_t i = 0; i < ranked.nonzero.size(); ++i) {
    if (ranked.nonzero[i] < 0) {
      sums.w_neg += ranked.ranks[i];
    } else {
      sums.w_pos += ranked.ranks[i];
    }
  }
  return sums;
}

StatTestResult run_test(const std::string& comparison, const PairedSample& sample,
                        bool one_sided) {
  StatTestResult result;
  result.comparison = comparison;
  std::vector<double> d = paired_differences(sample);
  result.mean_diff = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
  try {
    WilcoxonResult w = one_sided ? wilcoxon_one_sided(sample) : wilcoxon_two_sided(sample);
    result.w_statistic = w.w_statistic;
    result.p_raw = w.p_raw;
    result.n_effective = w.n_effective;
    result.effect_size = effect_size(sample);
  } catch (const DegenerateSample&) {
    result.degenerate = true;
    result.p_raw = std::numeric_limits<double>::quiet_NaN();
    result.p_adjusted = std::numeric_limits<double>::quiet_NaN();
    result.effect_size = std::numeric_limits<double>::quiet_NaN();
  }
  return result;
}

/// Joint BH correction over the non-degenerate rows.
void adjust_jointly(std::vector<StatTestResult>& results, double alpha) {
  std::vector<std::size_t> tested;
  std::vector<double> p;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (!results[i].degenerate) {
      tested.push_back(i);
      p.push_back(results[i].p_raw);
    }
  }
  if (p.empty()) return;
  std::vector<FdrEntry> adjusted = fdr_bh(p, alpha);
  for (std::size_t k = 0; k < tested.size(); ++k) {
    results[tested[k]].p_adjusted = adjusted[k].p_adjusted;
    results[tested[k]].significant = adjusted[k].reject;
  }
}

}  // namespace

WilcoxonResult wilcoxon_one_sided(const PairedSample& sample) {
  Ranked ranked = rank_absolute(paired_differences(sample));
  RankSums sums = rank_sums(ranked);
  WilcoxonResult result;
  result.w_statistic = sums.w_neg;
  result.n_effective = ranked.nonzero.size();
  result.p_raw = cdf(ranked, sums.w_neg);
  return result;
}

WilcoxonResult wilcoxon_two_sided(const PairedSample& sample) {
  Ranked ranked = rank_absolute(paired_differences(sample));
  RankSums sums = rank_sums(ranked);
  WilcoxonResult result;
  result.w_statistic = std::min(sums.w_neg, sums.w_pos);
  result.n_effective = ranked.nonzero.size();
  result.p_raw = std::min(1.0, 2.0 * cdf(ranked, result.w_statistic));
  return result;
}

double effect_size(const PairedSample& sample) {
  std::vector<double> d = paired_differences(sample);
  double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
  double ss = 0.0;
  for (double x : d) ss += (x - mean) * (x - mean);
  double sd = std::sqrt(ss / static_cast<double>(d.size() - 1));
  if (sd == 0.0) {
    throw DegenerateSample("zero variance in paired differences");
  }
  return mean / sd;
}

std::vector<FdrEntry> fdr_bh(const std::vector<double>& p_values, double alpha) {
  const std::size_t m = p_values.size();
  for (double p : p_values) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw Error("p-value out of [0, 1]");
    }
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return p_values[i] < p_values[j]; });
  std::vector<double> adjusted_sorted(m);
  double running = 1.0;
  for (std::size_t k = m; k-- > 0;) {
    double candidate = p_values[order[k]] * static_cast<double>(m) / static_cast<double>(k + 1);
    running = std::min(running, std::min(candidate, 1.0));
    // p * m/m can round one ulp under p; the adjusted value never sits below
    // the raw one.
    adjusted_sorted[k] = std::max(running, p_values[order[k]]);
  }
  std::vector<FdrEntry> out(m);
  for (std::size_t k = 0; k < m; ++k) {
    out[order[k]].p_adjusted = adjusted_sorted[k];
    out[order[k]].reject = adjusted_sorted[k] <= alpha;
  }
  return out;
}

std::vector<StatTestResult> pairwise_positions(const MetricByModelLayout& per_model_metrics,
                                               const std::vector<PromptLayout>& layouts,
                                               double alpha) {
  std::vector<std::string> models;
  for (const auto& [key, value] : per_model_metrics) {
    if (models.empty() || models.back() != key.first) models.push_back(key.first);
  }
  std::sort(models.begin(), models.end());
  models.erase(std::unique(models.begin(), models.end()), models.end());

  auto column = [&](PromptLayout layout) {
    std::vector<double> values;
    for (const std::string& model : models) {
      auto it = per_model_metrics.find({model, layout});
      if (it == per_model_metrics.end()) {
        throw Error("missing metric cell: " + model + "/" + to_string(layout));
      }
      values.push_back(it->second);
    }
    return values;
  };

  std::vector<StatTestResult> results;
  for (std::size_t i = 0; i < layouts.size(); ++i) {
    for (std::size_t j = i + 1; j < layouts.size(); ++j) {
      PairedSample sample{models, column(layouts[i]), column(layouts[j])};
      std::string name = to_string(layouts[i]) + "_vs_" + to_string(layouts[j]);
      results.push_back(run_test(name, sample, /*one_sided=*/false));
    }
  }
  adjust_jointly(results, alpha);
  return results;
}

std::vector<StatTestResult> baseline_tests(const MetricByModelLayout& per_model_metrics,
                                           const std::map<std::string, double>& zero_shot,
                                           const std::vector<PromptLayout>& layouts,
                                           double alpha) {
  std::vector<std::string> models;
  for (const auto& [model, value] : zero_shot) models.push_back(model);

  std::vector<StatTestResult> results;
  for (PromptLayout layout : layouts) {
    PairedSample sample;
    sample.labels = models;
    for (const std::string& model : models) {
      auto it = per_model_metrics.find({model, layout});
      if (it == per_model_metrics.end()) {
        throw Error("missing metric cell: " + model + "/" + to_string(layout));
      }
      sample.a.push_back(it->second);
      sample.b.push_back(zero_shot.at(model));
    }
    results.push_back(run_test(to_string(layout) + "_vs_zero_shot", sample, /*one_sided=*/true));
  }
  adjust_jointly(results, alpha);
  return results;
}

}  // namespace demopos
