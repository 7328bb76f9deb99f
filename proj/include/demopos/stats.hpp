#pragma once

#include <map>
#include <string>
#include <vector>

#include "demopos/prompting.hpp"
#include "demopos/util.hpp"

namespace demopos {

/// Per-model metric values under two conditions, aligned by position.
struct PairedSample {
  std::vector<std::string> labels;
  std::vector<double> a;
  std::vector<double> b;
};

struct WilcoxonResult {
  double w_statistic = 0.0;
  double p_raw = 1.0;
  std::size_t n_effective = 0;
};

/// One-sided Wilcoxon signed-rank test of H1: median(a - b) > 0. Zero
/// differences are dropped; |d| is ranked with average ranks on ties; W is
/// the sum of ranks of negative differences. Exact sign-flip null up to
/// n_effective = 25 (shift-algorithm convolution), normal approximation with
/// tie and continuity correction above. Throws DegenerateSample when every
/// difference is zero.
WilcoxonResult wilcoxon_one_sided(const PairedSample& sample);

/// Two-sided variant: W is min(negative-rank sum, positive-rank sum) and the
/// p-value doubles the smaller tail, capped at 1.
WilcoxonResult wilcoxon_two_sided(const PairedSample& sample);

/// mean(d) / sample-sd(d) over all paired differences (n-1 denominator).
/// Throws DegenerateSample on zero variance.
double effect_size(const PairedSample& sample);

struct FdrEntry {
  double p_adjusted = 1.0;
  bool reject = false;
};

/// Benjamini-Hochberg step-up: adjusted p_i = min over j >= rank(i) of
/// p_(j) * m / j, clipped to 1. Output order matches input order.
std::vector<FdrEntry> fdr_bh(const std::vector<double>& p_values, double alpha);

struct StatTestResult {
  std::string comparison;
  double mean_diff = 0.0;
  double w_statistic = 0.0;
  double p_raw = 1.0;
  double p_adjusted = 1.0;
  double effect_size = 0.0;
  std::size_t n_effective = 0;
  bool significant = false;
  /// Undefined test (all-zero differences or zero variance), surfaced as a
  /// flagged row rather than a crash. p/r fields are meaningless when set.
  bool degenerate = false;
};

using MetricByModelLayout = std::map<std::pair<std::string, PromptLayout>, double>;

/// Two-sided tests for every unordered layout pair, jointly BH-corrected at
/// alpha = 0.05. Throws on missing cells.
std::vector<StatTestResult> pairwise_positions(const MetricByModelLayout& per_model_metrics,
                                               const std::vector<PromptLayout>& layouts,
                                               double alpha = 0.05);

/// One one-sided test per layout against the zero-shot column, jointly
/// BH-corrected.
std::vector<StatTestResult> baseline_tests(const MetricByModelLayout& per_model_metrics,
                                           const std::map<std::string, double>& zero_shot,
                                           const std::vector<PromptLayout>& layouts,
                                           double alpha = 0.05);

}  // namespace demopos
