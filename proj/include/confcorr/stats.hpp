#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "confcorr/confidence.hpp"

namespace confcorr {

/// 1-based ranks; tied values share the mean of the ranks they span.
std::vector<double> average_ranks(std::span<const double> values);

/// Number of values that share their value with at least one other value.
std::size_t count_tied(std::span<const double> values);

/// Pearson correlation of tie-averaged ranks. Needs >= 3 paired values and at
/// least two distinct values on each side.
double spearman_rho(std::span<const double> x, std::span<const double> y);

struct CorrelationReport {
  CheckpointKey checkpoint;
  std::string metric_name;
  std::string quality_name;
  double rho = 0.0;
  std::size_t n = 0;
  bool orientation_aligned = true;
  std::size_t tied_metric = 0;
  std::size_t tied_quality = 0;
};

/// Spearman rho between the orientation-aligned metric and the quality over one
/// checkpoint's rows where both cells are present.
CorrelationReport correlate_checkpoint(const ScoreTable& table, MetricId metric, QualityMetric quality);

/// Regularized incomplete beta I_x(a, b) by continued fraction.
double regularized_incomplete_beta(double a, double b, double x);

/// Upper tail P(F > f) of the F(d1, d2) distribution.
double f_distribution_sf(double f, double d1, double d2);

struct AnovaResult {
  double f_statistic = 0.0;
  double p_value = 1.0;
  double df_between = 0.0;
  double df_within = 0.0;
};

AnovaResult one_way_anova(const std::vector<std::vector<double>>& groups);

/// Holm step-down adjusted p-values, in input order.
std::vector<double> holm_adjust(std::span<const double> p_values);

struct AnovaHypothesis {
  std::string grouping;
  std::vector<std::vector<double>> groups;
};

struct SignificanceReport {
  std::string grouping;
  double f_statistic = 0.0;
  double p_raw = 1.0;
  double p_adjusted = 1.0;
  bool rejected = false;
  double alpha = 0.05;
  std::size_t family_size = 0;
};

/// One-way ANOVA per hypothesis, Holm-corrected across the family at `alpha`.
std::vector<SignificanceReport> anova_holm(std::span<const AnovaHypothesis> family, double alpha);

struct Rescaled {
  std::vector<double> values;
  double min = 0.0;
  double max = 0.0;
};

/// (s - min) / (max - min). Needs two distinct values.
Rescaled min_max_rescale(std::span<const double> scores);

struct DetectionReport {
  std::string metric_name;
  double auroc = 0.5;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  double rescale_min = 0.0;
  double rescale_max = 0.0;
};

/// Probability that a positive scores above a negative, ties counted half.
DetectionReport auroc(std::span<const double> scores, const std::vector<bool>& labels);

struct SeedSummary {
  double mean = 0.0;
  std::optional<double> sd;  // sample standard deviation; empty with fewer than 2 values
  std::size_t n = 0;
};

SeedSummary summarize(std::span<const double> values);

}  // namespace confcorr
