#include "confcorr/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace confcorr {

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    // positions i..j-1 hold ranks i+1..j
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = rank;
    i = j;
  }
  return ranks;
}

std::size_t count_tied(std::span<const double> values) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  std::size_t tied = 0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i + 1;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    if (j - i > 1) tied += j - i;
    i = j;
  }
  return tied;
}

namespace {

double pearson(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw DegenerateInput("correlation of a constant input");
  return std::clamp(sxy / (std::sqrt(sxx) * std::sqrt(syy)), -1.0, 1.0);
}

bool is_constant(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

}  // namespace

double spearman_rho(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("spearman: length mismatch");
  if (x.size() < 3) throw DegenerateInput("spearman: need at least 3 paired values");
  if (is_constant(x) || is_constant(y)) throw DegenerateInput("spearman: constant input");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

CorrelationReport correlate_checkpoint(const ScoreTable& table, MetricId metric, QualityMetric quality) {
  const auto& spec = metric_spec(metric);
  CorrelationReport report;
  report.metric_name = std::string(spec.name);
  report.quality_name = std::string(name_of(quality));
  std::vector<double> conf, qual;
  for (const auto& row : table.rows()) {
    if (!table.rows().empty() && row.checkpoint != table.rows().front().checkpoint) {
      throw Error("correlate_checkpoint expects rows of a single checkpoint");
    }
    auto c = table.metric(row, metric);
    auto q = table.quality(row, quality);
    if (c && q) {
      conf.push_back(align_orientation(spec, *c));
      qual.push_back(*q);
    }
  }
  if (!table.rows().empty()) report.checkpoint = table.rows().front().checkpoint;
  report.n = conf.size();
  if (conf.size() < 3) {
    throw DegenerateInput("insufficient joint support: " + std::to_string(conf.size()) + " rows with both " +
                          report.metric_name + " and " + report.quality_name);
  }
  report.rho = spearman_rho(conf, qual);
  report.tied_metric = count_tied(conf);
  report.tied_quality = count_tied(qual);
  return report;
}

namespace {

constexpr double kBetaConvergence = 1e-12;
constexpr int kBetaMaxIterations = 10000;

// Modified Lentz evaluation of the incomplete-beta continued fraction.
double beta_continued_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kBetaMaxIterations; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kBetaConvergence) return h;
  }
  throw Error("incomplete beta continued fraction did not converge");
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (a <= 0.0 || b <= 0.0) throw Error("incomplete beta: parameters must be positive");
  if (x < 0.0 || x > 1.0) throw Error("incomplete beta: x outside [0,1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double f_distribution_sf(double f, double d1, double d2) {
  if (d1 <= 0.0 || d2 <= 0.0) throw Error("F distribution: degrees of freedom must be positive");
  if (f <= 0.0) return 1.0;
  if (std::isinf(f)) return 0.0;
  return regularized_incomplete_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f));
}

AnovaResult one_way_anova(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2) throw Error("ANOVA needs at least 2 groups");
  std::size_t total = 0;
  double grand = 0.0;
  for (const auto& g : groups) {
    if (g.size() < 2) throw Error("ANOVA needs at least 2 values per group");
    total += g.size();
    grand += std::accumulate(g.begin(), g.end(), 0.0);
  }
  grand /= static_cast<double>(total);
  double between = 0.0;
  double within = 0.0;
  for (const auto& g : groups) {
    const double m = std::accumulate(g.begin(), g.end(), 0.0) / static_cast<double>(g.size());
    between += static_cast<double>(g.size()) * (m - grand) * (m - grand);
    for (double v : g) within += (v - m) * (v - m);
  }
  if (within == 0.0) {
    throw DegenerateInput(between == 0.0 ? "ANOVA: all values identical across all groups"
                                         : "ANOVA: zero within-group variance");
  }
  AnovaResult r;
  r.df_between = static_cast<double>(groups.size() - 1);
  r.df_within = static_cast<double>(total - groups.size());
  r.f_statistic = (between / r.df_between) / (within / r.df_within);
  r.p_value = f_distribution_sf(r.f_statistic, r.df_between, r.df_within);
  return r;
}

std::vector<double> holm_adjust(std::span<const double> p_values) {
  const std::size_t m = p_values.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });
  std::vector<double> adjusted(m);
  double running = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double scaled = std::min(1.0, static_cast<double>(m - i) * p_values[order[i]]);
    running = std::max(running, scaled);
    adjusted[order[i]] = running;
  }
  return adjusted;
}

std::vector<SignificanceReport> anova_holm(std::span<const AnovaHypothesis> family, double alpha) {
  if (alpha <= 0.0 || alpha >= 1.0) throw Error("alpha must lie in (0, 1)");
  std::vector<SignificanceReport> reports;
  std::vector<double> raw;
  for (const auto& h : family) {
    const auto result = one_way_anova(h.groups);
    SignificanceReport r;
    r.grouping = h.grouping;
    r.f_statistic = result.f_statistic;
    r.p_raw = result.p_value;
    r.alpha = alpha;
    r.family_size = family.size();
    reports.push_back(r);
    raw.push_back(result.p_value);
  }
  const auto adjusted = holm_adjust(raw);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    reports[i].p_adjusted = adjusted[i];
    reports[i].rejected = adjusted[i] <= alpha;
  }
  return reports;
}

Rescaled min_max_rescale(std::span<const double> scores) {
  if (scores.empty()) throw DegenerateInput("rescale: empty input");
  auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  Rescaled out;
  out.min = *lo;
  out.max = *hi;
  if (out.max == out.min) throw DegenerateInput("rescale: constant input");
  out.values.reserve(scores.size());
  for (double s : scores) out.values.push_back((s - out.min) / (out.max - out.min));
  return out;
}

DetectionReport auroc(std::span<const double> scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) throw Error("auroc: scores and labels differ in length");
  DetectionReport report;
  for (bool l : labels) (l ? report.n_pos : report.n_neg)++;
  if (report.n_pos == 0 || report.n_neg == 0) throw DegenerateInput("auroc: labels contain a single class");
  const auto ranks = average_ranks(scores);
  double positive_rank_sum = 0.0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (labels[i]) positive_rank_sum += ranks[i];
  }
  const double np = static_cast<double>(report.n_pos);
  const double nn = static_cast<double>(report.n_neg);
  report.auroc = (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
  auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  report.rescale_min = *lo;
  report.rescale_max = *hi;
  return report;
}

SeedSummary summarize(std::span<const double> values) {
  SeedSummary s;
  s.n = values.size();
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

}  // namespace confcorr
