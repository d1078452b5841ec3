#include "confcorr/dynamics.hpp"

#include <algorithm>
#include <fstream>
#include <random>

#include <json.hpp>

namespace confcorr {

std::string_view name_of(QuadrantLabel label) {
  switch (label) {
    case QuadrantLabel::concordant: return "concordant";
    case QuadrantLabel::relatively_overconfident: return "relatively_overconfident";
    case QuadrantLabel::relatively_underconfident: return "relatively_underconfident";
  }
  return "unknown";
}

std::string_view name_of(PairCase c) {
  switch (c) {
    case PairCase::qual_same_conf_same: return "qual_same_conf_same";
    case PairCase::qual_same_conf_flips: return "qual_same_conf_flips";
    case PairCase::qual_flips_conf_flips: return "qual_flips_conf_flips";
    case PairCase::qual_flips_conf_same: return "qual_flips_conf_same";
  }
  return "unknown";
}

QuadrantLabel classify_quadrant(double dq, double dc_aligned) {
  if (dc_aligned > 0.0 && dq < 0.0) return QuadrantLabel::relatively_overconfident;
  if (dc_aligned < 0.0 && dq > 0.0) return QuadrantLabel::relatively_underconfident;
  return QuadrantLabel::concordant;
}

TransitionSet build_transitions(const ScoreTable& from, const ScoreTable& to, MetricId metric, QualityMetric quality) {
  const auto& spec = metric_spec(metric);
  auto pairing = pair_by_sample_id<ScoreRow>(from.rows(), to.rows());
  TransitionSet set;
  if (!from.rows().empty()) set.from = from.rows().front().checkpoint;
  if (!to.rows().empty()) set.to = to.rows().front().checkpoint;
  set.unmatched = pairing.only_in_from;
  set.unmatched.insert(set.unmatched.end(), pairing.only_in_to.begin(), pairing.only_in_to.end());
  for (const auto& [a, b] : pairing.pairs) {
    auto qa = from.quality(*a, quality);
    auto qb = to.quality(*b, quality);
    auto ca = from.metric(*a, metric);
    auto cb = to.metric(*b, metric);
    if (!qa || !qb || !ca || !cb) {
      ++set.missing_cells;
      continue;
    }
    set.samples.push_back({a->sample_id, *qa, *qb, align_orientation(spec, *ca), align_orientation(spec, *cb)});
  }
  return set;
}

std::array<double, 3> QuadrantSummary::proportions() const {
  const double n = static_cast<double>(total());
  return {concordant / n, overconfident / n, underconfident / n};
}

QuadrantSummary quadrant_proportions(std::span<const SampleTransition> samples) {
  if (samples.empty()) throw DegenerateInput("quadrant proportions: no eligible samples");
  QuadrantSummary s;
  for (const auto& t : samples) {
    const double dq = t.dq();
    const double dc = t.dc();
    if (dq == 0.0 || dc == 0.0) ++s.zero_delta;
    switch (classify_quadrant(dq, dc)) {
      case QuadrantLabel::concordant: ++s.concordant; break;
      case QuadrantLabel::relatively_overconfident: ++s.overconfident; break;
      case QuadrantLabel::relatively_underconfident: ++s.underconfident; break;
    }
  }
  return s;
}

ConfidenceIncreaseBreakdown confidence_increase_breakdown(std::span<const SampleTransition> samples) {
  ConfidenceIncreaseBreakdown b;
  for (const auto& t : samples) {
    if (t.dc() <= 0.0) {
      ++b.confidence_not_increased;
    } else if (t.dq() > 0.0) {
      ++b.increased_quality_improved;
    } else {
      ++b.increased_quality_not_improved;
      if (t.dq() == 0.0) ++b.increased_zero_quality_delta;
    }
  }
  return b;
}

namespace {

int sign(double x) { return (x > 0.0) - (x < 0.0); }

}  // namespace

std::optional<PairCase> classify_pair(const SampleTransition& a, const SampleTransition& b) {
  const int q_before = sign(b.quality_from - a.quality_from);
  const int c_before = sign(b.confidence_from - a.confidence_from);
  if (q_before == 0 || q_before != c_before) return std::nullopt;
  const bool q_kept = sign(b.quality_to - a.quality_to) == q_before;
  const bool c_kept = sign(b.confidence_to - a.confidence_to) == q_before;
  if (q_kept) return c_kept ? PairCase::qual_same_conf_same : PairCase::qual_same_conf_flips;
  return c_kept ? PairCase::qual_flips_conf_same : PairCase::qual_flips_conf_flips;
}

double case1_no_quality_change_fraction(std::span<const OrientedPair> case1_pairs) {
  if (case1_pairs.empty()) throw DegenerateInput("no Case-1 pairs");
  std::size_t drifted = 0;
  for (const auto& p : case1_pairs) {
    const bool worse_gained = p.worse.dc() > 0.0 && p.worse.dq() == 0.0;
    const bool better_lost = p.better.dc() < 0.0 && p.better.dq() == 0.0;
    if (worse_gained || better_lost) ++drifted;
  }
  return static_cast<double>(drifted) / static_cast<double>(case1_pairs.size());
}

std::array<double, 4> PairCaseSummary::proportions() const {
  const double n = static_cast<double>(classified_pairs);
  return {counts[0] / n, counts[1] / n, counts[2] / n, counts[3] / n};
}

PairCaseSummary pair_case_proportions(std::span<const SampleTransition> samples, std::optional<std::size_t> max_pairs,
                                      std::uint64_t rng_seed) {
  PairCaseSummary summary;
  summary.pair_cap = max_pairs;
  std::vector<OrientedPair> case1;

  auto classify = [&](std::size_t i, std::size_t j) {
    const auto& a = samples[i];
    const auto& b = samples[j];
    const auto label = classify_pair(a, b);
    ++summary.counts[static_cast<std::size_t>(*label)];
    ++summary.classified_pairs;
    if (a.quality_to == b.quality_to) ++summary.later_quality_ties;
    if (a.confidence_to == b.confidence_to) ++summary.later_confidence_ties;
    if (*label == PairCase::qual_same_conf_flips) {
      if (a.quality_from < b.quality_from) {
        case1.push_back({a, b});
      } else {
        case1.push_back({b, a});
      }
    }
  };

  const std::size_t n = samples.size();
  if (!max_pairs) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        if (classify_pair(samples[i], samples[j])) {
          ++summary.eligible_pairs;
          classify(i, j);
        }
      }
    }
  } else {
    const std::size_t cap = *max_pairs;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> reservoir;
    std::mt19937_64 rng(rng_seed);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        if (!classify_pair(samples[i], samples[j])) continue;
        ++summary.eligible_pairs;
        if (reservoir.size() < cap) {
          reservoir.emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));
        } else {
          const std::uint64_t slot = rng() % summary.eligible_pairs;
          if (slot < cap) reservoir[slot] = {static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j)};
        }
      }
    }
    summary.subsampled = summary.eligible_pairs > cap;
    for (const auto& [i, j] : reservoir) classify(i, j);
  }

  if (summary.eligible_pairs == 0) throw DegenerateInput("pair-case analysis: no eligible pairs");
  if (!case1.empty()) summary.case1_no_quality_change = case1_no_quality_change_fraction(case1);
  return summary;
}

double max_cosine_similarity(std::span<const double> embedding, const std::vector<std::vector<double>>& training) {
  if (training.empty()) throw Error("no training embeddings supplied");
  double best = -1.0;
  for (const auto& t : training) best = std::max(best, cosine_similarity(embedding, t));
  return best;
}

std::vector<std::vector<double>> load_training_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open training embeddings " + path.string());
  std::vector<std::vector<double>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      const auto& arr = j.is_object() ? j.at("embedding") : j;
      out.push_back(arr.get<std::vector<double>>());
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("bad training embedding: ") + e.what(), line_no);
    }
  }
  if (out.empty()) throw ValidationError("training embedding file is empty");
  return out;
}

std::size_t attach_train_similarity(std::span<GenerationRecord> records,
                                    const std::vector<std::vector<double>>& training) {
  std::size_t updated = 0;
  for (auto& r : records) {
    if (!r.embedding) continue;
    r.train_similarity = max_cosine_similarity(*r.embedding, training);
    ++updated;
  }
  return updated;
}

double similarity_confidence_correlation(const ScoreTable& checkpoint, MetricId metric) {
  const auto& spec = metric_spec(metric);
  std::vector<double> conf, sim;
  for (const auto& row : checkpoint.rows()) {
    auto c = checkpoint.metric(row, metric);
    if (!c || !row.train_similarity) continue;
    conf.push_back(align_orientation(spec, *c));
    sim.push_back(*row.train_similarity);
  }
  if (sim.size() < 3) throw MissingEvidence("similarity analysis: fewer than 3 rows carry train_similarity");
  return spearman_rho(conf, sim);
}

double max_adjacent_drop(std::span<const std::optional<double>> rhos) {
  double drop = 0.0;
  for (std::size_t i = 1; i < rhos.size(); ++i) {
    if (rhos[i - 1] && rhos[i]) drop = std::max(drop, *rhos[i - 1] - *rhos[i]);
  }
  return drop;
}

Trajectory epoch_trajectory(std::span<const ScoreTable> groups_by_epoch, MetricId metric, QualityMetric quality) {
  if (groups_by_epoch.size() < 2) throw Error("epoch trajectory needs at least 2 epochs");
  Trajectory trajectory;
  std::vector<std::optional<double>> rhos;
  std::optional<CheckpointKey> first;
  for (const auto& group : groups_by_epoch) {
    if (group.rows().empty()) throw Error("epoch trajectory: empty epoch group");
    const auto& key = group.rows().front().checkpoint;
    if (first && !same_run(*first, key)) throw Error("epoch trajectory: groups from different runs");
    if (first && key.epoch <= trajectory.epochs.back().epoch) throw Error("epoch trajectory: epochs not increasing");
    if (!first) first = key;
    EpochCorrelation ec;
    ec.epoch = key.epoch;
    try {
      ec.report = correlate_checkpoint(group, metric, quality);
      rhos.emplace_back(ec.report->rho);
    } catch (const Error& e) {
      ec.missing_reason = e.what();
      rhos.emplace_back(std::nullopt);
    }
    trajectory.epochs.push_back(std::move(ec));
  }
  trajectory.max_adjacent_drop = max_adjacent_drop(rhos);
  return trajectory;
}

DynamicsReport analyze_transition(const ScoreTable& from, const ScoreTable& to, MetricId metric, QualityMetric quality,
                                  const DynamicsOptions& options) {
  const auto transitions = build_transitions(from, to, metric, quality);
  DynamicsReport report;
  report.checkpoint_from = transitions.from;
  report.checkpoint_to = transitions.to;
  report.metric_name = std::string(name_of(metric));
  report.quality_name = std::string(name_of(quality));
  report.matched_samples = transitions.samples.size();
  report.quadrants = quadrant_proportions(transitions.samples);
  report.breakdown = confidence_increase_breakdown(transitions.samples);
  try {
    report.pair_cases = pair_case_proportions(transitions.samples, options.pair_cap, options.seed);
  } catch (const DegenerateInput&) {
    report.pair_cases.reset();
  }
  try {
    report.similarity_confidence_rho = similarity_confidence_correlation(to, metric);
  } catch (const Error&) {
    report.similarity_confidence_rho.reset();
  }
  return report;
}

}  // namespace confcorr
