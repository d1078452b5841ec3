#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "confcorr/confidence.hpp"
#include "confcorr/stats.hpp"

namespace confcorr {

enum class QuadrantLabel { concordant, relatively_overconfident, relatively_underconfident };

std::string_view name_of(QuadrantLabel label);

/// Over- iff confidence rose while quality fell, under- iff the reverse;
/// everything else, including any zero delta, is concordant.
QuadrantLabel classify_quadrant(double dq, double dc_aligned);

/// One sample's quality and orientation-aligned confidence at two checkpoints.
struct SampleTransition {
  std::string sample_id;
  double quality_from = 0.0;
  double quality_to = 0.0;
  double confidence_from = 0.0;
  double confidence_to = 0.0;

  double dq() const { return quality_to - quality_from; }
  double dc() const { return confidence_to - confidence_from; }
};

/// Matches the two checkpoint tables by sample_id and keeps samples whose
/// metric and quality cells are present at both checkpoints.
struct TransitionSet {
  CheckpointKey from;
  CheckpointKey to;
  std::vector<SampleTransition> samples;
  std::vector<std::string> unmatched;  // ids present on one side only
  std::size_t missing_cells = 0;       // matched samples dropped for empty cells
};

TransitionSet build_transitions(const ScoreTable& from, const ScoreTable& to, MetricId metric, QualityMetric quality);

struct QuadrantSummary {
  std::size_t concordant = 0;
  std::size_t overconfident = 0;
  std::size_t underconfident = 0;
  std::size_t zero_delta = 0;  // samples with dq == 0 or dc == 0 (all counted concordant)

  std::size_t total() const { return concordant + overconfident + underconfident; }
  /// {concordant, relatively overconfident, relatively underconfident}
  std::array<double, 3> proportions() const;
};

QuadrantSummary quadrant_proportions(std::span<const SampleTransition> samples);

/// Epoch-to-epoch breakdown: confidence did not increase / increased with quality
/// not improving / increased with quality improving. Tabulated twice, once
/// counting a zero quality delta as "not improved" and once as "improved".
struct ConfidenceIncreaseBreakdown {
  std::size_t confidence_not_increased = 0;
  std::size_t increased_quality_not_improved = 0;
  std::size_t increased_quality_improved = 0;
  std::size_t increased_zero_quality_delta = 0;

  std::size_t total() const {
    return confidence_not_increased + increased_quality_not_improved + increased_quality_improved;
  }
};

/// With zero quality deltas counted as not improved. Moving
/// `increased_zero_quality_delta` into the improved bucket gives the other convention.
ConfidenceIncreaseBreakdown confidence_increase_breakdown(std::span<const SampleTransition> samples);

enum class PairCase { qual_same_conf_same, qual_same_conf_flips, qual_flips_conf_flips, qual_flips_conf_same };

std::string_view name_of(PairCase c);

/// Label for a sample pair between two checkpoints, or nullopt when the pair was
/// not strictly relatively correlated at the earlier checkpoint. A tie at the
/// later checkpoint counts as a flip.
std::optional<PairCase> classify_pair(const SampleTransition& a, const SampleTransition& b);

/// A Case-1 pair oriented so that `worse` had the lower quality at the earlier checkpoint.
struct OrientedPair {
  SampleTransition worse;
  SampleTransition better;
};

/// Fraction of Case-1 pairs whose flip came from confidence drift on a sample
/// whose quality did not change.
double case1_no_quality_change_fraction(std::span<const OrientedPair> case1_pairs);

inline constexpr std::size_t kDefaultPairCap = 200'000;

struct PairCaseSummary {
  std::array<std::size_t, 4> counts{};  // indexed by PairCase
  std::size_t eligible_pairs = 0;
  std::size_t classified_pairs = 0;
  std::size_t later_quality_ties = 0;
  std::size_t later_confidence_ties = 0;
  bool subsampled = false;
  std::optional<std::size_t> pair_cap;
  std::optional<double> case1_no_quality_change;  // empty when there are no Case-1 pairs

  std::size_t count(PairCase c) const { return counts[static_cast<std::size_t>(c)]; }
  std::array<double, 4> proportions() const;
};

/// Enumerates eligible unordered pairs; above `max_pairs` a seeded uniform
/// reservoir sample of eligible pairs is classified instead.
PairCaseSummary pair_case_proportions(std::span<const SampleTransition> samples, std::optional<std::size_t> max_pairs,
                                      std::uint64_t rng_seed);

/// Max cosine similarity of `embedding` against every training embedding.
double max_cosine_similarity(std::span<const double> embedding, const std::vector<std::vector<double>>& training);

/// Reads training embeddings: JSONL where each line is an array of numbers or an
/// object with an "embedding" array.
std::vector<std::vector<double>> load_training_embeddings(const std::filesystem::path& path);

/// Fills train_similarity from embeddings for every record that has one.
/// Returns the number of records updated.
std::size_t attach_train_similarity(std::span<GenerationRecord> records,
                                    const std::vector<std::vector<double>>& training);

/// Spearman rho between aligned confidence and train_similarity over one checkpoint.
double similarity_confidence_correlation(const ScoreTable& checkpoint, MetricId metric);

struct EpochCorrelation {
  int epoch = 0;
  std::optional<CorrelationReport> report;
  std::string missing_reason;
};

struct Trajectory {
  std::vector<EpochCorrelation> epochs;
  double max_adjacent_drop = 0.0;
};

/// Largest decrease between consecutive present values; 0 when nothing decreases.
double max_adjacent_drop(std::span<const std::optional<double>> rhos);

/// Per-epoch correlation for groups of one run ordered by epoch.
Trajectory epoch_trajectory(std::span<const ScoreTable> groups_by_epoch, MetricId metric, QualityMetric quality);

struct DynamicsReport {
  CheckpointKey checkpoint_from;
  CheckpointKey checkpoint_to;
  std::string metric_name;
  std::string quality_name;
  QuadrantSummary quadrants;
  ConfidenceIncreaseBreakdown breakdown;
  std::optional<PairCaseSummary> pair_cases;  // empty when no pair is eligible
  std::size_t matched_samples = 0;
  std::optional<double> similarity_confidence_rho;  // at checkpoint_to
};

struct DynamicsOptions {
  std::optional<std::size_t> pair_cap = kDefaultPairCap;
  std::uint64_t seed = 0;
};

DynamicsReport analyze_transition(const ScoreTable& from, const ScoreTable& to, MetricId metric, QualityMetric quality,
                                  const DynamicsOptions& options = {});

}  // namespace confcorr
