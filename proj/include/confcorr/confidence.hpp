#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "confcorr/records.hpp"
#include "confcorr/textsim.hpp"

namespace confcorr {

enum class MetricId {
  avg_tok_prob,
  avg_tok_ent,
  do_ent,
  bs_imp_wt,
  bs_ratios,
  bs_sums,
  do_bleu_var,
  do_kl_div,
  do_meteor_var,
  cocoa_msp,
  cocoa_mte,
  cocoa_ppl,
};

enum class MetricFamily { probability, consistency, combined };

struct MetricSpec {
  MetricId id;
  std::string_view name;
  MetricFamily family;
  bool higher_is_confident;
};

std::span<const MetricSpec> all_metrics();
const MetricSpec& metric_spec(MetricId id);
std::optional<MetricId> parse_metric(std::string_view name);
std::string_view name_of(MetricId id);
std::string_view name_of(MetricFamily family);

/// Maps a raw metric value onto the "larger means more confident" axis.
inline double align_orientation(const MetricSpec& spec, double value) {
  return spec.higher_is_confident ? value : -value;
}

inline constexpr std::size_t kImportanceTopBeams = 10;

double avg_tok_prob(const SequenceEvidence& h);
double avg_tok_ent(const SequenceEvidence& h);
double do_ent(const DropoutSet& d);

struct BeamImportance {
  double value = 0.0;
  std::vector<double> weights;  // softmax of length-normalized log-probabilities
};

/// Importance-weighted beam score over the first `top` beams. Uncertainty-oriented.
BeamImportance beam_importance(const BeamSet& b, std::size_t top = kImportanceTopBeams);

/// Same as beam_importance, storing the weights into `b.importance_weights`.
double bs_imp_wt(BeamSet& b, std::size_t top = kImportanceTopBeams);

/// p(beam 1) / p(beam k).
double bs_ratios(const BeamSet& b, std::size_t k);

/// Sum of the top-k joint sequence probabilities.
double bs_sums(const BeamSet& b, std::size_t k);

double do_bleu_var(const DropoutSet& d);
double do_kl_div(const DropoutSet& d);
double do_meteor_var(const DropoutSet& d);

enum class CocoaBase { msp, mte, ppl };

struct CocoaOptions {
  /// Similarity between the hypothesis and each dropout sample.
  QualityMetric similarity = QualityMetric::chrf_plus;
};

/// Base uncertainty times mean dissimilarity to the dropout samples.
double cocoa(CocoaBase base, const GenerationRecord& r, const CocoaOptions& options = {});

struct ScoringConfig {
  std::vector<MetricId> metrics;         // empty: all twelve
  std::vector<QualityMetric> qualities;  // empty: chrf_plus, token_f1, exact_match
  /// k for bs_ratios / bs_sums; unset means every available beam.
  std::optional<std::size_t> k;
  std::size_t importance_top_beams = kImportanceTopBeams;
  CocoaOptions cocoa;
};

std::vector<MetricId> resolved_metrics(const ScoringConfig& config);
std::vector<QualityMetric> resolved_qualities(const ScoringConfig& config);

/// Computes one metric on one record. Throws MissingEvidence / Error when the
/// record cannot support the metric.
double compute_metric(MetricId id, const GenerationRecord& r, const ScoringConfig& config);

struct Diagnostic {
  std::string sample_id;
  CheckpointKey checkpoint;
  std::string column;
  std::string message;
};

struct ScoreRow {
  std::string sample_id;
  CheckpointKey checkpoint;
  std::vector<std::optional<double>> metrics;    // parallel to ScoreTable::metrics
  std::vector<std::optional<double>> qualities;  // parallel to ScoreTable::qualities
  std::optional<bool> correctness_label;
  std::optional<double> train_similarity;

  bool operator==(const ScoreRow&) const = default;
};

/// Per-record confidence and quality values. A cell is empty exactly when the
/// record lacked the evidence to compute it.
class ScoreTable {
 public:
  ScoreTable() = default;
  ScoreTable(std::vector<MetricId> metrics, std::vector<QualityMetric> qualities)
      : metrics_(std::move(metrics)), qualities_(std::move(qualities)) {}

  const std::vector<MetricId>& metrics() const noexcept { return metrics_; }
  const std::vector<QualityMetric>& qualities() const noexcept { return qualities_; }
  const std::vector<ScoreRow>& rows() const noexcept { return rows_; }
  std::vector<ScoreRow>& rows() noexcept { return rows_; }
  const std::vector<Diagnostic>& diagnostics() const noexcept { return diagnostics_; }
  std::vector<Diagnostic>& diagnostics() noexcept { return diagnostics_; }

  bool has_metric(MetricId id) const;
  bool has_quality(QualityMetric q) const;
  std::optional<double> metric(const ScoreRow& row, MetricId id) const;
  std::optional<double> quality(const ScoreRow& row, QualityMetric q) const;

  /// Distinct checkpoints in ascending key order.
  std::vector<CheckpointKey> checkpoints() const;
  /// A table with the same columns holding only rows of `key`.
  ScoreTable select(const CheckpointKey& key) const;

  bool operator==(const ScoreTable&) const = default;

 private:
  std::vector<MetricId> metrics_;
  std::vector<QualityMetric> qualities_;
  std::vector<ScoreRow> rows_;
  std::vector<Diagnostic> diagnostics_;
};

/// Scores one record. Metric failures become empty cells with a diagnostic.
ScoreRow score_all(const GenerationRecord& r, const ScoringConfig& config, std::vector<Diagnostic>* diagnostics = nullptr);

/// Scores every record; rows are ordered by (checkpoint, sample_id).
ScoreTable score_records(std::span<const GenerationRecord> records, const ScoringConfig& config);

}  // namespace confcorr
