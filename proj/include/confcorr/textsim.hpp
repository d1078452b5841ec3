#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace confcorr {

enum class QualityMetric { chrf_plus, token_f1, exact_match, bleu, meteor_lite };

std::string_view name_of(QualityMetric metric);
std::optional<QualityMetric> parse_quality_metric(std::string_view name);
std::span<const QualityMetric> all_quality_metrics();

struct QualityScore {
  QualityMetric metric;
  double value = 0.0;
};

/// Trims, collapses internal whitespace runs to one space and lowercases ASCII.
std::string normalize_answer(std::string_view text);

/// Whitespace tokenization.
std::vector<std::string> split_words(std::string_view text);

QualityScore exact_match(std::string_view hyp, std::span<const std::string> refs);

/// Bag-of-words F1 over casefolded whitespace tokens, best reference.
QualityScore token_f1(std::string_view hyp, std::span<const std::string> refs);

/// chrF+ : character 1..6-grams (whitespace removed) plus word unigrams with
/// leading/trailing punctuation split off, beta = 2, best reference.
QualityScore chrf_plus(std::string_view hyp, std::span<const std::string> refs);
QualityScore chrf_plus(std::string_view hyp, std::string_view ref);

/// Sentence BLEU over whitespace tokens: n = 1..4, uniform weights, brevity
/// penalty, add-one smoothing of n > 1 counts.
QualityScore sentence_bleu(std::string_view hyp, std::string_view ref);

/// Exact-match METEOR. Alignment maximizes matches, then minimizes chunks.
QualityScore meteor_lite(std::string_view hyp, std::string_view ref);

/// Alignment statistics behind meteor_lite.
struct MeteorAlignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;
  bool exhaustive = true;  // false when the search budget ran out
};
MeteorAlignment meteor_align(std::span<const std::string> hyp, std::span<const std::string> ref);

/// Quality of `hyp` against references; single-reference metrics take the max over references.
QualityScore quality(QualityMetric metric, std::string_view hyp, std::span<const std::string> refs);

double cosine_similarity(std::span<const double> u, std::span<const double> v);

}  // namespace confcorr
