#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "confcorr/dynamics.hpp"

using namespace confcorr;

namespace {

SampleTransition st(const std::string& id, double q0, double q1, double c0, double c1) { return {id, q0, q1, c0, c1}; }

ScoreTable table(int epoch, const std::vector<double>& conf, const std::vector<double>& qual,
                 MetricId metric = MetricId::avg_tok_prob) {
  ScoreTable t({metric}, {QualityMetric::token_f1});
  for (std::size_t i = 0; i < conf.size(); ++i) {
    ScoreRow r;
    r.sample_id = "s" + std::to_string(i);
    r.checkpoint = {"m", "t", epoch, 0, std::nullopt};
    r.metrics = {conf[i]};
    r.qualities = {qual[i]};
    t.rows().push_back(r);
  }
  return t;
}

// quality 1..4 and confidence 1..4 at the start; B and C swap confidence, D drops to 2.5 in quality
std::vector<SampleTransition> four_samples() {
  return {st("A", 1, 1, 1, 1), st("B", 2, 2, 2, 3), st("C", 3, 3, 3, 2), st("D", 4, 2.5, 4, 4)};
}

}  // namespace

TEST(Quadrant, Examples) {
  EXPECT_EQ(classify_quadrant(0.2, 0.1), QuadrantLabel::concordant);
  EXPECT_EQ(classify_quadrant(-0.2, 0.1), QuadrantLabel::relatively_overconfident);
  EXPECT_EQ(classify_quadrant(0.2, -0.1), QuadrantLabel::relatively_underconfident);
  EXPECT_EQ(classify_quadrant(-0.2, -0.1), QuadrantLabel::concordant);
  EXPECT_EQ(classify_quadrant(0, 0.3), QuadrantLabel::concordant);
  EXPECT_EQ(classify_quadrant(0.3, 0), QuadrantLabel::concordant);
}

TEST(Quadrant, AllImproving) {
  std::vector<SampleTransition> s{st("a", 0, 1, 0, 1), st("b", 0.2, 0.5, -1, 0)};
  auto p = quadrant_proportions(s).proportions();
  EXPECT_EQ(p, (std::array<double, 3>{1, 0, 0}));
  EXPECT_THROW(quadrant_proportions({}), DegenerateInput);
}

TEST(Quadrant, TenSampleFixture) {
  std::vector<SampleTransition> s{
      st("c1", 0, 1, 0, 1),  st("c2", 1, 0, 1, 0),     st("c3", 0.5, 0.6, 0, 2), st("c4", 0.5, 0.5, 0, 1),
      st("c5", 0.1, 0.2, 1, 1), st("c6", 0.9, 0.1, 3, 2), st("o1", 1, 0, 0, 1),  st("o2", 0.6, 0.5, 0, 0.1),
      st("o3", 0.3, 0.2, -1, 0), st("u1", 0.2, 0.3, 1, 0),
  };
  auto q = quadrant_proportions(s);
  EXPECT_EQ(q.concordant, 6u);
  EXPECT_EQ(q.overconfident, 3u);
  EXPECT_EQ(q.underconfident, 1u);
  EXPECT_EQ(q.zero_delta, 2u);
  auto p = q.proportions();
  EXPECT_DOUBLE_EQ(p[0], 0.6);
  EXPECT_DOUBLE_EQ(p[1], 0.3);
  EXPECT_DOUBLE_EQ(p[2], 0.1);

  auto b = confidence_increase_breakdown(s);
  EXPECT_EQ(b.confidence_not_increased, 4u);
  EXPECT_EQ(b.increased_quality_not_improved, 4u);
  EXPECT_EQ(b.increased_quality_improved, 2u);
  EXPECT_EQ(b.increased_zero_quality_delta, 1u);
  EXPECT_EQ(b.total(), s.size());
}

TEST(Quadrant, UniformConfidenceIncreaseMakesEveryQualityDropOverconfident) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> d(-3, 3);
  std::vector<SampleTransition> s;
  std::size_t negative = 0;
  for (int i = 0; i < 500; ++i) {
    const double q0 = 0.5, q1 = 0.5 + 0.1 * d(rng);
    negative += q1 < q0;
    const double c0 = -std::uniform_real_distribution<double>(0, 3)(rng);
    s.push_back(st("s" + std::to_string(i), q0, q1, c0, c0 + 0.1));
  }
  auto q = quadrant_proportions(s);
  EXPECT_EQ(q.overconfident, negative);
  EXPECT_EQ(q.underconfident, 0u);
  auto p = q.proportions();
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-9);
}

TEST(Transitions, AlignsOrientationAndMatchesIds) {
  auto from = table(1, {0.5, 0.2, 0.9}, {0.1, 0.2, 0.3}, MetricId::avg_tok_ent);
  auto to = table(2, {0.4, 0.3}, {0.1, 0.2}, MetricId::avg_tok_ent);
  to.rows()[1].metrics[0].reset();
  auto t = build_transitions(from, to, MetricId::avg_tok_ent, QualityMetric::token_f1);
  ASSERT_EQ(t.samples.size(), 1u);
  EXPECT_EQ(t.samples[0].sample_id, "s0");
  EXPECT_DOUBLE_EQ(t.samples[0].confidence_from, -0.5);
  EXPECT_GT(t.samples[0].dc(), 0);
  EXPECT_EQ(t.unmatched, std::vector<std::string>{"s2"});
  EXPECT_EQ(t.missing_cells, 1u);
}

TEST(PairCase, Examples) {
  auto a = st("a", 0.1, 0.1, 1, 2), b = st("b", 0.5, 0.5, 2, 1);
  EXPECT_EQ(classify_pair(a, b), PairCase::qual_same_conf_flips);
  auto c = st("c", 0.1, 0.6, 1, 1), d = st("d", 0.5, 0.5, 2, 2);
  EXPECT_EQ(classify_pair(c, d), PairCase::qual_flips_conf_same);
  auto e = st("e", 0.1, 0.6, 1, 3), f = st("f", 0.5, 0.5, 2, 2);
  EXPECT_EQ(classify_pair(e, f), PairCase::qual_flips_conf_flips);
  auto g = st("g", 0.1, 0.2, 1, 1), h = st("h", 0.5, 0.6, 2, 3);
  EXPECT_EQ(classify_pair(g, h), PairCase::qual_same_conf_same);
  EXPECT_FALSE(classify_pair(st("x", 0.5, 0, 1, 0), st("y", 0.5, 1, 2, 1)));
  EXPECT_FALSE(classify_pair(st("x", 0.1, 0, 2, 0), st("y", 0.5, 1, 1, 1)));
  // a later tie counts as a flip
  EXPECT_EQ(classify_pair(st("x", 0.1, 0.1, 1, 2), st("y", 0.5, 0.5, 2, 2)), PairCase::qual_same_conf_flips);
}

TEST(PairCase, Symmetric) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> d(0, 3);
  for (int i = 0; i < 2000; ++i) {
    auto a = st("a", d(rng), d(rng), d(rng), d(rng));
    auto b = st("b", d(rng), d(rng), d(rng), d(rng));
    EXPECT_EQ(classify_pair(a, b), classify_pair(b, a));
  }
}

TEST(PairCase, FourSampleFixture) {
  auto s = four_samples();
  auto r = pair_case_proportions(s, std::nullopt, 0);
  EXPECT_EQ(r.eligible_pairs, 6u);
  EXPECT_EQ(r.count(PairCase::qual_same_conf_same), 4u);
  EXPECT_EQ(r.count(PairCase::qual_same_conf_flips), 1u);
  EXPECT_EQ(r.count(PairCase::qual_flips_conf_flips), 0u);
  EXPECT_EQ(r.count(PairCase::qual_flips_conf_same), 1u);
  auto p = r.proportions();
  EXPECT_EQ(p[0], 4.0 / 6.0);
  EXPECT_EQ(p[1], 1.0 / 6.0);
  EXPECT_EQ(p[3], 1.0 / 6.0);
  ASSERT_TRUE(r.case1_no_quality_change);
  EXPECT_EQ(*r.case1_no_quality_change, 1.0);
  EXPECT_FALSE(r.subsampled);
}

TEST(PairCase, MonotoneConfidenceKeepsEveryOrdering) {
  std::vector<SampleTransition> s;
  for (int i = 0; i < 10; ++i) s.push_back(st("s" + std::to_string(i), i, i * 0.5, std::exp(i), 2 * i));
  auto r = pair_case_proportions(s, std::nullopt, 0);
  EXPECT_EQ(r.proportions(), (std::array<double, 4>{1, 0, 0, 0}));
  EXPECT_FALSE(r.case1_no_quality_change);
}

TEST(PairCase, NoEligiblePairs) {
  std::vector<SampleTransition> s{st("a", 0.5, 0, 1, 0), st("b", 0.5, 1, 2, 1)};
  EXPECT_THROW(pair_case_proportions(s, std::nullopt, 0), DegenerateInput);
}

TEST(PairCase, CapAboveEligibleEqualsFullEnumeration) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  std::vector<SampleTransition> s;
  for (int i = 0; i < 60; ++i) s.push_back(st("s" + std::to_string(i), nd(rng), nd(rng), nd(rng), nd(rng)));
  auto full = pair_case_proportions(s, std::nullopt, 0);
  auto capped = pair_case_proportions(s, full.eligible_pairs, 99);
  EXPECT_EQ(full.counts, capped.counts);
  EXPECT_EQ(full.case1_no_quality_change, capped.case1_no_quality_change);
  EXPECT_FALSE(capped.subsampled);

  auto sub1 = pair_case_proportions(s, 100, 7);
  auto sub2 = pair_case_proportions(s, 100, 7);
  EXPECT_TRUE(sub1.subsampled);
  EXPECT_EQ(sub1.classified_pairs, 100u);
  EXPECT_EQ(sub1.eligible_pairs, full.eligible_pairs);
  EXPECT_EQ(sub1.counts, sub2.counts);
  auto p = sub1.proportions();
  EXPECT_NEAR(p[0] + p[1] + p[2] + p[3], 1.0, 1e-9);
}

TEST(DrillDown, Examples) {
  std::vector<OrientedPair> frozen{{st("w", 0.1, 0.1, 1, 3), st("b", 0.5, 0.5, 2, 2)},
                                   {st("w", 0.1, 0.2, 1, 1), st("b", 0.5, 0.5, 2, 0)}};
  EXPECT_EQ(case1_no_quality_change_fraction(frozen), 1.0);
  std::vector<OrientedPair> moving{{st("w", 0.1, 0.2, 1, 3), st("b", 0.5, 0.6, 2, 2)}};
  EXPECT_EQ(case1_no_quality_change_fraction(moving), 0.0);
  EXPECT_THROW(case1_no_quality_change_fraction({}), DegenerateInput);
}

TEST(DrillDown, EightPairFixture) {
  std::vector<OrientedPair> pairs{
      {st("w", 0.1, 0.1, 1, 3), st("b", 0.5, 0.5, 2, 2)},    // worse gained, frozen
      {st("w", 0.2, 0.2, 0, 5), st("b", 0.6, 0.7, 1, 4)},    // worse gained, frozen
      {st("w", 0.1, 0.3, 1, 3), st("b", 0.5, 0.5, 2, 0.5)},  // better lost, frozen
      {st("w", 0.1, 0.15, 1, 1), st("b", 0.5, 0.5, 2, 0)},   // better lost, frozen
      {st("w", 0.1, 0.1, 1, 3), st("b", 0.5, 0.5, 2, 1)},    // both
      {st("w", 0.1, 0.2, 1, 3), st("b", 0.5, 0.4, 2, 2)},    // qualities moved
      {st("w", 0.1, 0.1, 1, 0.5), st("b", 0.5, 0.4, 2, 0)},  // worse frozen but lost confidence
      {st("w", 0.1, 0.3, 1, 2), st("b", 0.5, 0.5, 2, 3)},    // better frozen but gained
  };
  EXPECT_DOUBLE_EQ(case1_no_quality_change_fraction(pairs), 5.0 / 8.0);
}

TEST(Similarity, Correlation) {
  auto t = table(1, {1, 2, 3}, {0, 0, 0});
  t.rows()[0].train_similarity = 0.5;
  t.rows()[1].train_similarity = 0.2;
  t.rows()[2].train_similarity = 0.5;
  EXPECT_NEAR(similarity_confidence_correlation(t, MetricId::avg_tok_prob), 0.0, 1e-15);
  t.rows()[1].train_similarity = 0.7;
  t.rows()[2].train_similarity = 0.9;
  EXPECT_DOUBLE_EQ(similarity_confidence_correlation(t, MetricId::avg_tok_prob), 1.0);
  t.rows()[2].train_similarity.reset();
  EXPECT_THROW(similarity_confidence_correlation(t, MetricId::avg_tok_prob), MissingEvidence);
}

TEST(Similarity, MaxCosine) {
  std::vector<std::vector<double>> train{{1, 0}, {1, 1}};
  std::vector<double> v{1, 2};
  EXPECT_DOUBLE_EQ(max_cosine_similarity(v, train), 3.0 / (std::sqrt(5.0) * std::sqrt(2.0)));
  std::vector<double> x{1, 0};
  EXPECT_DOUBLE_EQ(max_cosine_similarity(x, train), 1.0);
}

TEST(Similarity, EmbeddingsFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "confcorr_train_embeddings.jsonl";
  {
    std::ofstream out(path);
    out << "[1, 0]\n{\"embedding\": [0, 1]}\n";
  }
  auto train = load_training_embeddings(path);
  ASSERT_EQ(train.size(), 2u);
  GenerationRecord r;
  r.embedding = std::vector<double>{3, 1};
  GenerationRecord bare;
  std::vector<GenerationRecord> recs{r, bare};
  EXPECT_EQ(attach_train_similarity(recs, train), 1u);
  EXPECT_DOUBLE_EQ(*recs[0].train_similarity, 3.0 / std::sqrt(10.0));
  EXPECT_FALSE(recs[1].train_similarity);
  std::filesystem::remove(path);
  EXPECT_THROW(load_training_embeddings(path), IoError);
}

TEST(Trajectory, MaxAdjacentDrop) {
  std::vector<std::optional<double>> r{0.5, 0.1, 0.3};
  EXPECT_NEAR(max_adjacent_drop(r), 0.4, 1e-15);
  std::vector<std::optional<double>> rising{0.1, 0.2, 0.9};
  EXPECT_EQ(max_adjacent_drop(rising), 0.0);
  std::vector<std::optional<double>> gap{0.9, std::nullopt, 0.1};
  EXPECT_EQ(max_adjacent_drop(gap), 0.0);
}

TEST(Trajectory, ConstantTables) {
  std::vector<ScoreTable> g{table(1, {1, 2, 3, 4}, {0.1, 0.3, 0.2, 0.4}), table(2, {1, 2, 3, 4}, {0.1, 0.3, 0.2, 0.4})};
  auto t = epoch_trajectory(g, MetricId::avg_tok_prob, QualityMetric::token_f1);
  ASSERT_EQ(t.epochs.size(), 2u);
  EXPECT_EQ(t.epochs[0].report->rho, t.epochs[1].report->rho);
  EXPECT_EQ(t.max_adjacent_drop, 0.0);
  std::vector<ScoreTable> one{g[0]};
  EXPECT_THROW(epoch_trajectory(one, MetricId::avg_tok_prob, QualityMetric::token_f1), Error);
}

TEST(Trajectory, MissingEpochReported) {
  std::vector<ScoreTable> g{table(1, {1, 2, 3}, {0.1, 0.2, 0.3}), table(2, {1, 1, 1}, {0.1, 0.2, 0.3}),
                            table(3, {1, 2, 3}, {0.3, 0.2, 0.1})};
  auto t = epoch_trajectory(g, MetricId::avg_tok_prob, QualityMetric::token_f1);
  EXPECT_FALSE(t.epochs[1].report);
  EXPECT_FALSE(t.epochs[1].missing_reason.empty());
  EXPECT_EQ(t.max_adjacent_drop, 0.0);
}

TEST(Trajectory, TenEpochDecay) {
  // epoch e reverses the confidence order of the first 2e samples
  const int n = 20;
  std::vector<double> q(n);
  std::iota(q.begin(), q.end(), 0.0);
  std::vector<ScoreTable> g;
  for (int e = 0; e < 10; ++e) {
    std::vector<double> c(q);
    std::reverse(c.begin(), c.begin() + 2 * e);
    g.push_back(table(e + 1, c, q));
  }
  auto t = epoch_trajectory(g, MetricId::avg_tok_prob, QualityMetric::token_f1);
  for (std::size_t e = 1; e < t.epochs.size(); ++e) EXPECT_LT(t.epochs[e].report->rho, t.epochs[e - 1].report->rho);
  EXPECT_DOUBLE_EQ(t.epochs[0].report->rho, 1.0);
  EXPECT_GT(t.max_adjacent_drop, 0.0);
}

TEST(Analyze, Transition) {
  auto from = table(1, {1, 2, 3, 4}, {1, 2, 3, 4});
  auto to = table(2, {1, 3, 2, 4}, {1, 2, 3, 2.5});
  auto r = analyze_transition(from, to, MetricId::avg_tok_prob, QualityMetric::token_f1);
  EXPECT_EQ(r.matched_samples, 4u);
  ASSERT_TRUE(r.pair_cases);
  EXPECT_EQ(r.pair_cases->count(PairCase::qual_same_conf_flips), 1u);
  EXPECT_EQ(r.quadrants.overconfident, 0u);
  EXPECT_FALSE(r.similarity_confidence_rho);

  auto flat = table(2, {1, 2, 3, 4}, {1, 1, 1, 1});
  auto none = analyze_transition(table(1, {1, 2, 3, 4}, {1, 1, 1, 1}), flat, MetricId::avg_tok_prob,
                                 QualityMetric::token_f1);
  EXPECT_FALSE(none.pair_cases);
}
