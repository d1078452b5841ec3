#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "confcorr/confidence.hpp"
#include "confcorr/stats.hpp"
#include "confcorr/synth.hpp"
#include "oracle/oracles.hpp"

using namespace confcorr;

namespace {

SequenceEvidence seq(const std::string& text, std::vector<double> lps, std::optional<std::vector<double>> ent = {}) {
  SequenceEvidence s;
  s.text = text;
  s.tokens = split_words(text);
  s.tokens.resize(lps.size(), "x");
  s.token_logprobs = std::move(lps);
  s.token_entropies = std::move(ent);
  for (double x : s.token_logprobs) s.joint_logprob += x;
  return s;
}

BeamSet beams_with_joint(std::vector<double> joints) {
  BeamSet b;
  for (double j : joints) b.beams.push_back(seq("b", {j}));
  return b;
}

Distribution dist(std::vector<std::int64_t> ids, std::vector<double> p) { return {std::move(ids), std::move(p)}; }

double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace

TEST(AvgTokProb, Examples) {
  EXPECT_EQ(avg_tok_prob(seq("a", {0.0})), 0.0);
  EXPECT_EQ(avg_tok_prob(seq("a b", {-0.5, -1.5})), -1.0);
  EXPECT_EQ(avg_tok_prob(seq("a b c", {-1, -2, -3})), -2.0);
  EXPECT_THROW(avg_tok_prob(seq("", {})), Error);
}

TEST(AvgTokEnt, Examples) {
  EXPECT_NEAR(avg_tok_ent(seq("a b", {-1, -1}, std::vector<double>{std::log(4.0), std::log(4.0)})), 1.386294, 1e-6);
  EXPECT_EQ(avg_tok_ent(seq("a b", {0, 0}, std::vector<double>{0, 0})), 0.0);
  EXPECT_DOUBLE_EQ(avg_tok_ent(seq("a b", {-1, -1}, std::vector<double>{0.2, 0.4})), 0.3);
  EXPECT_THROW(avg_tok_ent(seq("a", {-1})), MissingEvidence);
}

TEST(DoEnt, Examples) {
  auto h = seq("a b", {-1, -1}, std::vector<double>{0.3, 0.7});
  DropoutSet one{{h}, {}};
  EXPECT_EQ(do_ent(one), avg_tok_ent(h));
  DropoutSet three{{seq("a", {-1}, std::vector<double>{0.1}), seq("a", {-1}, std::vector<double>{0.2}),
                    seq("a", {-1}, std::vector<double>{0.3})},
                   {}};
  EXPECT_NEAR(do_ent(three), 0.2, 1e-15);
  DropoutSet onehot{{seq("a", {0}, std::vector<double>{0}), seq("a", {0}, std::vector<double>{0})}, {}};
  EXPECT_EQ(do_ent(onehot), 0.0);
}

TEST(BsImpWt, Examples) {
  BeamSet one{{seq("a b", {-0.2, -0.6})}, {}};
  auto r = beam_importance(one);
  EXPECT_EQ(r.value, -avg_tok_prob(one.beams[0]));
  EXPECT_EQ(r.weights, std::vector<double>{1.0});

  BeamSet two{{seq("a", {-0.7}), seq("b c", {-0.5, -0.9})}, {}};
  r = beam_importance(two);
  EXPECT_DOUBLE_EQ(r.weights[0], 0.5);
  EXPECT_DOUBLE_EQ(r.value, 0.7);

  BeamSet three{{seq("a", {-1}), seq("b", {-2}), seq("c", {-3})}, {}};
  const double z = std::exp(-1.0) + std::exp(-2.0) + std::exp(-3.0);
  const double expected = (std::exp(-1.0) * 1 + std::exp(-2.0) * 2 + std::exp(-3.0) * 3) / z;
  EXPECT_NEAR(beam_importance(three).value, expected, 1e-15);

  bs_imp_wt(three);
  ASSERT_TRUE(three.importance_weights);
  EXPECT_EQ(three.importance_weights->size(), 3u);
}

TEST(BsImpWt, OnlyTopTenBeams) {
  BeamSet b;
  for (int i = 0; i < 12; ++i) b.beams.push_back(seq("a", {-1.0 - i}));
  EXPECT_EQ(beam_importance(b).weights.size(), 10u);
  BeamSet ten = b;
  ten.beams.resize(10);
  EXPECT_EQ(beam_importance(b).value, beam_importance(ten).value);
}

TEST(BsRatios, Examples) {
  EXPECT_EQ(bs_ratios(beams_with_joint({-1, -1}), 2), 1.0);
  EXPECT_NEAR(bs_ratios(beams_with_joint({-1, -3}), 2), 7.389056, 1e-6);
  EXPECT_DOUBLE_EQ(bs_ratios(beams_with_joint({-0.5, -0.9}), 2), std::exp(0.4));
  EXPECT_DOUBLE_EQ(bs_ratios(beams_with_joint({-0.5, -0.7, -0.9}), 2), std::exp(0.2));
  EXPECT_THROW(bs_ratios(beams_with_joint({-1, -2}), 3), MissingEvidence);
}

TEST(BsSums, Examples) {
  EXPECT_DOUBLE_EQ(bs_sums(beams_with_joint({std::log(0.5), std::log(0.25)}), 2), 0.75);
  EXPECT_DOUBLE_EQ(bs_sums(beams_with_joint({-0.3, -1.0}), 1), std::exp(-0.3));
  EXPECT_NEAR(bs_sums(beams_with_joint(std::vector<double>(10, std::log(0.01))), 10), 0.1, 1e-15);
}

TEST(DoBleuVar, Examples) {
  DropoutSet same{{seq("the cat sat", {-1, -1, -1}), seq("the cat sat", {-1, -1, -1}), seq("the cat sat", {-1, -1, -1})},
                  {}};
  EXPECT_EQ(do_bleu_var(same), 0.0);
  DropoutSet disjoint{{seq("a b", {-1, -1}), seq("c d", {-1, -1}), seq("e f", {-1, -1})}, {}};
  EXPECT_EQ(do_bleu_var(disjoint), 6.0);
  DropoutSet two{{seq("the cat sat", {-1, -1, -1}), seq("the cat sat down", {-1, -1, -1, -1})}, {}};
  const double b1 = sentence_bleu("the cat sat", "the cat sat down").value;
  const double b2 = sentence_bleu("the cat sat down", "the cat sat").value;
  EXPECT_DOUBLE_EQ(do_bleu_var(two), (1 - b1) * (1 - b1) + (1 - b2) * (1 - b2));
}

TEST(DoKlDiv, Examples) {
  DropoutSet same{{seq("a", {-1}), seq("a", {-1})},
                  std::vector<std::vector<Distribution>>{{dist({1, 2}, {0.3, 0.7})}, {dist({1, 2}, {0.3, 0.7})}}};
  EXPECT_EQ(do_kl_div(same), 0.0);
  DropoutSet opposite{{seq("a", {-1}), seq("a", {-1})},
                      std::vector<std::vector<Distribution>>{{dist({1, 2}, {1, 0})}, {dist({1, 2}, {0, 1})}}};
  EXPECT_NEAR(do_kl_div(opposite), 2 * std::log(2.0), 1e-15);
  DropoutSet no_aligned{{seq("a", {-1}), seq("a", {-1})}, {}};
  EXPECT_THROW(do_kl_div(no_aligned), MissingEvidence);
}

TEST(DoKlDiv, ThreeSamplesMatchDirectSum) {
  oracle::RecordGen gen(77);
  for (int i = 0; i < 20; ++i) {
    auto r = gen.record();
    EXPECT_LE(rel_err(do_kl_div(*r.dropout), oracle::do_kl_div(*r.dropout)), 1e-9);
    EXPECT_GE(do_kl_div(*r.dropout), 0.0);
  }
}

TEST(DoMeteorVar, Examples) {
  DropoutSet same{{seq("a b c", {-1, -1, -1}), seq("a b c", {-1, -1, -1})}, {}};
  EXPECT_DOUBLE_EQ(do_meteor_var(same), 1 - 0.5 * std::pow(3.0, -3));
  DropoutSet disjoint{{seq("a", {-1}), seq("b", {-1}), seq("c", {-1})}, {}};
  EXPECT_EQ(do_meteor_var(disjoint), 0.0);
  std::vector<std::string> t{"a b c d", "a c b d", "d c"};
  DropoutSet three{{seq(t[0], {-1}), seq(t[1], {-1}), seq(t[2], {-1})}, {}};
  double s = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (i != j) s += meteor_lite(t[i], t[j]).value;
  EXPECT_DOUBLE_EQ(do_meteor_var(three), s / 6);
}

TEST(Cocoa, Examples) {
  GenerationRecord r;
  r.hypothesis = seq("the cat", {-0.4, -0.6}, std::vector<double>{0.5, 0.9});
  r.dropout = DropoutSet{{r.hypothesis, r.hypothesis}, {}};
  for (auto base : {CocoaBase::msp, CocoaBase::mte, CocoaBase::ppl}) EXPECT_EQ(cocoa(base, r), 0.0);

  GenerationRecord certain;
  certain.hypothesis = seq("a b", {0, 0}, std::vector<double>{0, 0});
  certain.dropout = DropoutSet{{seq("c d", {-1, -1})}, {}};
  EXPECT_EQ(cocoa(CocoaBase::msp, certain), 0.0);

  r.dropout = DropoutSet{{seq("the dog", {-1, -1}), seq("a cat", {-1, -1})}, {}};
  const double delta = ((1 - chrf_plus("the cat", "the dog").value) + (1 - chrf_plus("the cat", "a cat").value)) / 2;
  EXPECT_DOUBLE_EQ(cocoa(CocoaBase::msp, r), (1 - std::exp(-0.5)) * delta);
  EXPECT_DOUBLE_EQ(cocoa(CocoaBase::mte, r), 0.7 * delta);
  EXPECT_DOUBLE_EQ(cocoa(CocoaBase::ppl, r), (std::exp(0.5) - 1) * delta);

  GenerationRecord none;
  none.hypothesis = r.hypothesis;
  EXPECT_THROW(cocoa(CocoaBase::msp, none), MissingEvidence);
}

TEST(Metrics, MatchIndependentOracles) {
  oracle::RecordGen gen(2024);
  ScoringConfig cfg;
  for (int i = 0; i < 25; ++i) {
    auto r = gen.record();
    const auto& b = *r.beams;
    const auto& d = *r.dropout;
    const std::size_t k = b.beams.size();
    const std::vector<std::pair<MetricId, double>> expected{
        {MetricId::avg_tok_prob, oracle::avg_tok_prob(r.hypothesis)},
        {MetricId::avg_tok_ent, oracle::avg_tok_ent(r.hypothesis)},
        {MetricId::do_ent, oracle::do_ent(d)},
        {MetricId::bs_imp_wt, oracle::bs_imp_wt(b)},
        {MetricId::bs_ratios, oracle::bs_ratios(b, k)},
        {MetricId::bs_sums, oracle::bs_sums(b, k)},
        {MetricId::do_bleu_var, oracle::do_bleu_var(d)},
        {MetricId::do_kl_div, oracle::do_kl_div(d)},
        {MetricId::do_meteor_var, oracle::do_meteor_var(d)},
        {MetricId::cocoa_msp, oracle::cocoa(0, r)},
        {MetricId::cocoa_mte, oracle::cocoa(1, r)},
        {MetricId::cocoa_ppl, oracle::cocoa(2, r)},
    };
    for (const auto& [id, want] : expected) {
      const double got = compute_metric(id, r, cfg);
      if (want == 0.0)
        EXPECT_EQ(got, 0.0) << name_of(id);
      else
        EXPECT_LE(rel_err(got, want), 1e-9) << name_of(id) << " got " << got << " want " << want;
    }
  }
}

TEST(Metrics, BsRatiosAtLeastOneAndNonNegativeVariances) {
  oracle::RecordGen gen(9);
  for (int i = 0; i < 50; ++i) {
    auto r = gen.record();
    for (std::size_t k = 2; k <= r.beams->beams.size(); ++k) EXPECT_GE(bs_ratios(*r.beams, k), 1.0);
    EXPECT_GE(do_bleu_var(*r.dropout), 0.0);
    EXPECT_GE(do_kl_div(*r.dropout), 0.0);
  }
}

TEST(Metrics, IdenticalDropoutEvidenceGivesZeroSpread) {
  oracle::RecordGen gen(10);
  auto r = gen.record();
  auto& d = *r.dropout;
  for (auto& s : d.samples) s = d.samples[0];
  for (auto& a : *d.aligned_distributions) a = (*d.aligned_distributions)[0];
  EXPECT_EQ(do_bleu_var(d), 0.0);
  EXPECT_EQ(do_kl_div(d), 0.0);
}

TEST(Metrics, InvariantToDropoutOrder) {
  oracle::RecordGen gen(12);
  std::mt19937_64 rng(1);
  ScoringConfig cfg;
  for (int i = 0; i < 20; ++i) {
    auto r = gen.record();
    auto shuffled = r;
    std::vector<std::size_t> order(r.dropout->samples.size());
    for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t j = 0; j < order.size(); ++j) {
      shuffled.dropout->samples[j] = r.dropout->samples[order[j]];
      (*shuffled.dropout->aligned_distributions)[j] = (*r.dropout->aligned_distributions)[order[j]];
    }
    for (const auto& spec : all_metrics()) {
      EXPECT_NEAR(compute_metric(spec.id, r, cfg), compute_metric(spec.id, shuffled, cfg),
                  1e-12 * (1 + std::abs(compute_metric(spec.id, r, cfg))))
          << spec.name;
    }
  }
}

TEST(Metrics, Orientation) {
  int confident = 0;
  for (const auto& m : all_metrics()) {
    EXPECT_EQ(parse_metric(m.name), m.id);
    confident += m.higher_is_confident;
  }
  EXPECT_EQ(all_metrics().size(), 12u);
  EXPECT_EQ(confident, 4);
  EXPECT_TRUE(metric_spec(MetricId::do_meteor_var).higher_is_confident);
  EXPECT_FALSE(metric_spec(MetricId::do_bleu_var).higher_is_confident);
  EXPECT_EQ(align_orientation(metric_spec(MetricId::avg_tok_ent), 2.0), -2.0);
}

TEST(ScoreAll, MissingEvidenceBecomesEmptyCells) {
  oracle::RecordGen gen(5);
  auto full = gen.record();
  ScoringConfig cfg;
  auto row = score_all(full, cfg);
  for (const auto& c : row.metrics) EXPECT_TRUE(c.has_value());
  EXPECT_EQ(row.metrics.size(), 12u);
  EXPECT_EQ(row.qualities.size(), 3u);

  auto no_beams = full;
  no_beams.beams.reset();
  std::vector<Diagnostic> diags;
  row = score_all(no_beams, cfg, &diags);
  const auto ids = resolved_metrics(cfg);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const bool beam = ids[i] == MetricId::bs_imp_wt || ids[i] == MetricId::bs_ratios || ids[i] == MetricId::bs_sums;
    EXPECT_EQ(row.metrics[i].has_value(), !beam) << name_of(ids[i]);
  }
  EXPECT_EQ(diags.size(), 3u);

  auto no_aligned = full;
  no_aligned.dropout->aligned_distributions.reset();
  row = score_all(no_aligned, cfg);
  for (std::size_t i = 0; i < ids.size(); ++i) EXPECT_EQ(row.metrics[i].has_value(), ids[i] != MetricId::do_kl_div);
}

TEST(ScoreRecords, OrderedAndSelectable) {
  oracle::RecordGen gen(6);
  std::vector<GenerationRecord> recs;
  for (int i = 0; i < 4; ++i) {
    auto r = gen.record();
    r.sample_id = "s" + std::to_string(3 - i);
    r.checkpoint.epoch = i % 2;
    recs.push_back(r);
  }
  ScoringConfig cfg;
  cfg.metrics = {MetricId::avg_tok_prob};
  auto t = score_records(recs, cfg);
  ASSERT_EQ(t.rows().size(), 4u);
  EXPECT_EQ(t.rows()[0].checkpoint.epoch, 0);
  EXPECT_EQ(t.rows()[0].sample_id, "s1");
  EXPECT_EQ(t.rows()[1].sample_id, "s3");
  EXPECT_EQ(t.checkpoints().size(), 2u);
  EXPECT_EQ(t.select(t.checkpoints()[1]).rows().size(), 2u);
  EXPECT_EQ(t.metrics().size(), 1u);
}

TEST(Metrics, AlignedMetricsTrackQualityOnCoupledCorpus) {
  SynthSpec spec;
  spec.n_samples = 150;
  spec.n_epochs = 1;
  spec.drift = DriftModel::quality_coupled;
  auto corpus = generate_synthetic(spec);
  ScoringConfig cfg;
  cfg.qualities = {QualityMetric::token_f1};
  auto table = score_records(corpus.records, cfg);
  for (const auto& m : all_metrics()) {
    auto rep = correlate_checkpoint(table, m.id, QualityMetric::token_f1);
    EXPECT_GT(rep.rho, 0.0) << m.name;
  }
}
