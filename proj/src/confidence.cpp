#include "confcorr/confidence.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <thread>

namespace confcorr {

namespace {

constexpr std::array<MetricSpec, 12> kMetrics = {{
    {MetricId::avg_tok_prob, "avg_tok_prob", MetricFamily::probability, true},
    {MetricId::avg_tok_ent, "avg_tok_ent", MetricFamily::probability, false},
    {MetricId::do_ent, "do_ent", MetricFamily::probability, false},
    {MetricId::bs_imp_wt, "bs_imp_wt", MetricFamily::probability, false},
    {MetricId::bs_ratios, "bs_ratios", MetricFamily::probability, true},
    {MetricId::bs_sums, "bs_sums", MetricFamily::probability, true},
    {MetricId::do_bleu_var, "do_bleu_var", MetricFamily::consistency, false},
    {MetricId::do_kl_div, "do_kl_div", MetricFamily::consistency, false},
    {MetricId::do_meteor_var, "do_meteor_var", MetricFamily::consistency, true},
    {MetricId::cocoa_msp, "cocoa_msp", MetricFamily::combined, false},
    {MetricId::cocoa_mte, "cocoa_mte", MetricFamily::combined, false},
    {MetricId::cocoa_ppl, "cocoa_ppl", MetricFamily::combined, false},
}};

double mean(std::span<const double> xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

const std::vector<double>& entropies_of(const SequenceEvidence& h, const char* what) {
  if (!h.token_entropies) throw MissingEvidence(std::string(what) + " carries no token entropies");
  return *h.token_entropies;
}

double length_normalized_logprob(const SequenceEvidence& s) {
  if (s.token_logprobs.empty()) throw Error("beam with no tokens cannot be length-normalized");
  return avg_tok_prob(s);
}

void require_beams(const BeamSet& b, std::size_t k) {
  if (b.beams.size() < k) {
    throw MissingEvidence("requested k=" + std::to_string(k) + " beams but only " + std::to_string(b.beams.size()) +
                          " are available");
  }
}

void require_pairs(const DropoutSet& d) {
  if (d.samples.size() < 2) throw MissingEvidence("pairwise dropout metrics need at least 2 dropout samples");
}

template <typename Similarity>
double ordered_pair_sum(const DropoutSet& d, Similarity&& sim) {
  double total = 0.0;
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    for (std::size_t j = 0; j < d.samples.size(); ++j) {
      if (i != j) total += sim(d.samples[i].text, d.samples[j].text);
    }
  }
  return total;
}

}  // namespace

std::span<const MetricSpec> all_metrics() { return kMetrics; }

const MetricSpec& metric_spec(MetricId id) {
  for (const auto& spec : kMetrics) {
    if (spec.id == id) return spec;
  }
  throw Error("unknown metric id");
}

std::optional<MetricId> parse_metric(std::string_view name) {
  for (const auto& spec : kMetrics) {
    if (spec.name == name) return spec.id;
  }
  return std::nullopt;
}

std::string_view name_of(MetricId id) { return metric_spec(id).name; }

std::string_view name_of(MetricFamily family) {
  switch (family) {
    case MetricFamily::probability: return "probability";
    case MetricFamily::consistency: return "consistency";
    case MetricFamily::combined: return "combined";
  }
  return "unknown";
}

double avg_tok_prob(const SequenceEvidence& h) {
  if (h.token_logprobs.empty()) throw Error("average token log-probability of an empty sequence");
  return mean(h.token_logprobs);
}

double avg_tok_ent(const SequenceEvidence& h) {
  const auto& ent = entropies_of(h, "hypothesis");
  if (ent.empty()) throw Error("average token entropy of an empty sequence");
  return mean(ent);
}

double do_ent(const DropoutSet& d) {
  if (d.samples.empty()) throw MissingEvidence("empty dropout set");
  double total = 0.0;
  for (const auto& s : d.samples) {
    const auto& ent = entropies_of(s, "dropout sample");
    if (ent.empty()) throw Error("dropout sample with no tokens");
    total += mean(ent);
  }
  return total / static_cast<double>(d.samples.size());
}

BeamImportance beam_importance(const BeamSet& b, std::size_t top) {
  if (b.beams.empty()) throw MissingEvidence("empty beam set");
  const std::size_t k = std::min(top, b.beams.size());
  std::vector<double> normalized(k);
  for (std::size_t i = 0; i < k; ++i) normalized[i] = length_normalized_logprob(b.beams[i]);

  const double shift = *std::max_element(normalized.begin(), normalized.end());
  BeamImportance out;
  out.weights.resize(k);
  double z = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    out.weights[i] = std::exp(normalized[i] - shift);
    z += out.weights[i];
  }
  double weighted = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    out.weights[i] /= z;
    weighted += out.weights[i] * normalized[i];
  }
  out.value = -weighted;
  return out;
}

double bs_imp_wt(BeamSet& b, std::size_t top) {
  auto result = beam_importance(b, top);
  b.importance_weights = std::move(result.weights);
  return result.value;
}

double bs_ratios(const BeamSet& b, std::size_t k) {
  if (k < 2) throw Error("bs_ratios needs k >= 2");
  require_beams(b, k);
  return std::exp(b.beams.front().joint_logprob - b.beams[k - 1].joint_logprob);
}

double bs_sums(const BeamSet& b, std::size_t k) {
  if (k < 1) throw Error("bs_sums needs k >= 1");
  require_beams(b, k);
  double top = b.beams.front().joint_logprob;
  for (std::size_t i = 1; i < k; ++i) top = std::max(top, b.beams[i].joint_logprob);
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) acc += std::exp(b.beams[i].joint_logprob - top);
  return std::exp(top + std::log(acc));
}

double do_bleu_var(const DropoutSet& d) {
  require_pairs(d);
  return ordered_pair_sum(d, [](const std::string& a, const std::string& b) {
    const double gap = 1.0 - sentence_bleu(a, b).value;
    return gap * gap;
  });
}

double do_meteor_var(const DropoutSet& d) {
  require_pairs(d);
  const double n = static_cast<double>(d.samples.size());
  return ordered_pair_sum(d, [](const std::string& a, const std::string& b) { return meteor_lite(a, b).value; }) /
         (n * (n - 1.0));
}

double do_kl_div(const DropoutSet& d) {
  if (!d.aligned_distributions) throw MissingEvidence("dropout set carries no aligned distributions");
  const auto& aligned = *d.aligned_distributions;
  if (aligned.empty()) throw MissingEvidence("no aligned distributions");
  const std::size_t positions = aligned.front().size();
  for (const auto& per : aligned) {
    if (per.size() != positions) throw Error("aligned distributions disagree in position count");
  }
  if (positions == 0) throw Error("aligned distributions cover no positions");

  const double n = static_cast<double>(aligned.size());
  std::vector<double> per_instance(aligned.size(), 0.0);
  std::map<std::int64_t, double> mixture;
  for (std::size_t t = 0; t < positions; ++t) {
    // identical distributions are their own mixture
    const bool uniform = std::all_of(aligned.begin(), aligned.end(),
                                     [&](const auto& per) { return per[t] == aligned.front()[t]; });
    if (uniform) continue;
    mixture.clear();
    for (const auto& per : aligned) {
      const auto& dist = per[t];
      for (std::size_t v = 0; v < dist.token_ids.size(); ++v) mixture[dist.token_ids[v]] += dist.probs[v] / n;
    }
    for (std::size_t i = 0; i < aligned.size(); ++i) {
      const auto& dist = aligned[i][t];
      double kl = 0.0;
      for (std::size_t v = 0; v < dist.token_ids.size(); ++v) {
        const double p = dist.probs[v];
        if (p > 0.0) kl += p * std::log(p / mixture[dist.token_ids[v]]);
      }
      per_instance[i] += std::max(kl, 0.0);
    }
  }
  double total = 0.0;
  for (double kl : per_instance) total += kl / static_cast<double>(positions);
  return total;
}

double cocoa(CocoaBase base, const GenerationRecord& r, const CocoaOptions& options) {
  if (!r.dropout || r.dropout->samples.empty()) throw MissingEvidence("CoCoA needs at least one dropout sample");
  double u_base = 0.0;
  switch (base) {
    case CocoaBase::msp: u_base = 1.0 - std::exp(avg_tok_prob(r.hypothesis)); break;
    case CocoaBase::mte: u_base = avg_tok_ent(r.hypothesis); break;
    case CocoaBase::ppl: u_base = std::exp(-avg_tok_prob(r.hypothesis)) - 1.0; break;
  }
  double dissimilarity = 0.0;
  for (const auto& s : r.dropout->samples) {
    const std::string ref[] = {s.text};
    dissimilarity += 1.0 - quality(options.similarity, r.hypothesis.text, ref).value;
  }
  dissimilarity /= static_cast<double>(r.dropout->samples.size());
  return u_base * dissimilarity;
}

std::vector<MetricId> resolved_metrics(const ScoringConfig& config) {
  if (!config.metrics.empty()) return config.metrics;
  std::vector<MetricId> ids;
  for (const auto& spec : kMetrics) ids.push_back(spec.id);
  return ids;
}

std::vector<QualityMetric> resolved_qualities(const ScoringConfig& config) {
  if (!config.qualities.empty()) return config.qualities;
  return {QualityMetric::chrf_plus, QualityMetric::token_f1, QualityMetric::exact_match};
}

double compute_metric(MetricId id, const GenerationRecord& r, const ScoringConfig& config) {
  auto need_beams = [&]() -> const BeamSet& {
    if (!r.beams || r.beams->beams.empty()) throw MissingEvidence("record has no beams");
    return *r.beams;
  };
  auto need_dropout = [&]() -> const DropoutSet& {
    if (!r.dropout || r.dropout->samples.empty()) throw MissingEvidence("record has no dropout samples");
    return *r.dropout;
  };
  switch (id) {
    case MetricId::avg_tok_prob: return avg_tok_prob(r.hypothesis);
    case MetricId::avg_tok_ent: return avg_tok_ent(r.hypothesis);
    case MetricId::do_ent: return do_ent(need_dropout());
    case MetricId::bs_imp_wt: return beam_importance(need_beams(), config.importance_top_beams).value;
    case MetricId::bs_ratios: {
      const auto& b = need_beams();
      return bs_ratios(b, config.k.value_or(b.beams.size()));
    }
    case MetricId::bs_sums: {
      const auto& b = need_beams();
      return bs_sums(b, config.k.value_or(b.beams.size()));
    }
    case MetricId::do_bleu_var: return do_bleu_var(need_dropout());
    case MetricId::do_kl_div: return do_kl_div(need_dropout());
    case MetricId::do_meteor_var: return do_meteor_var(need_dropout());
    case MetricId::cocoa_msp: return cocoa(CocoaBase::msp, r, config.cocoa);
    case MetricId::cocoa_mte: return cocoa(CocoaBase::mte, r, config.cocoa);
    case MetricId::cocoa_ppl: return cocoa(CocoaBase::ppl, r, config.cocoa);
  }
  throw Error("unknown metric id");
}

bool ScoreTable::has_metric(MetricId id) const {
  return std::find(metrics_.begin(), metrics_.end(), id) != metrics_.end();
}

bool ScoreTable::has_quality(QualityMetric q) const {
  return std::find(qualities_.begin(), qualities_.end(), q) != qualities_.end();
}

std::optional<double> ScoreTable::metric(const ScoreRow& row, MetricId id) const {
  auto it = std::find(metrics_.begin(), metrics_.end(), id);
  if (it == metrics_.end()) throw Error("score table has no column " + std::string(name_of(id)));
  return row.metrics[static_cast<std::size_t>(it - metrics_.begin())];
}

std::optional<double> ScoreTable::quality(const ScoreRow& row, QualityMetric q) const {
  auto it = std::find(qualities_.begin(), qualities_.end(), q);
  if (it == qualities_.end()) throw Error("score table has no column " + std::string(name_of(q)));
  return row.qualities[static_cast<std::size_t>(it - qualities_.begin())];
}

std::vector<CheckpointKey> ScoreTable::checkpoints() const {
  std::vector<CheckpointKey> keys;
  for (const auto& row : rows_) keys.push_back(row.checkpoint);
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  return keys;
}

ScoreTable ScoreTable::select(const CheckpointKey& key) const {
  ScoreTable out(metrics_, qualities_);
  for (const auto& row : rows_) {
    if (row.checkpoint == key) out.rows_.push_back(row);
  }
  return out;
}

ScoreRow score_all(const GenerationRecord& r, const ScoringConfig& config, std::vector<Diagnostic>* diagnostics) {
  ScoreRow row;
  row.sample_id = r.sample_id;
  row.checkpoint = r.checkpoint;
  row.correctness_label = r.correctness_label;
  row.train_similarity = r.train_similarity;
  for (MetricId id : resolved_metrics(config)) {
    try {
      row.metrics.emplace_back(compute_metric(id, r, config));
    } catch (const Error& e) {
      row.metrics.emplace_back(std::nullopt);
      if (diagnostics) diagnostics->push_back({r.sample_id, r.checkpoint, std::string(name_of(id)), e.what()});
    }
  }
  for (QualityMetric q : resolved_qualities(config)) {
    row.qualities.emplace_back(quality(q, r.hypothesis.text, r.references).value);
  }
  return row;
}

ScoreTable score_records(std::span<const GenerationRecord> records, const ScoringConfig& config) {
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ra = records[a];
    const auto& rb = records[b];
    if (ra.checkpoint != rb.checkpoint) return ra.checkpoint < rb.checkpoint;
    return ra.sample_id < rb.sample_id;
  });

  // Rows are independent; workers fill disjoint slots and diagnostics are merged in row order.
  std::vector<ScoreRow> rows(records.size());
  std::vector<std::vector<Diagnostic>> diags(records.size());
  const std::size_t workers =
      std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, std::max<std::size_t>(1, records.size() / 64));
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < order.size(); i += step) rows[i] = score_all(records[order[i]], config, &diags[i]);
  };
  if (workers <= 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
  }

  ScoreTable table(resolved_metrics(config), resolved_qualities(config));
  table.rows() = std::move(rows);
  for (auto& d : diags) {
    for (auto& item : d) table.diagnostics().push_back(std::move(item));
  }
  return table;
}

}  // namespace confcorr
