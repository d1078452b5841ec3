#include "confcorr/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "confcorr/dynamics.hpp"
#include "confcorr/report.hpp"
#include "confcorr/score_table_io.hpp"
#include "confcorr/stats.hpp"
#include "confcorr/synth.hpp"

namespace confcorr {

namespace {

using nlohmann::json;

struct CommonOptions {
  std::vector<std::string> inputs;
  std::string out = "out";
  std::vector<std::string> formats;
  bool strict = false;
  bool lenient = false;
  int n_dropout = 0;
  double logprob_tol = 1e-6;
  std::vector<std::string> metrics;
  std::vector<std::string> qualities;
  std::size_t k = 0;
  std::string cocoa_similarity = "chrf_plus";
  std::string train_embeddings;
};

struct CorrelateOptions {
  std::string anova;
  double alpha = 0.05;
};

struct DynamicsCliOptions {
  int from_epoch = -1;
  int to_epoch = -1;
  std::size_t pair_cap = kDefaultPairCap;
  std::uint64_t seed = 0;
  bool per_sample_dump = false;
};

struct ValidateOptions {
  std::vector<std::string> inputs;
  std::size_t max_violations = 20;
  int n_dropout = 0;
  double logprob_tol = 1e-6;
};

struct SynthCliOptions {
  SynthSpec spec;
  std::string drift = "quality_coupled";
  std::string out = "synth";
};

LoadOptions load_options(const CommonOptions& o) {
  LoadOptions lo;
  lo.strictness = o.lenient ? Strictness::lenient : Strictness::strict;
  if (o.n_dropout > 0) lo.n_dropout = o.n_dropout;
  lo.logprob_tolerance = o.logprob_tol;
  return lo;
}

ScoringConfig scoring_config(const CommonOptions& o) {
  ScoringConfig config;
  for (const auto& name : o.metrics) {
    auto id = parse_metric(name);
    if (!id) throw CLI::ValidationError("--metrics", "unknown metric " + name);
    config.metrics.push_back(*id);
  }
  for (const auto& name : o.qualities) {
    auto q = parse_quality_metric(name);
    if (!q) throw CLI::ValidationError("--quality", "unknown quality metric " + name);
    config.qualities.push_back(*q);
  }
  if (o.k > 0) config.k = o.k;
  auto sim = parse_quality_metric(o.cocoa_similarity);
  if (!sim) throw CLI::ValidationError("--cocoa-similarity", "unknown similarity " + o.cocoa_similarity);
  config.cocoa.similarity = *sim;
  return config;
}

std::vector<OutputFormat> output_formats(const CommonOptions& o) {
  std::vector<OutputFormat> formats;
  for (const auto& f : o.formats) {
    const auto format = f == "json" ? OutputFormat::json : OutputFormat::csv;
    if (std::find(formats.begin(), formats.end(), format) == formats.end()) formats.push_back(format);
  }
  if (formats.empty()) formats.push_back(OutputFormat::csv);
  return formats;
}

json metric_variants(const ScoringConfig& config) {
  return {
      {"log_base", "e"},
      {"bs_k", config.k ? json(*config.k) : json("all beams")},
      {"bs_imp_wt_top_beams", config.importance_top_beams},
      {"cocoa_similarity", name_of(config.cocoa.similarity)},
      {"chrf_plus", "char_order=6 word_order=1 beta=2 whitespace removed"},
      {"bleu", "sentence BLEU, whitespace tokens, add-one smoothing for n>1"},
      {"meteor_lite", "exact matches, casefolded, alpha=0.9 beta=3 gamma=0.5"},
  };
}

json base_config(const std::string& command, const CommonOptions& o) {
  json formats = json::array();
  for (auto f : output_formats(o)) formats.push_back(f == OutputFormat::json ? "json" : "csv");
  const auto config = scoring_config(o);
  json metrics = json::array();
  for (auto id : resolved_metrics(config)) metrics.push_back(name_of(id));
  json qualities = json::array();
  for (auto q : resolved_qualities(config)) qualities.push_back(name_of(q));
  return {
      {"command", command},
      {"inputs", o.inputs},
      {"out", o.out},
      {"formats", formats},
      {"strictness", o.lenient ? "lenient" : "strict"},
      {"n_dropout", o.n_dropout > 0 ? json(o.n_dropout) : json(nullptr)},
      {"logprob_tolerance", o.logprob_tol},
      {"metrics", metrics},
      {"qualities", qualities},
      {"train_embeddings", o.train_embeddings.empty() ? json(nullptr) : json(o.train_embeddings)},
      {"metric_variants", metric_variants(config)},
  };
}

json metadata_block(json config) { return {{"tool", "confcorr"}, {"schema_version", kSchemaVersion}, {"config", std::move(config)}}; }

enum class InputKind { records, score_table };

InputKind detect_kind(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = json::parse(line);
      if (j.is_object() && j.contains("schema_version")) return InputKind::records;
    } catch (const json::exception&) {
    }
    return InputKind::score_table;
  }
  throw ValidationError("empty input file " + path.string());
}

struct LoadedInputs {
  ScoreTable table;
  std::size_t n_records = 0;
  std::size_t n_skipped = 0;
};

void append(ScoreTable& into, const ScoreTable& from) {
  if (into.metrics() != from.metrics() || into.qualities() != from.qualities()) {
    throw ValidationError("input score tables have different columns");
  }
  into.rows().insert(into.rows().end(), from.rows().begin(), from.rows().end());
  into.diagnostics().insert(into.diagnostics().end(), from.diagnostics().begin(), from.diagnostics().end());
}

LoadedInputs load_inputs(const CommonOptions& o, std::ostream& err) {
  if (o.inputs.empty()) throw CLI::ValidationError("--input", "at least one input is required");
  const auto config = scoring_config(o);
  const auto lo = load_options(o);
  LoadedInputs loaded;
  std::vector<GenerationRecord> records;
  std::optional<ScoreTable> tables;
  for (const auto& input : o.inputs) {
    if (detect_kind(input) == InputKind::records) {
      auto result = load_records(input, lo);
      for (const auto& v : result.violations) err << input << ": skipped line " << v.line << ": " << v.message << '\n';
      loaded.n_skipped += result.skipped;
      std::move(result.records.begin(), result.records.end(), std::back_inserter(records));
    } else {
      std::ifstream in(input);
      if (!in) throw IoError("cannot open " + input);
      json doc;
      try {
        doc = json::parse(in);
      } catch (const json::exception& e) {
        throw ValidationError(input + ": neither a record file nor a score table: " + e.what());
      }
      auto table = score_table_from_json(doc);
      if (!tables) {
        tables = std::move(table);
      } else {
        append(*tables, table);
      }
    }
  }
  loaded.n_records = records.size();
  if (!o.train_embeddings.empty()) {
    const auto training = load_training_embeddings(o.train_embeddings);
    attach_train_similarity(records, training);
  }
  if (!records.empty()) {
    auto scored = score_records(records, config);
    if (!tables) {
      tables = std::move(scored);
    } else {
      append(*tables, scored);
    }
  }
  if (!tables) throw ValidationError("no rows loaded");
  loaded.table = std::move(*tables);

  auto& rows = loaded.table.rows();
  std::stable_sort(rows.begin(), rows.end(), [](const ScoreRow& a, const ScoreRow& b) {
    return std::tie(a.checkpoint, a.sample_id) < std::tie(b.checkpoint, b.sample_id);
  });
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].checkpoint == rows[i - 1].checkpoint && rows[i].sample_id == rows[i - 1].sample_id) {
      throw ValidationError("duplicate sample_id " + rows[i].sample_id + " at " + describe(rows[i].checkpoint));
    }
  }
  for (auto id : config.metrics) {
    if (!loaded.table.has_metric(id)) throw ValidationError("input has no column " + std::string(name_of(id)));
  }
  for (auto q : config.qualities) {
    if (!loaded.table.has_quality(q)) throw ValidationError("input has no column " + std::string(name_of(q)));
  }
  return loaded;
}

std::vector<MetricId> analysis_metrics(const CommonOptions& o, const ScoreTable& table) {
  auto config = scoring_config(o);
  return config.metrics.empty() ? table.metrics() : config.metrics;
}

std::vector<QualityMetric> analysis_qualities(const CommonOptions& o, const ScoreTable& table) {
  auto config = scoring_config(o);
  return config.qualities.empty() ? table.qualities() : config.qualities;
}

std::vector<std::string> checkpoint_columns() { return {"model", "task", "epoch", "seed", "n_train_samples"}; }

std::vector<Cell> checkpoint_cells(const CheckpointKey& k) {
  return {k.model_name, k.task_name, Cell(static_cast<std::int64_t>(k.epoch)), Cell(k.seed),
          k.n_train_samples ? Cell(*k.n_train_samples) : Cell()};
}

std::vector<std::string> run_columns() { return {"model", "task", "seed", "n_train_samples"}; }

std::vector<Cell> run_cells(const CheckpointKey& k) {
  return {k.model_name, k.task_name, Cell(k.seed), k.n_train_samples ? Cell(*k.n_train_samples) : Cell()};
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::vector<Cell> concat(std::vector<Cell> a, const std::vector<Cell>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

/// Checkpoints grouped by run, epochs ascending.
std::map<CheckpointKey, std::vector<CheckpointKey>> runs_of(const ScoreTable& table) {
  std::map<CheckpointKey, std::vector<CheckpointKey>> runs;
  for (const auto& key : table.checkpoints()) runs[run_of(key)].push_back(key);
  return runs;
}

// ---------------------------------------------------------------- validate

int cmd_validate(const ValidateOptions& o, std::ostream& out) {
  LoadOptions lo;
  lo.strictness = Strictness::lenient;
  if (o.n_dropout > 0) lo.n_dropout = o.n_dropout;
  lo.logprob_tolerance = o.logprob_tol;
  bool clean = true;
  for (const auto& input : o.inputs) {
    const auto result = load_records(input, lo);
    std::set<CheckpointKey> checkpoints;
    for (const auto& r : result.records) checkpoints.insert(r.checkpoint);
    out << input << ": " << result.records.size() << " valid records, " << checkpoints.size() << " checkpoints, "
        << result.violations.size() << " violations\n";
    for (std::size_t i = 0; i < result.violations.size() && i < o.max_violations; ++i) {
      out << "  line " << result.violations[i].line << ": " << result.violations[i].message << '\n';
    }
    if (result.violations.size() > o.max_violations) {
      out << "  ... " << result.violations.size() - o.max_violations << " more\n";
    }
    if (!result.violations.empty()) clean = false;
  }
  return clean ? kExitOk : kExitValidation;
}

// ---------------------------------------------------------------- score

int cmd_score(const CommonOptions& o, std::ostream& out, std::ostream& err) {
  auto loaded = load_inputs(o, err);
  const auto& table = loaded.table;
  json config = base_config("score", o);
  config["n_records"] = loaded.n_records;
  config["n_skipped"] = loaded.n_skipped;
  const auto metadata = metadata_block(config);

  ReportWriter writer(o.out, {}, metadata);
  for (auto format : output_formats(o)) {
    if (format == OutputFormat::json) {
      writer.add_document("scores", to_json(table, metadata));
    } else {
      std::ostringstream csv;
      write_csv(csv, table);
      writer.add_file("scores.csv", csv.str());
      Report diags{"diagnostics", concat({"sample_id"}, concat(checkpoint_columns(), {"column", "message"})), {}};
      for (const auto& d : table.diagnostics()) {
        diags.add(concat({d.sample_id}, concat(checkpoint_cells(d.checkpoint), {d.column, d.message})));
      }
      std::ostringstream dcsv;
      for (std::size_t i = 0; i < diags.columns.size(); ++i) dcsv << (i ? "," : "") << diags.columns[i];
      dcsv << '\n';
      for (const auto& row : diags.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) dcsv << (i ? "," : "") << to_csv_field(row[i]);
        dcsv << '\n';
      }
      writer.add_file("diagnostics.csv", dcsv.str());
    }
  }
  writer.write();
  std::size_t empty = 0;
  for (const auto& row : table.rows()) {
    for (const auto& v : row.metrics) empty += !v;
  }
  out << "scored " << table.rows().size() << " rows over " << table.checkpoints().size() << " checkpoints\n";
  if (empty > 0) err << "warning: " << empty << " empty metric cells (" << table.diagnostics().size() << " diagnostics)\n";
  return kExitOk;
}

// ---------------------------------------------------------------- correlate

using CorrKey = std::tuple<CheckpointKey, MetricId, QualityMetric>;

std::optional<std::string> field_value(const CheckpointKey& k, const std::string& field) {
  if (field == "n_train_samples") {
    if (!k.n_train_samples) return std::nullopt;
    return std::to_string(*k.n_train_samples);
  }
  if (field == "epoch") return std::to_string(k.epoch);
  if (field == "model") return k.model_name;
  if (field == "task") return k.task_name;
  return std::nullopt;
}

Report significance_report(const std::map<CorrKey, double>& rhos, const std::vector<MetricId>& metrics,
                           const std::vector<QualityMetric>& qualities, const std::string& field, double alpha) {
  Report report{"significance",
                {"model", "task", "grouping", "metric", "quality", "n_groups", "n_values", "f_statistic", "df_between",
                 "df_within", "p_raw", "p_adjusted", "rejected", "alpha", "family_size", "status"},
                {}};
  // block label -> hypothesis -> group value -> replicate rhos
  using Groups = std::map<std::string, std::vector<double>>;
  std::map<std::pair<std::string, std::string>, std::map<std::pair<MetricId, QualityMetric>, Groups>> blocks;

  std::map<CheckpointKey, int> last_epoch;
  for (const auto& [key, rho] : rhos) {
    auto run = run_of(std::get<0>(key));
    last_epoch[run] = std::max(last_epoch[run], std::get<0>(key).epoch);
  }
  for (const auto& [key, rho] : rhos) {
    const auto& [ckpt, metric, quality] = key;
    if (field != "epoch" && ckpt.epoch != last_epoch[run_of(ckpt)]) continue;
    auto value = field_value(ckpt, field);
    if (!value) continue;
    const std::string model = field == "model" ? "*" : ckpt.model_name;
    const std::string task = field == "task" ? "*" : ckpt.task_name;
    blocks[{model, task}][{metric, quality}][*value].push_back(rho);
  }

  for (auto& [block, hypotheses] : blocks) {
    std::vector<AnovaHypothesis> family;
    std::vector<std::pair<MetricId, QualityMetric>> family_ids;
    std::vector<std::vector<Cell>> skipped;
    for (auto metric : metrics) {
      for (auto quality : qualities) {
        auto it = hypotheses.find({metric, quality});
        if (it == hypotheses.end()) continue;
        AnovaHypothesis h;
        h.grouping = field;
        std::size_t values = 0;
        for (const auto& [label, group] : it->second) {
          h.groups.push_back(group);
          values += group.size();
        }
        std::string status;
        const bool thin = std::any_of(h.groups.begin(), h.groups.end(), [](const auto& g) { return g.size() < 2; });
        if (h.groups.size() < 2) {
          status = "fewer than 2 groups";
        } else if (thin) {
          status = "a group has fewer than 2 replicates";
        } else {
          try {
            one_way_anova(h.groups);
          } catch (const Error& e) {
            status = e.what();
          }
        }
        const std::vector<Cell> head = {block.first, block.second, field, std::string(name_of(metric)),
                                        std::string(name_of(quality)), cell(h.groups.size()), cell(values)};
        if (!status.empty()) {
          skipped.push_back(concat(head, {Cell(), Cell(), Cell(), Cell(), Cell(), Cell(), alpha, Cell(), status}));
          continue;
        }
        family.push_back(std::move(h));
        family_ids.emplace_back(metric, quality);
        skipped.push_back(head);  // placeholder, filled below
      }
    }
    const auto results = anova_holm(family, alpha);
    std::size_t next = 0;
    for (auto& row : skipped) {
      if (row.size() == report.columns.size()) {
        report.add(std::move(row));
        continue;
      }
      const auto& r = results[next];
      const auto anova = one_way_anova(family[next].groups);
      ++next;
      report.add(concat(row, {r.f_statistic, anova.df_between, anova.df_within, r.p_raw, r.p_adjusted, r.rejected, alpha,
                              cell(r.family_size), std::string("ok")}));
    }
  }
  return report;
}

int cmd_correlate(const CommonOptions& o, const CorrelateOptions& c, std::ostream& out, std::ostream& err) {
  if (!c.anova.empty() && c.anova != "n_train_samples" && c.anova != "epoch" && c.anova != "model" && c.anova != "task") {
    throw CLI::ValidationError("--anova", "grouping field must be one of n_train_samples, epoch, model, task");
  }
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw CLI::ValidationError("--alpha", "must lie in (0, 1)");
  auto loaded = load_inputs(o, err);
  const auto& table = loaded.table;
  const auto metrics = analysis_metrics(o, table);
  const auto qualities = analysis_qualities(o, table);

  json config = base_config("correlate", o);
  config["anova"] = c.anova.empty() ? json(nullptr) : json(c.anova);
  config["alpha"] = c.alpha;
  ReportWriter writer(o.out, output_formats(o), metadata_block(config));

  Report corr{"correlations",
              concat(checkpoint_columns(), {"metric", "family", "quality", "rho", "n", "tied_metric", "tied_quality", "status"}),
              {}};
  std::map<CorrKey, double> rhos;
  for (const auto& key : table.checkpoints()) {
    const auto sub = table.select(key);
    for (auto metric : metrics) {
      for (auto quality : qualities) {
        const std::vector<Cell> head = concat(checkpoint_cells(key), {std::string(name_of(metric)),
                                                                      std::string(name_of(metric_spec(metric).family)),
                                                                      std::string(name_of(quality))});
        try {
          const auto r = correlate_checkpoint(sub, metric, quality);
          rhos[{key, metric, quality}] = r.rho;
          corr.add(concat(head, {r.rho, cell(r.n), cell(r.tied_metric), cell(r.tied_quality), std::string("ok")}));
        } catch (const Error& e) {
          corr.add(concat(head, {Cell(), Cell(), Cell(), Cell(), std::string(e.what())}));
        }
      }
    }
  }
  writer.add(corr);

  // across seeds
  using SummaryKey = std::tuple<std::string, std::string, std::optional<std::int64_t>, int, MetricId, QualityMetric>;
  std::map<SummaryKey, std::vector<double>> by_seed;
  for (const auto& [key, rho] : rhos) {
    const auto& [k, m, q] = key;
    by_seed[{k.model_name, k.task_name, k.n_train_samples, k.epoch, m, q}].push_back(rho);
  }
  Report summary{"correlation_summary",
                 {"model", "task", "n_train_samples", "epoch", "metric", "quality", "rho_mean", "rho_sd", "n_seeds"},
                 {}};
  for (const auto& [key, values] : by_seed) {
    const auto& [model, task, n_train, epoch, m, q] = key;
    const auto s = summarize(values);
    summary.add({model, task, n_train ? Cell(*n_train) : Cell(), Cell(static_cast<std::int64_t>(epoch)),
                 std::string(name_of(m)), std::string(name_of(q)), s.mean, cell(s.sd), cell(s.n)});
  }
  writer.add(summary);

  Report deltas{"correlation_deltas",
                concat(run_columns(), {"kind", "from_epoch", "to_epoch", "metric", "quality", "rho_from", "rho_to", "delta",
                                       "status"}),
                {}};
  using DeltaKey = std::tuple<std::string, std::string, std::optional<std::int64_t>, std::string, MetricId, QualityMetric>;
  std::map<DeltaKey, std::vector<double>> delta_by_seed;
  for (const auto& [run, keys] : runs_of(table)) {
    std::vector<std::tuple<std::string, CheckpointKey, CheckpointKey>> kinds;
    const auto& last = keys.back();
    if (keys.front().epoch == 0 && last.epoch > 0) kinds.emplace_back("pre_post", keys.front(), last);
    auto first_post = std::find_if(keys.begin(), keys.end(), [](const CheckpointKey& k) { return k.epoch >= 1; });
    if (first_post != keys.end() && first_post->epoch < last.epoch) kinds.emplace_back("first_post", *first_post, last);
    for (const auto& [kind, from, to] : kinds) {
      for (auto metric : metrics) {
        for (auto quality : qualities) {
          const std::vector<Cell> head =
              concat(run_cells(run), {kind, Cell(static_cast<std::int64_t>(from.epoch)), Cell(static_cast<std::int64_t>(to.epoch)),
                                      std::string(name_of(metric)), std::string(name_of(quality))});
          auto a = rhos.find({from, metric, quality});
          auto b = rhos.find({to, metric, quality});
          if (a == rhos.end() || b == rhos.end()) {
            deltas.add(concat(head, {a == rhos.end() ? Cell() : Cell(a->second), b == rhos.end() ? Cell() : Cell(b->second),
                                     Cell(), std::string("correlation undefined at an endpoint")}));
            continue;
          }
          const double delta = b->second - a->second;
          deltas.add(concat(head, {a->second, b->second, delta, std::string("ok")}));
          delta_by_seed[{run.model_name, run.task_name, run.n_train_samples, kind, metric, quality}].push_back(delta);
        }
      }
    }
  }
  writer.add(deltas);

  Report delta_summary{"correlation_delta_summary",
                       {"model", "task", "n_train_samples", "kind", "metric", "quality", "delta_mean", "delta_sd", "n_seeds"},
                       {}};
  for (const auto& [key, values] : delta_by_seed) {
    const auto& [model, task, n_train, kind, m, q] = key;
    const auto s = summarize(values);
    delta_summary.add({model, task, n_train ? Cell(*n_train) : Cell(), kind, std::string(name_of(m)),
                       std::string(name_of(q)), s.mean, cell(s.sd), cell(s.n)});
  }
  writer.add(delta_summary);

  if (!c.anova.empty()) writer.add(significance_report(rhos, metrics, qualities, c.anova, c.alpha));
  writer.write();
  out << "correlated " << table.checkpoints().size() << " checkpoints, " << metrics.size() << " metrics x "
      << qualities.size() << " qualities\n";
  return kExitOk;
}

// ---------------------------------------------------------------- dynamics

std::string quadrant_of(const SampleTransition& t) { return std::string(name_of(classify_quadrant(t.dq(), t.dc()))); }

int cmd_dynamics(const CommonOptions& o, const DynamicsCliOptions& d, std::ostream& out, std::ostream& err) {
  auto loaded = load_inputs(o, err);
  const auto& table = loaded.table;
  const auto metrics = analysis_metrics(o, table);
  const auto qualities = analysis_qualities(o, table);

  json config = base_config("dynamics", o);
  config["from_epoch"] = d.from_epoch >= 0 ? json(d.from_epoch) : json("first post-SFT");
  config["to_epoch"] = d.to_epoch >= 0 ? json(d.to_epoch) : json("last");
  config["pair_cap"] = d.pair_cap > 0 ? json(d.pair_cap) : json("none");
  config["seed"] = d.seed;
  config["per_sample_dump"] = d.per_sample_dump;
  ReportWriter writer(o.out, output_formats(o), metadata_block(config));

  DynamicsOptions options;
  options.pair_cap = d.pair_cap > 0 ? std::optional<std::size_t>(d.pair_cap) : std::nullopt;
  options.seed = d.seed;

  const auto head_columns = concat(run_columns(), {"from_epoch", "to_epoch", "metric", "quality"});
  Report quadrants{"quadrants",
                   concat(head_columns, {"n", "concordant", "overconfident", "underconfident", "zero_delta",
                                         "p_concordant", "p_overconfident", "p_underconfident", "unmatched", "missing_cells"}),
                   {}};
  Report pairs{"pair_cases",
               concat(head_columns, {"eligible_pairs", "classified_pairs", "subsampled", "qual_same_conf_same",
                                     "qual_same_conf_flips", "qual_flips_conf_flips", "qual_flips_conf_same",
                                     "p_qual_same_conf_same", "p_qual_same_conf_flips", "p_qual_flips_conf_flips",
                                     "p_qual_flips_conf_same", "case1_no_quality_change", "later_quality_ties",
                                     "later_confidence_ties", "status"}),
               {}};
  Report by_epoch{"quadrants_by_epoch",
                  concat(head_columns, {"convention", "n", "confidence_not_increased", "increased_quality_not_improved",
                                        "increased_quality_improved", "p_confidence_not_increased",
                                        "p_increased_quality_not_improved", "p_increased_quality_improved"}),
                  {}};
  Report similarity{"similarity", concat(run_columns(), {"epoch", "metric", "rho_confidence_similarity", "status"}), {}};
  Report trajectory{"trajectory", concat(run_columns(), {"metric", "quality", "epoch", "rho", "n", "status"}), {}};
  Report drops{"trajectory_drops", concat(run_columns(), {"metric", "quality", "n_epochs", "max_adjacent_drop"}), {}};
  Report samples{"samples",
                 concat(head_columns, {"sample_id", "quality_from", "quality_to", "confidence_from", "confidence_to", "dq",
                                       "dc", "quadrant"}),
                 {}};

  for (const auto& [run, keys] : runs_of(table)) {
    auto find_epoch = [&](int epoch) -> const CheckpointKey& {
      for (const auto& k : keys) {
        if (k.epoch == epoch) return k;
      }
      throw ValidationError("cannot pair checkpoints: " + describe(run) + " has no epoch " + std::to_string(epoch));
    };
    int from_epoch = d.from_epoch;
    if (from_epoch < 0) {
      auto post = std::find_if(keys.begin(), keys.end(), [](const CheckpointKey& k) { return k.epoch >= 1; });
      from_epoch = post != keys.end() ? post->epoch : keys.front().epoch;
    }
    const int to_epoch = d.to_epoch >= 0 ? d.to_epoch : keys.back().epoch;
    const auto& from_key = find_epoch(from_epoch);
    const auto& to_key = find_epoch(to_epoch);
    if (from_epoch == to_epoch) {
      throw ValidationError("cannot pair checkpoints: " + describe(run) + " needs two distinct epochs, got only " +
                            std::to_string(from_epoch));
    }
    const auto from = table.select(from_key);
    const auto to = table.select(to_key);
    std::vector<ScoreTable> epochs;
    for (const auto& k : keys) epochs.push_back(table.select(k));

    for (auto metric : metrics) {
      const std::string mname(name_of(metric));
      for (auto quality : qualities) {
        const std::string qname(name_of(quality));
        const auto head = concat(run_cells(run), {Cell(static_cast<std::int64_t>(from_epoch)),
                                                  Cell(static_cast<std::int64_t>(to_epoch)), mname, qname});
        const auto transitions = build_transitions(from, to, metric, quality);
        if (transitions.samples.empty()) {
          err << "warning: " << describe(run) << " " << mname << "/" << qname << ": no sample has both cells at both epochs\n";
          continue;
        }
        const auto report = analyze_transition(from, to, metric, quality, options);
        const auto& qd = report.quadrants;
        const auto p = qd.proportions();
        quadrants.add(concat(head, {cell(qd.total()), cell(qd.concordant), cell(qd.overconfident), cell(qd.underconfident),
                                    cell(qd.zero_delta), p[0], p[1], p[2], cell(transitions.unmatched.size()),
                                    cell(transitions.missing_cells)}));
        if (report.pair_cases) {
          const auto& pc = *report.pair_cases;
          const auto pp = pc.proportions();
          pairs.add(concat(head, {cell(pc.eligible_pairs), cell(pc.classified_pairs), pc.subsampled, cell(pc.counts[0]),
                                  cell(pc.counts[1]), cell(pc.counts[2]), cell(pc.counts[3]), pp[0], pp[1], pp[2], pp[3],
                                  cell(pc.case1_no_quality_change), cell(pc.later_quality_ties),
                                  cell(pc.later_confidence_ties), std::string("ok")}));
        } else {
          std::vector<Cell> blank(14);
          blank[0] = cell(std::size_t{0});
          blank.push_back(std::string("no eligible pairs"));
          pairs.add(concat(head, blank));
        }
        if (d.per_sample_dump) {
          for (const auto& t : transitions.samples) {
            samples.add(concat(head, {t.sample_id, t.quality_from, t.quality_to, t.confidence_from, t.confidence_to,
                                      t.dq(), t.dc(), quadrant_of(t)}));
          }
        }

        for (std::size_t e = 1; e < epochs.size(); ++e) {
          const auto adjacent = build_transitions(epochs[e - 1], epochs[e], metric, quality);
          if (adjacent.samples.empty()) continue;
          const auto b = confidence_increase_breakdown(adjacent.samples);
          const double n = static_cast<double>(b.total());
          const auto adj_head = concat(run_cells(run), {Cell(static_cast<std::int64_t>(keys[e - 1].epoch)),
                                                        Cell(static_cast<std::int64_t>(keys[e].epoch)), mname, qname});
          const std::size_t not_improved[2] = {b.increased_quality_not_improved,
                                               b.increased_quality_not_improved - b.increased_zero_quality_delta};
          const std::size_t improved[2] = {b.increased_quality_improved,
                                           b.increased_quality_improved + b.increased_zero_quality_delta};
          const char* conventions[2] = {"zero_delta_not_improved", "zero_delta_improved"};
          for (int c = 0; c < 2; ++c) {
            by_epoch.add(concat(adj_head, {std::string(conventions[c]), cell(b.total()), cell(b.confidence_not_increased),
                                           cell(not_improved[c]), cell(improved[c]), b.confidence_not_increased / n,
                                           not_improved[c] / n, improved[c] / n}));
          }
        }

        if (epochs.size() >= 2) {
          const auto traj = epoch_trajectory(epochs, metric, quality);
          for (const auto& ec : traj.epochs) {
            if (ec.report) {
              trajectory.add(concat(run_cells(run), {mname, qname, Cell(static_cast<std::int64_t>(ec.epoch)), ec.report->rho,
                                                     cell(ec.report->n), std::string("ok")}));
            } else {
              trajectory.add(concat(run_cells(run), {mname, qname, Cell(static_cast<std::int64_t>(ec.epoch)), Cell(), Cell(),
                                                     ec.missing_reason}));
            }
          }
          drops.add(concat(run_cells(run), {mname, qname, cell(traj.epochs.size()), traj.max_adjacent_drop}));
        }
      }
      for (const auto* group : {&from, &to}) {
        const int epoch = group->rows().front().checkpoint.epoch;
        try {
          const double rho = similarity_confidence_correlation(*group, metric);
          similarity.add(concat(run_cells(run), {Cell(static_cast<std::int64_t>(epoch)), mname, rho, std::string("ok")}));
        } catch (const Error& e) {
          similarity.add(concat(run_cells(run), {Cell(static_cast<std::int64_t>(epoch)), mname, Cell(), std::string(e.what())}));
        }
      }
    }
  }
  writer.add(quadrants);
  writer.add(pairs);
  writer.add(by_epoch);
  writer.add(similarity);
  writer.add(trajectory);
  writer.add(drops);
  if (d.per_sample_dump) writer.add(samples);
  writer.write();
  out << "analyzed " << runs_of(table).size() << " runs, " << quadrants.rows.size() << " metric/quality transitions\n";
  return kExitOk;
}

// ---------------------------------------------------------------- detect

int cmd_detect(const CommonOptions& o, std::ostream& out, std::ostream& err) {
  auto loaded = load_inputs(o, err);
  const auto& table = loaded.table;
  const auto metrics = analysis_metrics(o, table);
  for (const auto& row : table.rows()) {
    if (!row.correctness_label) {
      throw ValidationError("missing correctness_label for sample " + row.sample_id + " at " + describe(row.checkpoint));
    }
  }
  ReportWriter writer(o.out, output_formats(o), metadata_block(base_config("detect", o)));
  Report detection{"detection",
                   concat(checkpoint_columns(), {"metric", "family", "auroc", "n_pos", "n_neg", "n", "rescale_min",
                                                 "rescale_max", "status"}),
                   {}};
  std::map<std::pair<CheckpointKey, MetricId>, double> aurocs;
  for (const auto& key : table.checkpoints()) {
    const auto sub = table.select(key);
    for (auto metric : metrics) {
      const auto& spec = metric_spec(metric);
      std::vector<double> scores;
      std::vector<bool> labels;
      for (const auto& row : sub.rows()) {
        auto v = sub.metric(row, metric);
        if (!v) continue;
        scores.push_back(align_orientation(spec, *v));
        labels.push_back(*row.correctness_label);
      }
      const auto head = concat(checkpoint_cells(key), {std::string(spec.name), std::string(name_of(spec.family))});
      std::size_t pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
      std::size_t neg = labels.size() - pos;
      if (pos == 0 || neg == 0) {
        detection.add(concat(head, {Cell(), cell(pos), cell(neg), cell(labels.size()), Cell(), Cell(),
                                    std::string("labels contain a single class")}));
        continue;
      }
      try {
        const auto rescaled = min_max_rescale(scores);
        const auto r = auroc(rescaled.values, labels);
        aurocs[{key, metric}] = r.auroc;
        detection.add(concat(head, {r.auroc, cell(r.n_pos), cell(r.n_neg), cell(labels.size()), rescaled.min, rescaled.max,
                                    std::string("ok")}));
      } catch (const DegenerateInput&) {
        aurocs[{key, metric}] = 0.5;
        detection.add(concat(head, {0.5, cell(pos), cell(neg), cell(labels.size()), scores.front(), scores.front(),
                                    std::string("constant scores")}));
      }
    }
  }
  writer.add(detection);

  Report comparison{"detection_comparison",
                    concat(run_columns(), {"metric", "from_epoch", "to_epoch", "auroc_from", "auroc_to", "delta", "direction"}),
                    {}};
  for (const auto& [run, keys] : runs_of(table)) {
    if (keys.size() < 2) continue;
    for (auto metric : metrics) {
      auto a = aurocs.find({keys.front(), metric});
      auto b = aurocs.find({keys.back(), metric});
      if (a == aurocs.end() || b == aurocs.end()) continue;
      const double delta = b->second - a->second;
      const std::string direction = delta > 0.0 ? "up" : delta < 0.0 ? "down" : "same";
      comparison.add(concat(run_cells(run), {std::string(name_of(metric)), Cell(static_cast<std::int64_t>(keys.front().epoch)),
                                             Cell(static_cast<std::int64_t>(keys.back().epoch)), a->second, b->second, delta,
                                             direction}));
    }
  }
  writer.add(comparison);
  writer.write();
  out << "detection over " << table.checkpoints().size() << " checkpoints, " << metrics.size() << " metrics\n";
  return kExitOk;
}

// ---------------------------------------------------------------- synth

int cmd_synth(SynthCliOptions& o, std::ostream& out) {
  auto drift = parse_drift_model(o.drift);
  if (!drift) throw CLI::ValidationError("--drift", "unknown drift model " + o.drift);
  o.spec.drift = *drift;
  const auto corpus = generate_synthetic(o.spec);
  write_synthetic(corpus, o.out);
  out << "wrote " << corpus.records.size() << " records to " << (std::filesystem::path(o.out) / "records.jsonl").string()
      << '\n';
  return kExitOk;
}

void add_common(CLI::App* cmd, CommonOptions& o, bool analysis) {
  cmd->add_option("-i,--input", o.inputs, "record JSONL or score table JSON (repeatable)")->required();
  cmd->add_option("-o,--out", o.out, "output directory")->capture_default_str();
  cmd->add_option("--format", o.formats, "csv or json (repeatable)")->check(CLI::IsMember({"csv", "json"}));
  auto* strict = cmd->add_flag("--strict", o.strict, "reject the whole input on the first invalid record (default)");
  auto* lenient = cmd->add_flag("--lenient", o.lenient, "skip invalid records and report them");
  strict->excludes(lenient);
  cmd->add_option("--n-dropout", o.n_dropout, "expected dropout samples per record")->check(CLI::PositiveNumber);
  cmd->add_option("--logprob-tol", o.logprob_tol, "joint log-probability tolerance")->capture_default_str();
  cmd->add_option("--metrics", o.metrics, "confidence metrics (default all)")->delimiter(',');
  cmd->add_option("--quality", o.qualities, "quality metrics")->delimiter(',');
  cmd->add_option("--k", o.k, "beams used by bs_ratios and bs_sums (default all)")->check(CLI::PositiveNumber);
  cmd->add_option("--cocoa-similarity", o.cocoa_similarity, "similarity used by the cocoa metrics")->capture_default_str();
  if (analysis) {
    cmd->add_option("--train-embeddings", o.train_embeddings, "JSONL of training-set embeddings");
  }
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Confidence metrics and confidence-quality correlation across fine-tuning checkpoints", "confcorr"};
  app.require_subcommand(1);

  ValidateOptions validate;
  auto* v = app.add_subcommand("validate", "check record files against the schema");
  v->add_option("-i,--input", validate.inputs, "record JSONL (repeatable)")->required();
  v->add_option("--max-violations", validate.max_violations, "violations to print per file")->capture_default_str();
  v->add_option("--n-dropout", validate.n_dropout, "expected dropout samples per record")->check(CLI::PositiveNumber);
  v->add_option("--logprob-tol", validate.logprob_tol, "joint log-probability tolerance")->capture_default_str();

  CommonOptions score_opts;
  auto* s = app.add_subcommand("score", "compute confidence and quality columns");
  add_common(s, score_opts, true);

  CommonOptions corr_opts;
  CorrelateOptions corr;
  auto* c = app.add_subcommand("correlate", "per-checkpoint Spearman correlation, seed summaries and deltas");
  add_common(c, corr_opts, true);
  c->add_option("--anova", corr.anova, "grouping field for one-way ANOVA (n_train_samples, epoch, model, task)");
  c->add_option("--alpha", corr.alpha, "family-wise significance level")->capture_default_str();

  CommonOptions dyn_opts;
  DynamicsCliOptions dyn;
  auto* d = app.add_subcommand("dynamics", "quadrants, pair cases, similarity and trajectories between epochs");
  add_common(d, dyn_opts, true);
  d->add_option("--from-epoch", dyn.from_epoch, "earlier epoch (default first post-SFT epoch)");
  d->add_option("--to-epoch", dyn.to_epoch, "later epoch (default last)");
  d->add_option("--pair-cap", dyn.pair_cap, "max eligible pairs classified, 0 for all")->capture_default_str();
  d->add_option("--seed", dyn.seed, "seed for pair subsampling")->capture_default_str();
  d->add_flag("--per-sample-dump", dyn.per_sample_dump, "write per-sample (dq, dc) rows");

  CommonOptions det_opts;
  auto* t = app.add_subcommand("detect", "AUROC of each metric for detecting correct answers");
  add_common(t, det_opts, true);

  SynthCliOptions synth;
  auto* y = app.add_subcommand("synth", "generate a synthetic record corpus with known ground truth");
  auto& sp = synth.spec;
  y->add_option("-o,--out", synth.out, "output directory")->capture_default_str();
  y->add_option("--n-samples", sp.n_samples)->capture_default_str();
  y->add_option("--n-epochs", sp.n_epochs)->capture_default_str();
  y->add_flag("--pre-sft", sp.include_pre_sft, "also emit epoch 0");
  y->add_option("--seeds", sp.seeds, "one run per seed")->delimiter(',')->capture_default_str();
  y->add_option("--train-sizes", sp.train_sizes, "one run per training-set size")->delimiter(',');
  y->add_option("--vocab-size", sp.vocab_size)->capture_default_str();
  y->add_option("--drift", synth.drift, "none, uniform_logprob_inflation, quality_coupled, similarity_coupled")
      ->capture_default_str();
  y->add_option("--epsilon", sp.epsilon, "per-epoch logprob inflation")->capture_default_str();
  y->add_option("--beta", sp.beta, "similarity weight")->capture_default_str();
  y->add_option("--noise", sp.noise_scale)->capture_default_str();
  y->add_option("--sentence-length", sp.sentence_length)->capture_default_str();
  y->add_option("--n-dropout", sp.n_dropout)->capture_default_str();
  y->add_option("--n-beams", sp.n_beams)->capture_default_str();
  y->add_option("--top-k", sp.distribution_top_k, "entries per aligned distribution")->capture_default_str();
  y->add_option("--correct-threshold", sp.correct_threshold)->capture_default_str();
  y->add_option("--model", sp.model_name)->capture_default_str();
  y->add_option("--task", sp.task_name)->capture_default_str();
  y->add_option("--embedding-dim", sp.embedding_dim)->capture_default_str();
  y->add_option("--n-train-embeddings", sp.n_train_embeddings)->capture_default_str();

  std::vector<std::string> argv_store = {"confcorr"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (v->parsed()) return cmd_validate(validate, out);
    if (s->parsed()) return cmd_score(score_opts, out, err);
    if (c->parsed()) return cmd_correlate(corr_opts, corr, out, err);
    if (d->parsed()) return cmd_dynamics(dyn_opts, dyn, out, err);
    if (t->parsed()) return cmd_detect(det_opts, out, err);
    if (y->parsed()) return cmd_synth(synth, out);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(args, out, err);
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace confcorr
