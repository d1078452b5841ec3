#include "confcorr/score_table_io.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <ostream>

#include "confcorr/error.hpp"

namespace confcorr {

using nlohmann::json;

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc{}) throw Error("number formatting failed");
  return std::string(buf.data(), end);
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

namespace {

json cell(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

json column_metadata(const ScoreTable& table) {
  json metrics = json::array();
  for (MetricId id : table.metrics()) {
    const auto& spec = metric_spec(id);
    metrics.push_back({{"name", spec.name}, {"family", name_of(spec.family)}, {"higher_is_confident", spec.higher_is_confident}});
  }
  json qualities = json::array();
  for (QualityMetric q : table.qualities()) qualities.push_back(name_of(q));
  return {{"metrics", std::move(metrics)}, {"qualities", std::move(qualities)}};
}

json to_json(const ScoreTable& table, const json& metadata) {
  json rows = json::array();
  for (const auto& row : table.rows()) {
    json metrics = json::object();
    for (std::size_t i = 0; i < table.metrics().size(); ++i) metrics[std::string(name_of(table.metrics()[i]))] = cell(row.metrics[i]);
    json qualities = json::object();
    for (std::size_t i = 0; i < table.qualities().size(); ++i) {
      qualities[std::string(name_of(table.qualities()[i]))] = cell(row.qualities[i]);
    }
    rows.push_back({{"sample_id", row.sample_id},
                    {"checkpoint", to_json(row.checkpoint)},
                    {"metrics", std::move(metrics)},
                    {"qualities", std::move(qualities)},
                    {"correctness_label", row.correctness_label ? json(*row.correctness_label) : json(nullptr)},
                    {"train_similarity", cell(row.train_similarity)}});
  }
  json diagnostics = json::array();
  for (const auto& d : table.diagnostics()) {
    diagnostics.push_back({{"sample_id", d.sample_id}, {"checkpoint", to_json(d.checkpoint)}, {"column", d.column}, {"message", d.message}});
  }
  return {{"metadata", metadata}, {"columns", column_metadata(table)}, {"rows", std::move(rows)}, {"diagnostics", std::move(diagnostics)}};
}

ScoreTable score_table_from_json(const json& doc) {
  if (!doc.is_object() || !doc.contains("columns") || !doc.contains("rows")) {
    throw ValidationError("not a score table document (expected \"columns\" and \"rows\")");
  }
  std::vector<MetricId> metrics;
  for (const auto& m : doc["columns"].at("metrics")) {
    auto id = parse_metric(m.at("name").get<std::string>());
    if (!id) throw ValidationError("unknown metric column " + m.at("name").get<std::string>());
    metrics.push_back(*id);
  }
  std::vector<QualityMetric> qualities;
  for (const auto& q : doc["columns"].at("qualities")) {
    auto id = parse_quality_metric(q.get<std::string>());
    if (!id) throw ValidationError("unknown quality column " + q.get<std::string>());
    qualities.push_back(*id);
  }
  ScoreTable table(metrics, qualities);
  auto read_cell = [](const json& obj, std::string_view key) -> std::optional<double> {
    auto it = obj.find(std::string(key));
    if (it == obj.end() || it->is_null()) return std::nullopt;
    return it->get<double>();
  };
  for (const auto& r : doc["rows"]) {
    ScoreRow row;
    row.sample_id = r.at("sample_id").get<std::string>();
    row.checkpoint = checkpoint_from_json(r.at("checkpoint"));
    for (MetricId id : metrics) row.metrics.push_back(read_cell(r.at("metrics"), name_of(id)));
    for (QualityMetric q : qualities) row.qualities.push_back(read_cell(r.at("qualities"), name_of(q)));
    if (auto it = r.find("correctness_label"); it != r.end() && !it->is_null()) row.correctness_label = it->get<bool>();
    row.train_similarity = read_cell(r, "train_similarity");
    table.rows().push_back(std::move(row));
  }
  if (auto it = doc.find("diagnostics"); it != doc.end()) {
    for (const auto& d : *it) {
      table.diagnostics().push_back({d.at("sample_id").get<std::string>(), checkpoint_from_json(d.at("checkpoint")),
                                     d.at("column").get<std::string>(), d.at("message").get<std::string>()});
    }
  }
  return table;
}

void write_csv(std::ostream& out, const ScoreTable& table) {
  out << "sample_id,model,task,epoch,seed,n_train_samples";
  for (MetricId id : table.metrics()) out << ',' << name_of(id);
  for (QualityMetric q : table.qualities()) out << ',' << name_of(q);
  out << ",correctness_label,train_similarity\n";
  auto write_cell = [&](const std::optional<double>& v) {
    out << ',';
    if (v) out << format_number(*v);
  };
  for (const auto& row : table.rows()) {
    const auto& k = row.checkpoint;
    out << csv_escape(row.sample_id) << ',' << csv_escape(k.model_name) << ',' << csv_escape(k.task_name) << ','
        << k.epoch << ',' << k.seed << ',';
    if (k.n_train_samples) out << *k.n_train_samples;
    for (const auto& v : row.metrics) write_cell(v);
    for (const auto& v : row.qualities) write_cell(v);
    out << ',';
    if (row.correctness_label) out << (*row.correctness_label ? "true" : "false");
    write_cell(row.train_similarity);
    out << '\n';
  }
}

}  // namespace confcorr
