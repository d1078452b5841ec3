#include "confcorr/report.hpp"

#include <cmath>
#include <fstream>

#include "confcorr/error.hpp"
#include "confcorr/score_table_io.hpp"

namespace confcorr {

Cell cell(const std::optional<double>& v) { return v ? Cell(*v) : Cell(); }

Cell cell(std::size_t v) { return Cell(static_cast<std::int64_t>(v)); }

void Report::add(std::vector<Cell> row) {
  if (row.size() != columns.size()) {
    throw Error("report " + name + ": row has " + std::to_string(row.size()) + " cells for " +
                std::to_string(columns.size()) + " columns");
  }
  rows.push_back(std::move(row));
}

std::string to_csv_field(const Cell& c) {
  struct Visitor {
    std::string operator()(std::monostate) const { return ""; }
    std::string operator()(const std::string& s) const { return csv_escape(s); }
    std::string operator()(double d) const { return format_number(d); }
    std::string operator()(std::int64_t i) const { return std::to_string(i); }
    std::string operator()(bool b) const { return b ? "true" : "false"; }
  };
  return std::visit(Visitor{}, c);
}

nlohmann::json to_json(const Cell& c) {
  struct Visitor {
    nlohmann::json operator()(std::monostate) const { return nullptr; }
    nlohmann::json operator()(const std::string& s) const { return s; }
    nlohmann::json operator()(double d) const {
      if (!std::isfinite(d)) return format_number(d);
      return d;
    }
    nlohmann::json operator()(std::int64_t i) const { return i; }
    nlohmann::json operator()(bool b) const { return b; }
  };
  return std::visit(Visitor{}, c);
}

nlohmann::json to_json(const Report& report, const nlohmann::json& metadata) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : report.rows) {
    nlohmann::json obj = nlohmann::json::object();
    for (std::size_t i = 0; i < row.size(); ++i) obj[report.columns[i]] = to_json(row[i]);
    rows.push_back(std::move(obj));
  }
  return {{"metadata", metadata}, {"table", report.name}, {"columns", report.columns}, {"rows", std::move(rows)}};
}

ReportWriter::ReportWriter(std::filesystem::path dir, std::vector<OutputFormat> formats, nlohmann::json metadata)
    : dir_(std::move(dir)), formats_(std::move(formats)), metadata_(std::move(metadata)) {
  if (formats_.empty()) formats_.push_back(OutputFormat::csv);
}

void ReportWriter::add(Report report) { reports_.push_back(std::move(report)); }

void ReportWriter::add_document(std::string name, nlohmann::json doc) {
  documents_.emplace_back(std::move(name), std::move(doc));
}

void ReportWriter::add_file(std::string filename, std::string content) {
  files_.emplace_back(std::move(filename), std::move(content));
}

namespace {

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

void ReportWriter::write() const {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw IoError("cannot create output directory " + dir_.string() + ": " + ec.message());

  bool wrote_csv = false;
  for (auto format : formats_) {
    for (const auto& report : reports_) {
      if (format == OutputFormat::csv) {
        const auto path = dir_ / (report.name + ".csv");
        auto out = open_output(path);
        for (std::size_t i = 0; i < report.columns.size(); ++i) out << (i ? "," : "") << csv_escape(report.columns[i]);
        out << '\n';
        for (const auto& row : report.rows) {
          for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << to_csv_field(row[i]);
          out << '\n';
        }
        finish(out, path);
        wrote_csv = true;
      } else {
        const auto path = dir_ / (report.name + ".json");
        auto out = open_output(path);
        out << to_json(report, metadata_).dump(2) << '\n';
        finish(out, path);
      }
    }
  }
  for (const auto& [name, doc] : documents_) {
    const auto path = dir_ / (name + ".json");
    auto out = open_output(path);
    out << doc.dump(2) << '\n';
    finish(out, path);
  }
  for (const auto& [filename, content] : files_) {
    const auto path = dir_ / filename;
    auto out = open_output(path);
    out << content;
    finish(out, path);
    if (path.extension() == ".csv") wrote_csv = true;
  }
  if (wrote_csv) {
    const auto path = dir_ / "metadata.json";
    auto out = open_output(path);
    out << metadata_.dump(2) << '\n';
    finish(out, path);
  }
}

}  // namespace confcorr
