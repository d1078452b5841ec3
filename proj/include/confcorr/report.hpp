#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

namespace confcorr {

using Cell = std::variant<std::monostate, std::string, double, std::int64_t, bool>;

Cell cell(const std::optional<double>& v);
Cell cell(std::size_t v);

/// A named rectangular result written as <name>.csv or <name>.json.
struct Report {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add(std::vector<Cell> row);
};

enum class OutputFormat { csv, json };

/// Collects reports and writes them all at once. CSV output gets a single
/// metadata.json next to the tables; JSON tables embed the metadata.
class ReportWriter {
 public:
  ReportWriter(std::filesystem::path dir, std::vector<OutputFormat> formats, nlohmann::json metadata);

  void add(Report report);
  /// A document written verbatim as <name>.json regardless of format.
  void add_document(std::string name, nlohmann::json doc);
  /// Preformatted content written to `filename` as is.
  void add_file(std::string filename, std::string content);
  void write() const;

  const std::vector<Report>& reports() const noexcept { return reports_; }

 private:
  std::filesystem::path dir_;
  std::vector<OutputFormat> formats_;
  nlohmann::json metadata_;
  std::vector<Report> reports_;
  std::vector<std::pair<std::string, nlohmann::json>> documents_;
  std::vector<std::pair<std::string, std::string>> files_;
};

std::string to_csv_field(const Cell& c);
nlohmann::json to_json(const Cell& c);
nlohmann::json to_json(const Report& report, const nlohmann::json& metadata);

}  // namespace confcorr
