#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include <json.hpp>

#include "confcorr/confidence.hpp"

namespace confcorr {

/// Shortest decimal text that round-trips to the same double.
std::string format_number(double value);

/// Quotes a CSV field when it contains a separator, quote or newline.
std::string csv_escape(const std::string& field);

/// Column orientation and family for every metric in the table.
nlohmann::json column_metadata(const ScoreTable& table);

/// JSON document {"metadata", "columns", "rows", "diagnostics"}; empty cells are null.
nlohmann::json to_json(const ScoreTable& table, const nlohmann::json& metadata = nlohmann::json::object());
ScoreTable score_table_from_json(const nlohmann::json& doc);

/// CSV: sample_id, checkpoint fields, metric columns, quality columns, label, similarity. Empty cells stay empty.
void write_csv(std::ostream& out, const ScoreTable& table);

}  // namespace confcorr
