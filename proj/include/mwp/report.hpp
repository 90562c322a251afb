#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace mwp {

enum class ReportFormat { Json, Markdown, Csv };

std::optional<ReportFormat> parse_report_format(std::string_view name);

/// A rectangular table of preformatted cells.
struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
};

std::string render_markdown(const Table& t);
std::string render_csv(const Table& t);

/// JSON array of row objects keyed by column name.
nlohmann::json table_json(const Table& t);

/// Stable pretty JSON text (sorted keys, two-space indent, trailing newline).
std::string dump_json(const nlohmann::json& j);

} // namespace mwp
