#include "mwp/report.hpp"

#include <algorithm>

namespace mwp {

std::optional<ReportFormat> parse_report_format(std::string_view name) {
    if (name == "json") return ReportFormat::Json;
    if (name == "md" || name == "markdown") return ReportFormat::Markdown;
    if (name == "csv") return ReportFormat::Csv;
    return std::nullopt;
}

std::string render_markdown(const Table& t) {
    std::vector<std::size_t> width(t.columns.size(), 3);
    for (std::size_t c = 0; c < t.columns.size(); ++c) width[c] = std::max(width[c], t.columns[c].size());
    for (const auto& row : t.rows)
        for (std::size_t c = 0; c < row.size() && c < width.size(); ++c) width[c] = std::max(width[c], row[c].size());
    auto line = [&](const std::vector<std::string>& cells) {
        std::string out = "|";
        for (std::size_t c = 0; c < width.size(); ++c) {
            const std::string cell = c < cells.size() ? cells[c] : "";
            out += " " + cell + std::string(width[c] - cell.size(), ' ') + " |";
        }
        return out + "\n";
    };
    std::string out = line(t.columns);
    out += "|";
    for (auto w : width) out += std::string(w + 2, '-') + "|";
    out += "\n";
    for (const auto& row : t.rows) out += line(row);
    return out;
}

std::string render_csv(const Table& t) {
    auto cell = [](const std::string& s) {
        if (s.find_first_of(",\"\n") == std::string::npos) return s;
        std::string q = "\"";
        for (char c : s) {
            if (c == '"') q += '"';
            q += c;
        }
        return q + "\"";
    };
    auto line = [&](const std::vector<std::string>& cells) {
        std::string out;
        for (std::size_t c = 0; c < cells.size(); ++c) out += (c ? "," : "") + cell(cells[c]);
        return out + "\n";
    };
    std::string out = line(t.columns);
    for (const auto& row : t.rows) out += line(row);
    return out;
}

nlohmann::json table_json(const Table& t) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : t.rows) {
        nlohmann::json obj = nlohmann::json::object();
        for (std::size_t c = 0; c < t.columns.size() && c < row.size(); ++c) obj[t.columns[c]] = row[c];
        rows.push_back(std::move(obj));
    }
    return rows;
}

std::string dump_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

} // namespace mwp
