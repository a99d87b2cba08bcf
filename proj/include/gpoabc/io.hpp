#ifndef GPOABC_IO_HPP
#define GPOABC_IO_HPP

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <Eigen/Core>

#include "errors.hpp"

namespace gpoabc {

/// Shortest text that round-trips the double; "inf", "-inf" and "nan" otherwise.
inline std::string format_double(double v)
{
    if (std::isnan(v))
        return "nan";
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view text, const std::string& where)
{
    double v = 0.0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    if (!text.empty() && *first == '+')
        ++first;
    const auto res = std::from_chars(first, last, v);
    require(res.ec == std::errc{} && res.ptr == last && first != last, ErrorCode::io,
        where + ": cannot parse '" + std::string(text) + "' as a number");
    return v;
}

// --- files --------------------------------------------------------------------

inline void write_text(const std::filesystem::path& path, const std::string& content)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::io, "cannot open '" + path.string() + "' for writing");
    out << content;
    require(static_cast<bool>(out), ErrorCode::io, "failed writing '" + path.string() + "'");
}

inline std::string read_text(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::io, "cannot open '" + path.string() + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

/// Comma-separated table built in memory and written in one go.
class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header) : columns_(header.size())
    {
        append(header);
    }

    template <typename... Cells>
    void row(const Cells&... cells)
    {
        std::vector<std::string> r;
        r.reserve(sizeof...(cells));
        (r.push_back(cell(cells)), ...);
        add(r);
    }

    void add(const std::vector<std::string>& cells)
    {
        require(cells.size() == columns_, ErrorCode::contract, "CSV row has the wrong number of cells");
        append(cells);
    }

    const std::string& str() const noexcept { return text_; }
    void save(const std::filesystem::path& path) const { write_text(path, text_); }

    static std::string cell(double v) { return format_double(v); }
    static std::string cell(const std::string& s) { return s; }
    static std::string cell(const char* s) { return s; }
    static std::string cell(bool b) { return b ? "1" : "0"; }
    static std::string cell(std::size_t v) { return std::to_string(v); }
    static std::string cell(int v) { return std::to_string(v); }

private:
    void append(const std::vector<std::string>& cells)
    {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i)
                text_ += ',';
            text_ += cells[i];
        }
        text_ += '\n';
    }

    std::size_t columns_;
    std::string text_;
};

// --- CSV reading -----------------------------------------------------------

struct CsvDocument {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers; // 1-based file line of each row

    std::size_t column(const std::string& name) const
    {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name)
                return i;
        fail(ErrorCode::io, "CSV has no column '" + name + "'");
    }
};

namespace detail {

    inline std::string_view trim(std::string_view s)
    {
        while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
            s.remove_prefix(1);
        while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
            s.remove_suffix(1);
        return s;
    }

    inline std::vector<std::string> split_csv_line(std::string_view line, std::size_t line_number)
    {
        std::vector<std::string> cells;
        std::string current;
        bool quoted = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            const char c = line[i];
            if (quoted) {
                if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                    current += '"';
                    ++i;
                } else if (c == '"') {
                    quoted = false;
                } else {
                    current += c;
                }
            } else if (c == '"') {
                quoted = true;
            } else if (c == ',') {
                cells.emplace_back(trim(current));
                current.clear();
            } else {
                current += c;
            }
        }
        require(!quoted, ErrorCode::io, "line " + std::to_string(line_number) + ": unterminated quote");
        cells.emplace_back(trim(current));
        return cells;
    }

} // namespace detail

inline CsvDocument parse_csv(const std::string& text, const std::string& source = "CSV")
{
    CsvDocument doc;
    std::istringstream in(text);
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (detail::trim(line).empty())
            continue;
        auto cells = detail::split_csv_line(line, line_number);
        if (doc.header.empty()) {
            doc.header = std::move(cells);
            continue;
        }
        require(cells.size() == doc.header.size(), ErrorCode::io,
            source + " line " + std::to_string(line_number) + ": expected " + std::to_string(doc.header.size())
                + " fields, found " + std::to_string(cells.size()));
        doc.rows.push_back(std::move(cells));
        doc.line_numbers.push_back(line_number);
    }
    require(!doc.header.empty(), ErrorCode::io, source + " is empty (a header row is required)");
    return doc;
}

inline CsvDocument read_csv(const std::filesystem::path& path) { return parse_csv(read_text(path), path.string()); }

/// Accepts YYYY-MM-DD calendar dates only.
inline bool is_iso_date(std::string_view s)
{
    if (s.size() != 10 || s[4] != '-' || s[7] != '-')
        return false;
    int y = 0;
    unsigned m = 0;
    unsigned d = 0;
    auto num = [&](std::size_t pos, std::size_t len, auto& out) {
        const auto r = std::from_chars(s.data() + pos, s.data() + pos + len, out);
        return r.ec == std::errc{} && r.ptr == s.data() + pos + len;
    };
    if (!num(0, 4, y) || !num(5, 2, m) || !num(8, 2, d))
        return false;
    return std::chrono::year_month_day(std::chrono::year(y), std::chrono::month(m), std::chrono::day(d)).ok();
}

/// ISO date `days` after `start`.
inline std::string add_days(const std::string& start, long days)
{
    require(is_iso_date(start), ErrorCode::configuration, "'" + start + "' is not a YYYY-MM-DD date");
    int y = std::stoi(start.substr(0, 4));
    const unsigned m = static_cast<unsigned>(std::stoi(start.substr(5, 2)));
    const unsigned d = static_cast<unsigned>(std::stoi(start.substr(8, 2)));
    const std::chrono::sys_days base{std::chrono::year(y) / std::chrono::month(m) / std::chrono::day(d)};
    const std::chrono::year_month_day out{base + std::chrono::days(days)};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(out.year()), static_cast<unsigned>(out.month()),
        static_cast<unsigned>(out.day()));
    return buf;
}

// --- return series ----------------------------------------------------------

enum class IngestMode { prices, returns };

inline IngestMode parse_ingest_mode(std::string_view text)
{
    if (text == "prices")
        return IngestMode::prices;
    if (text == "returns")
        return IngestMode::returns;
    fail(ErrorCode::configuration, "data mode must be 'prices' or 'returns', got '" + std::string(text) + "'");
}

struct IngestOptions {
    std::string date_column = "date";
    std::vector<std::string> columns; // empty: every column except the date
    IngestMode mode = IngestMode::returns;
};

/// Aligned log-returns y (T x d) for one or more assets.
struct ReturnSeries {
    std::vector<std::string> assets;
    std::vector<std::string> dates;
    Eigen::MatrixXd returns;

    std::size_t length() const noexcept { return dates.size(); }
    Eigen::VectorXd asset(std::size_t i) const { return returns.col(static_cast<Eigen::Index>(i)); }
};

/// Builds a return series from a parsed CSV; prices become y_t = 100 (log s_t - log s_{t-1}).
inline ReturnSeries ingest_csv(const CsvDocument& doc, const IngestOptions& options)
{
    const std::size_t date_col = doc.column(options.date_column);
    std::vector<std::size_t> value_cols;
    std::vector<std::string> names;
    if (options.columns.empty()) {
        for (std::size_t i = 0; i < doc.header.size(); ++i)
            if (i != date_col) {
                value_cols.push_back(i);
                names.push_back(doc.header[i]);
            }
    } else {
        for (const auto& c : options.columns) {
            value_cols.push_back(doc.column(c));
            names.push_back(c);
        }
    }
    require(!value_cols.empty(), ErrorCode::io, "CSV has no value columns");

    const std::size_t n = doc.rows.size();
    const std::size_t d = value_cols.size();
    Eigen::MatrixXd values(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    std::vector<std::string> dates(n);
    for (std::size_t r = 0; r < n; ++r) {
        const std::string where = "row " + std::to_string(doc.line_numbers[r]);
        dates[r] = doc.rows[r][date_col];
        require(is_iso_date(dates[r]), ErrorCode::io, where + ": unparseable date '" + dates[r] + "' (want YYYY-MM-DD)");
        if (r > 0)
            require(dates[r] > dates[r - 1], ErrorCode::io,
                where + ": dates must be strictly increasing ('" + dates[r] + "' after '" + dates[r - 1] + "')");
        for (std::size_t j = 0; j < d; ++j) {
            const std::string& text = doc.rows[r][value_cols[j]];
            require(!text.empty(), ErrorCode::io, where + ": missing value for '" + names[j] + "'");
            const double v = parse_double(text, where + " column '" + names[j] + "'");
            require(std::isfinite(v), ErrorCode::io, where + ": non-finite value for '" + names[j] + "'");
            values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = v;
        }
    }

    ReturnSeries out;
    out.assets = names;
    if (options.mode == IngestMode::returns) {
        require(n >= 1, ErrorCode::io, "return series is empty");
        out.dates = std::move(dates);
        out.returns = std::move(values);
        return out;
    }

    require(n >= 2, ErrorCode::io, "price mode needs at least two rows");
    std::vector<std::size_t> bad;
    for (std::size_t r = 0; r < n; ++r)
        if ((values.row(static_cast<Eigen::Index>(r)).array() <= 0.0).any())
            bad.push_back(doc.line_numbers[r]);
    if (!bad.empty()) {
        std::string rows;
        for (std::size_t i = 0; i < bad.size(); ++i)
            rows += (i ? ", " : "") + std::to_string(bad[i]);
        fail(ErrorCode::io, "non-positive prices on rows " + rows);
    }
    const Eigen::MatrixXd logs = values.unaryExpr([](double v) { return std::log(v); });
    out.returns = 100.0 * (logs.bottomRows(logs.rows() - 1) - logs.topRows(logs.rows() - 1));
    out.dates.assign(dates.begin() + 1, dates.end());
    return out;
}

inline ReturnSeries ingest_csv(const std::filesystem::path& path, const IngestOptions& options)
{
    return ingest_csv(read_csv(path), options);
}

} // namespace gpoabc

#endif
