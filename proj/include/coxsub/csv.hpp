#pragma once

// CSV ingestion and export for survival cohorts.
//
// Dialect: comma separated, mandatory header row, '.' decimal point,
// optional double quotes around fields. Empty fields and NA are missing.

#include "coxsub/errors.hpp"
#include "coxsub/survival_data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace coxsub {

struct CovariateSpec {
    std::string column;
    bool categorical = false;  // expand to 0/1 dummies, first sorted level is the baseline
    bool median_fill = false;  // replace missing numeric cells by the column median
};

struct CsvSchema {
    std::string time_col;
    std::string status_col;
    std::vector<CovariateSpec> covariates;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

/// Splits one CSV line. Quoted fields may contain commas and doubled quotes.
inline std::vector<std::string> split_csv_line(std::string_view line, std::size_t line_no) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    bool was_quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
            was_quoted = true;
        } else if (c == ',') {
            fields.push_back(was_quoted ? cur : std::string(trim(cur)));
            cur.clear();
            was_quoted = false;
        } else {
            cur.push_back(c);
        }
    }
    if (quoted) throw DataError("line " + std::to_string(line_no) + ": unterminated quote");
    fields.push_back(was_quoted ? cur : std::string(trim(cur)));
    return fields;
}

inline bool is_missing(std::string_view s) { return s.empty() || s == "NA" || s == "na" || s == "N/A"; }

inline std::optional<double> parse_double(std::string_view s) {
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

inline double median(std::vector<double> v) {
    const auto n = v.size();
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (n % 2 == 1) return *mid;
    const double hi = *mid;
    const double lo = *std::max_element(v.begin(), mid);
    return 0.5 * (lo + hi);
}

inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

}  // namespace detail

/**
 * Parses a cohort from CSV text. `source` labels error messages.
 *
 * Throws DataError on: empty input, missing header columns, unparseable
 * or non-finite numeric cells, status values other than 0/1, and missing
 * covariate cells in columns without median fill.
 */
inline Cohort parse_csv(std::istream& in, const CsvSchema& schema, const std::string& source = "input") {
    if (schema.time_col.empty() || schema.status_col.empty())
        throw DataError("schema must name a time column and a status column");
    if (schema.covariates.empty()) throw DataError("schema must name at least one covariate column");

    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++line_no;
        if (!detail::trim(line).empty()) {
            header = detail::split_csv_line(line, line_no);
            break;
        }
    }
    if (header.empty()) throw DataError(source + ": empty file");
    if (line_no == 1 && header.front().starts_with("\xEF\xBB\xBF")) header.front().erase(0, 3);

    auto column = [&](const std::string& name) -> std::size_t {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw DataError(source + ": column '" + name + "' not found in header");
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t time_idx = column(schema.time_col);
    const std::size_t status_idx = column(schema.status_col);
    std::vector<std::size_t> cov_idx;
    for (const auto& c : schema.covariates) cov_idx.push_back(column(c.column));

    const std::size_t q = schema.covariates.size();
    std::vector<double> times;
    std::vector<std::uint8_t> status;
    std::vector<std::vector<std::optional<double>>> numeric(q);
    std::vector<std::vector<std::string>> levels(q);
    std::vector<std::size_t> row_lines;

    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split_csv_line(line, line_no);
        const std::string where = source + ": line " + std::to_string(line_no);
        if (fields.size() != header.size())
            throw DataError(where + ": expected " + std::to_string(header.size()) + " fields, found " +
                            std::to_string(fields.size()));

        const auto t = detail::parse_double(fields[time_idx]);
        if (!t || !std::isfinite(*t) || *t < 0.0)
            throw DataError(where + ": invalid time '" + fields[time_idx] + "'");
        const auto s = detail::parse_double(fields[status_idx]);
        if (!s || (*s != 0.0 && *s != 1.0))
            throw DataError(where + ": status must be 0 or 1, found '" + fields[status_idx] + "'");
        times.push_back(*t);
        status.push_back(static_cast<std::uint8_t>(*s));
        row_lines.push_back(line_no);

        for (std::size_t c = 0; c < q; ++c) {
            const std::string& cell = fields[cov_idx[c]];
            const auto& spec = schema.covariates[c];
            if (spec.categorical) {
                if (detail::is_missing(cell)) throw DataError(where + ": missing categorical value in '" + spec.column + "'");
                levels[c].push_back(cell);
                continue;
            }
            if (detail::is_missing(cell)) {
                if (!spec.median_fill)
                    throw DataError(where + ": missing value in '" + spec.column + "' (median fill disabled)");
                numeric[c].push_back(std::nullopt);
                continue;
            }
            const auto v = detail::parse_double(cell);
            if (!v || !std::isfinite(*v))
                throw DataError(where + ": unparseable value '" + cell + "' in '" + spec.column + "'");
            numeric[c].push_back(*v);
        }
    }
    if (times.empty()) throw DataError(source + ": no data rows");

    const auto n = static_cast<Index>(times.size());
    std::vector<Eigen::VectorXd> columns;
    std::vector<std::string> names;
    for (std::size_t c = 0; c < q; ++c) {
        const auto& spec = schema.covariates[c];
        if (spec.categorical) {
            std::vector<std::string> distinct = levels[c];
            std::sort(distinct.begin(), distinct.end());
            distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
            for (std::size_t l = 1; l < distinct.size(); ++l) {
                Eigen::VectorXd col(n);
                for (Index i = 0; i < n; ++i) col(i) = levels[c][static_cast<std::size_t>(i)] == distinct[l] ? 1.0 : 0.0;
                columns.push_back(std::move(col));
                names.push_back(spec.column + "=" + distinct[l]);
            }
            continue;
        }
        std::vector<double> present;
        for (const auto& v : numeric[c]) {
            if (v) present.push_back(*v);
        }
        if (present.empty()) throw DataError(source + ": column '" + spec.column + "' has no observed values");
        const double fill = present.size() < numeric[c].size() ? detail::median(present) : 0.0;
        Eigen::VectorXd col(n);
        for (Index i = 0; i < n; ++i) col(i) = numeric[c][static_cast<std::size_t>(i)].value_or(fill);
        columns.push_back(std::move(col));
        names.push_back(spec.column);
    }
    if (columns.empty()) throw DataError(source + ": schema produced no covariate columns");

    RowMatrix z(n, static_cast<Index>(columns.size()));
    for (std::size_t j = 0; j < columns.size(); ++j) z.col(static_cast<Index>(j)) = columns[j];
    Eigen::VectorXd time = Eigen::Map<Eigen::VectorXd>(times.data(), n);
    return Cohort::make(std::move(z), std::move(time), std::move(status), std::move(names));
}

inline Cohort load_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    return parse_csv(in, schema, path);
}

/// Writes `time,status,<covariates...>` with shortest round-trip formatting.
inline void write_csv(std::ostream& out, const Cohort& cohort) {
    out << "time,status";
    for (const auto& name : cohort.names) out << ',' << name;
    out << '\n';
    for (Index i = 0; i < cohort.size(); ++i) {
        out << detail::format_double(cohort.time(i)) << ',' << static_cast<int>(cohort.status[static_cast<std::size_t>(i)]);
        for (Index j = 0; j < cohort.dim(); ++j) out << ',' << detail::format_double(cohort.z(i, j));
        out << '\n';
    }
}

inline void write_csv(const std::string& path, const Cohort& cohort) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    write_csv(out, cohort);
}

/// Schema matching the layout produced by write_csv.
inline CsvSchema default_schema(const std::vector<std::string>& covariate_names) {
    CsvSchema s{"time", "status", {}};
    for (const auto& n : covariate_names) s.covariates.push_back({n, false, false});
    return s;
}

}  // namespace coxsub
