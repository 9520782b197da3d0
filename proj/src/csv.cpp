#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "causalmon/dataset.hpp"
#include "causalmon/error.hpp"

namespace causalmon {
namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return s;
}

std::vector<std::string_view> split_line(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(',', start);
        cells.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return cells;
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

bool is_missing(std::string_view cell) {
    if (cell.empty()) return true;
    const auto l = lower(cell);
    return l == "nan" || l == "na" || l == "null";
}

std::optional<double> parse_number(std::string_view cell) {
    if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
    double v = 0.0;
    const auto* end = cell.data() + cell.size();
    const auto [ptr, ec] = std::from_chars(cell.data(), end, v);
    if (ec != std::errc() || ptr != end || !std::isfinite(v)) return std::nullopt;
    return v;
}

int parse_label(std::string_view cell) {
    const auto l = lower(cell);
    if (l.empty() || l == "0" || l == "normal" || l == "false") return 0;
    if (const auto v = parse_number(cell); v && *v == std::floor(*v)) return static_cast<int>(*v);
    return 1;
}

// Howard Hinnant's days_from_civil.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const auto yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

}  // namespace

double parse_timestamp(std::string_view text) {
    text = trim(text);
    if (const auto v = parse_number(text)) return *v;
    int year = 0, month = 0, day = 0, hour = 0, minute = 0;
    double second = 0.0;
    char sep = 0;
    const std::string s(text);
    const int n = std::sscanf(s.c_str(), "%4d-%2d-%2d%c%2d:%2d:%lf", &year, &month, &day, &sep, &hour,
                              &minute, &second);
    const bool date_only = n == 3;
    if (!date_only && (n < 6 || (sep != 'T' && sep != ' '))) {
        throw InputError("unrecognized timestamp '" + s + "'");
    }
    if (month < 1 || month > 12 || day < 1 || day > 31 || hour > 23 || minute > 59 || second >= 61.0) {
        throw InputError("timestamp out of range '" + s + "'");
    }
    const auto days = days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day));
    return static_cast<double>(days) * 86400.0 + hour * 3600.0 + minute * 60.0 + second;
}

TimeSeriesDataset parse_csv(std::istream& in, const CsvSchema& schema, std::string_view source_name,
                            std::vector<int>* labels) {
    const std::string source(source_name);
    std::string line;
    if (!std::getline(in, line)) throw InputError(source + ": empty file, header row expected");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (!line.empty() && line.back() == '\r') line.pop_back();

    const auto header = split_line(line);
    std::optional<std::size_t> ts_col, label_col;
    std::vector<std::size_t> value_cols;
    std::vector<std::string> names;
    std::unordered_set<std::string> seen;
    for (std::size_t c = 0; c < header.size(); ++c) {
        const std::string name(header[c]);
        if (schema.timestamp_column && name == *schema.timestamp_column) {
            ts_col = c;
            continue;
        }
        if (schema.label_column && name == *schema.label_column) {
            label_col = c;
            continue;
        }
        if (std::find(schema.ignore_columns.begin(), schema.ignore_columns.end(), name) !=
            schema.ignore_columns.end()) {
            continue;
        }
        if (name.empty()) throw InputError(source + ": empty column name at column " + std::to_string(c + 1));
        if (!seen.insert(name).second) throw InputError(source + ": duplicate variable name '" + name + "'");
        names.push_back(name);
        value_cols.push_back(c);
    }
    if (schema.timestamp_column && !ts_col) {
        throw InputError(source + ": timestamp column '" + *schema.timestamp_column + "' not found");
    }
    if (schema.label_column && !label_col) {
        throw InputError(source + ": label column '" + *schema.label_column + "' not found");
    }
    if (names.empty()) throw InputError(source + ": no value columns");

    std::vector<double> data;
    std::vector<double> stamps;
    std::vector<int> row_labels;
    std::vector<double> previous(names.size(), std::numeric_limits<double>::quiet_NaN());
    std::size_t line_no = 1;
    std::size_t n_rows = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        const auto cells = split_line(line);
        if (cells.size() != header.size()) {
            throw InputError(source + ": line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                             " cells, header has " + std::to_string(header.size()));
        }
        for (std::size_t k = 0; k < value_cols.size(); ++k) {
            const auto cell = cells[value_cols[k]];
            double v = 0.0;
            if (is_missing(cell)) {
                if (schema.missing == MissingPolicy::kReject || std::isnan(previous[k])) {
                    throw InputError(source + ": missing value at line " + std::to_string(line_no) + ", column '" +
                                     names[k] + "'");
                }
                v = previous[k];
            } else if (const auto parsed = parse_number(cell)) {
                v = *parsed;
            } else {
                throw InputError(source + ": non-numeric cell '" + std::string(cell) + "' at line " +
                                 std::to_string(line_no) + ", column '" + names[k] + "'");
            }
            previous[k] = v;
            data.push_back(v);
        }
        if (ts_col) stamps.push_back(parse_timestamp(cells[*ts_col]));
        if (label_col) row_labels.push_back(parse_label(cells[*label_col]));
        ++n_rows;
    }
    if (n_rows < 2) throw InputError(source + ": fewer than 2 data rows");

    TimeSeriesDataset ds;
    ds.names = std::move(names);
    ds.values = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        data.data(), static_cast<Index>(n_rows), static_cast<Index>(ds.names.size()));
    if (ts_col) {
        std::vector<double> diffs;
        diffs.reserve(stamps.size() - 1);
        for (std::size_t i = 1; i < stamps.size(); ++i) diffs.push_back(stamps[i] - stamps[i - 1]);
        std::nth_element(diffs.begin(), diffs.begin() + static_cast<std::ptrdiff_t>(diffs.size() / 2), diffs.end());
        ds.dt = diffs[diffs.size() / 2];
        if (!(ds.dt > 0.0)) throw InputError(source + ": timestamps must increase");
    }
    if (labels) *labels = std::move(row_labels);
    ds.validate();
    return ds;
}

TimeSeriesDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema, std::vector<int>* labels) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    return parse_csv(in, schema, path.string(), labels);
}

void write_csv(std::ostream& out, const TimeSeriesDataset& ds) {
    for (std::size_t c = 0; c < ds.names.size(); ++c) out << (c ? "," : "") << ds.names[c];
    out << '\n';
    char buf[32];
    for (Index r = 0; r < ds.rows(); ++r) {
        for (Index c = 0; c < ds.cols(); ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", ds.values(r, c));
            if (c) out << ',';
            out << buf;
        }
        out << '\n';
    }
}

void write_csv(const std::filesystem::path& path, const TimeSeriesDataset& ds) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path.string());
    write_csv(out, ds);
}

}  // namespace causalmon
