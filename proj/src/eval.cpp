#include "causalmon/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "causalmon/error.hpp"

namespace causalmon {
namespace {

struct Episode {
    int id = 0;
    std::int64_t start = 0;
    std::int64_t end = 0;
};

std::vector<Episode> episodes(const std::vector<int>& labels) {
    std::vector<Episode> out;
    for (std::size_t t = 0; t < labels.size(); ++t) {
        const int id = labels[t];
        if (id == 0) continue;
        const auto i = static_cast<std::int64_t>(t);
        if (!out.empty() && out.back().id == id && out.back().end == i - 1) {
            out.back().end = i;
        } else {
            out.push_back({id, i, i});
        }
    }
    return out;
}

bool overlaps(const AlarmSpan& a, std::int64_t lo, std::int64_t hi) { return a.start <= hi && a.end >= lo; }

json counts_to_json(const MetricCounts& c) {
    return {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}};
}

MetricCounts counts_from_json(const json& j) {
    MetricCounts c;
    c.tp = j.at("tp").get<std::int64_t>();
    c.fp = j.at("fp").get<std::int64_t>();
    c.fn = j.at("fn").get<std::int64_t>();
    if (c.tp < 0 || c.fp < 0 || c.fn < 0) throw InputError("metric counts must be non-negative");
    c.finalize();
    return c;
}

std::string percent(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", 100.0 * v);
    return buf;
}

}  // namespace

double f1_score(double precision, double recall) {
    const double s = precision + recall;
    return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

void MetricCounts::finalize() {
    precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    f1 = f1_score(precision, recall);
}

DetectionMetrics evaluate(const std::vector<AlarmSpan>& alarms, const std::vector<int>& labels,
                          const WindowPolicy& policy) {
    if (labels.empty()) throw InputError("labels are empty");
    if (policy.grace < 0) throw InputError("grace window must be >= 0");
    const auto horizon = static_cast<std::int64_t>(labels.size());
    for (const auto& a : alarms) {
        if (a.start < 0 || a.end < a.start) throw InputError("alarm span is malformed");
        if (a.start >= horizon) throw InputError("alarm at row " + std::to_string(a.start) + " is past the labels");
    }

    DetectionMetrics m;
    const auto eps = episodes(labels);
    if (policy.point_level) {
        std::vector<char> hit(labels.size(), 0);
        for (const auto& a : alarms) {
            std::fill(hit.begin() + a.start, hit.begin() + std::min(a.end, horizon - 1) + 1, 1);
        }
        for (std::size_t t = 0; t < labels.size(); ++t) {
            if (labels[t] != 0 && hit[t]) ++m.tp;
            if (labels[t] == 0 && hit[t]) ++m.fp;
            if (labels[t] != 0 && !hit[t]) ++m.fn;
        }
        for (const auto& e : eps) {
            auto& c = m.per_anomaly[e.id];
            for (auto t = e.start; t <= e.end; ++t) ++(hit[static_cast<std::size_t>(t)] ? c.tp : c.fn);
        }
    } else {
        double delay_sum = 0.0;
        std::int64_t detected = 0;
        for (const auto& e : eps) {
            std::optional<std::int64_t> first;
            for (const auto& a : alarms) {
                if (overlaps(a, e.start, e.end + policy.grace)) first = std::min(first.value_or(a.start), a.start);
            }
            auto& c = m.per_anomaly[e.id];
            if (first) {
                ++m.tp;
                ++c.tp;
                delay_sum += static_cast<double>(std::max<std::int64_t>(0, *first - e.start));
                ++detected;
            } else {
                ++m.fn;
                ++c.fn;
            }
        }
        for (const auto& a : alarms) {
            const bool inside = std::any_of(eps.begin(), eps.end(), [&](const Episode& e) {
                return overlaps(a, e.start, e.end + policy.grace);
            });
            if (!inside) ++m.fp;
        }
        if (detected > 0) m.mean_detection_delay = delay_sum / static_cast<double>(detected);
    }
    m.finalize();
    for (auto& [id, c] : m.per_anomaly) c.finalize();
    return m;
}

std::vector<AlarmSpan> read_alarm_log(std::istream& in) {
    std::vector<AlarmSpan> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = json::parse(line);
            AlarmSpan a;
            a.start = j.at("source_index").get<std::int64_t>();
            a.end = j.value("end_source_index", a.start);
            out.push_back(a);
        } catch (const json::exception& e) {
            throw InputError("alarm log line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::vector<AlarmSpan> read_alarm_log(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    return read_alarm_log(in);
}

std::vector<int> read_labels(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    auto cells_of = [](std::string line) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) {
            const auto b = c.find_first_not_of(" \t\"");
            const auto e = c.find_last_not_of(" \t\"");
            cells.push_back(b == std::string::npos ? std::string() : c.substr(b, e - b + 1));
        }
        return cells;
    };
    std::string line;
    if (!std::getline(in, line)) throw InputError(path.string() + ": empty labels file");
    const auto cols = cells_of(line);
    const auto label_pos = static_cast<std::size_t>(std::find(cols.begin(), cols.end(), "label") - cols.begin());
    const auto index_pos = static_cast<std::size_t>(std::find(cols.begin(), cols.end(), "index") - cols.begin());
    if (label_pos == cols.size()) throw InputError(path.string() + ": no 'label' column");

    std::vector<std::pair<std::int64_t, int>> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        const auto cells = cells_of(line);
        if (cells.empty() || (cells.size() == 1 && cells[0].empty())) continue;
        const auto where = path.string() + ": line " + std::to_string(line_no);
        if (cells.size() != cols.size()) throw InputError(where + " has the wrong number of cells");
        std::int64_t index = static_cast<std::int64_t>(rows.size());
        int label = 0;
        try {
            std::size_t used = 0;
            const auto& l = cells[label_pos];
            label = std::stoi(l, &used);
            if (used != l.size()) throw std::invalid_argument(l);
            if (index_pos < cols.size()) index = std::stoll(cells[index_pos]);
        } catch (const std::logic_error&) {
            throw InputError(where + ": label and index must be integers");
        }
        if (label < 0 || index < 0) throw InputError(where + ": label and index must be non-negative");
        rows.emplace_back(index, label);
    }
    if (rows.empty()) throw InputError(path.string() + ": no labels");
    std::int64_t last = 0;
    for (const auto& r : rows) last = std::max(last, r.first);
    std::vector<int> placed(static_cast<std::size_t>(last + 1), 0);
    for (const auto& [index, label] : rows) placed[static_cast<std::size_t>(index)] = label;
    return placed;
}

json metrics_to_json(const DetectionMetrics& m) {
    json j = counts_to_json(m);
    json per = json::object();
    for (const auto& [id, c] : m.per_anomaly) per[std::to_string(id)] = counts_to_json(c);
    j["per_anomaly"] = per;
    j["mean_detection_delay"] = m.mean_detection_delay ? json(*m.mean_detection_delay) : json(nullptr);
    return j;
}

DetectionMetrics metrics_from_json(const json& j) {
    DetectionMetrics m;
    try {
        static_cast<MetricCounts&>(m) = counts_from_json(j);
        const json per = j.value("per_anomaly", json::object());
        for (const auto& [id, c] : per.items()) {
            m.per_anomaly[std::stoi(id)] = counts_from_json(c);
        }
        if (j.contains("mean_detection_delay") && !j.at("mean_detection_delay").is_null()) {
            m.mean_detection_delay = j.at("mean_detection_delay").get<double>();
        }
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed metrics: ") + e.what());
    } catch (const std::logic_error&) {
        throw InputError("malformed metrics: bad anomaly id");
    }
    return m;
}

std::string metrics_markdown(const DetectionMetrics& m) {
    std::ostringstream out;
    out << "| scope | TP | FP | FN | Pr (%) | Rec (%) | F1 (%) |\n";
    out << "|---|---|---|---|---|---|---|\n";
    auto row = [&](const std::string& name, const MetricCounts& c) {
        out << "| " << name << " | " << c.tp << " | " << c.fp << " | " << c.fn << " | " << percent(c.precision)
            << " | " << percent(c.recall) << " | " << percent(c.f1) << " |\n";
    };
    row("all", m);
    for (const auto& [id, c] : m.per_anomaly) row("anomaly " + std::to_string(id), c);
    if (m.mean_detection_delay) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.2f", *m.mean_detection_delay);
        out << "\nMean detection delay: " << buf << " rows\n";
    }
    return out.str();
}

}  // namespace causalmon
