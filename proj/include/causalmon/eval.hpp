#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "causalmon/json_io.hpp"

namespace causalmon {

/// 2PR / (P + R), or 0 when both are 0.
double f1_score(double precision, double recall);

struct MetricCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;

    /// Recomputes precision, recall and f1 from the counts.
    void finalize();
};

struct DetectionMetrics : MetricCounts {
    std::map<int, MetricCounts> per_anomaly; ///< keyed by label id; fp is always 0
    std::optional<double> mean_detection_delay; ///< rows from episode start, detected episodes only
};

/// An alarm covering raw rows [start, end].
struct AlarmSpan {
    std::int64_t start = 0;
    std::int64_t end = 0;
};

struct WindowPolicy {
    std::int64_t grace = 0;   ///< rows after an episode in which an alarm still counts
    bool point_level = false; ///< score rows instead of episodes
};

/// Episodes are maximal runs of one non-zero label. Event level: an episode is
/// a TP when some alarm overlaps [start, end + grace], otherwise a FN; every
/// alarm overlapping no episode is a FP. Point level: rows covered by alarms
/// against labeled rows. Throws InputError on empty labels or alarms past the
/// labeled horizon.
DetectionMetrics evaluate(const std::vector<AlarmSpan>& alarms, const std::vector<int>& labels,
                          const WindowPolicy& policy = {});

/// Reads a JSON-lines alarm log, taking source_index and end_source_index
/// (default: source_index) from each line. Blank lines are skipped.
std::vector<AlarmSpan> read_alarm_log(std::istream& in);
std::vector<AlarmSpan> read_alarm_log(const std::filesystem::path& path);

/// Reads the `label` column of a CSV file. When an `index` column exists the
/// labels are placed at those positions and gaps are 0.
std::vector<int> read_labels(const std::filesystem::path& path);

json metrics_to_json(const DetectionMetrics& m);
DetectionMetrics metrics_from_json(const json& j);
std::string metrics_markdown(const DetectionMetrics& m);

}  // namespace causalmon
