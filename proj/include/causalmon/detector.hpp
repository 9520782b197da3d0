#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "causalmon/discovery.hpp"
#include "causalmon/json_io.hpp"

namespace causalmon {

/// Per-link tolerances, indexed like CausalModel::links.
struct ThresholdMatrix {
    std::vector<double> values;
    std::int64_t horizon = 0;      ///< raw calibration rows
    Index warmup = 0;              ///< subsampled rows before the first checkpoint
    Index checkpoints = 0;         ///< checkpoints that contributed
    std::optional<int> window;     ///< sliding window used during calibration

    /// Throws InputError unless there is one finite, non-negative value per link.
    void validate(const CausalModel& model) const;
};

/// Threshold files are a flat object "src:dst:lag" -> value.
json thresholds_to_json(const CausalModel& model, const ThresholdMatrix& thresholds);
ThresholdMatrix thresholds_from_json(const json& j, const CausalModel& model);

enum class AlarmMode {
    kStopOnFirst, ///< the stream refuses further samples after the first alarm
    kContinuous,  ///< every violating checkpoint reports an alarm
};

/// Which links feed a variable's root-cause score.
enum class RootSide {
    kParent, ///< links leaving the variable
    kChild,  ///< links entering the variable
};

/// Which checkpoint errors feed the root-cause scores.
enum class ErrorScope {
    kBrokenLinks, ///< only errors of links above their threshold at that checkpoint
    kAllLinks,    ///< every link at every checkpoint since the stream started
};

struct DetectorConfig {
    AlarmMode mode = AlarmMode::kStopOnFirst;
    std::optional<int> window; ///< regression over the last `window` rows instead of all
    RootSide side = RootSide::kParent;
    ErrorScope scope = ErrorScope::kBrokenLinks;
};

struct BrokenLink {
    std::size_t link = 0; ///< index into CausalModel::links
    int src = 0;
    int dst = 0;
    int lag = 1;
    double error = 0.0; ///< |online - normal| coefficient
    double threshold = 0.0;
};

struct RootScore {
    int var = 0;
    double score = 0.0;
};

/// One violating checkpoint, or a run of consecutive ones after coalescing.
struct AnomalyAlarm {
    Index step = 0;                ///< subsampled row index of the first checkpoint
    std::int64_t source_index = 0; ///< raw row index of the first checkpoint
    Index end_step = 0;
    std::int64_t end_source_index = 0;
    std::vector<BrokenLink> broken; ///< ascending link index
    std::vector<RootScore> roots;   ///< descending score
};

json alarm_to_json(const CausalModel& model, const AnomalyAlarm& alarm);
AnomalyAlarm alarm_from_json(const json& j, const CausalModel& model);

/// Cumulative squared coefficient errors per link since the stream started.
struct ErrorHistory {
    std::vector<double> sum_squares;        ///< all checkpoints
    std::vector<double> broken_sum_squares; ///< checkpoints where the link exceeded its threshold
    Index checkpoints = 0;

    void add(std::span<const double> errors, std::span<const double> thresholds);
};

/// Variable scores sqrt(sum of squared link errors), summed over the links on
/// `side` of each variable. Sorted by descending score, ties by index.
/// Throws InputError when no checkpoint has been recorded.
std::vector<RootScore> rank_root_causes(const CausalModel& model, const ErrorHistory& history,
                                        RootSide side = RootSide::kParent,
                                        ErrorScope scope = ErrorScope::kBrokenLinks);

/// Subsampled rows required before the first checkpoint:
/// tau_max + max parent count + 5.
Index warmup_length(const CausalModel& model);

/// Turns raw input rows into standardized, subsampled model rows using the
/// model's preprocess report.
class StreamPreprocessor {
public:
    /// `input_names` is the column order of pushed rows; empty means the
    /// model's own variable order.
    StreamPreprocessor(const CausalModel& model, std::vector<std::string> input_names = {});

    /// Returns the new model row when one completes. Throws InputError on a
    /// row of the wrong length or with non-finite values.
    std::optional<Eigen::VectorXd> push(std::span<const double> row);

    std::size_t input_width() const { return width_; }
    /// Raw row index of the most recently completed model row.
    std::int64_t last_source_index() const { return last_source_; }
    std::int64_t rows_seen() const { return seen_; }

private:
    std::vector<Index> columns_;
    std::vector<Scaling> scaling_;
    std::size_t width_ = 0;
    int t_s_ = 1;
    bool pool_ = false;
    Eigen::VectorXd block_;
    std::int64_t seen_ = 0;
    std::int64_t last_source_ = -1;
};

/// Incremental least-squares estimate of every model link coefficient.
/// Keeps running means and co-moments per target and solves the normal
/// equations at each checkpoint.
class CoefficientTracker {
public:
    CoefficientTracker(const CausalModel& model, std::optional<int> window = std::nullopt);

    /// Appends one standardized model row. Returns the coefficients (indexed
    /// like model links) when the buffer has reached the warmup length.
    std::optional<std::vector<double>> push(const Eigen::VectorXd& row);

    Index rows() const { return rows_; }
    Index warmup() const { return warmup_; }
    /// Regression rows currently accumulated.
    Index regression_rows() const;
    /// True when the last solve needed the ridge fallback for some target.
    bool regularized() const { return regularized_; }

private:
    struct Target {
        int var = 0;
        std::size_t first_link = 0;
        std::vector<LagVar> parents;
        Index n = 0;
        Eigen::VectorXd mean;   ///< parents..., target
        Eigen::MatrixXd comom;  ///< centered co-moments
    };

    Eigen::VectorXd sample(const Target& target, Index row) const;
    const Eigen::VectorXd& at(Index row) const;

    int tau_max_ = 1;
    std::size_t n_links_ = 0;
    std::optional<int> window_;
    Index warmup_ = 0;
    Index rows_ = 0;
    bool regularized_ = false;
    std::vector<Target> targets_;
    std::deque<Eigen::VectorXd> buffer_; ///< trailing rows, newest last
};

/// Least-squares coefficients on `buffer` (standardized model rows) from
/// scratch, using rows [tau_max, T) or the last `window` of them.
std::vector<double> online_coefficients(const Eigen::MatrixXd& buffer, const CausalModel& model,
                                        std::optional<int> window = std::nullopt);

/// Aggregates a checkpoint-by-link error table:
/// max(sqrt(sum e^2), max |e|) per link; the second term only guards
/// against rounding.
std::vector<double> thresholds_from_errors(const std::vector<std::vector<double>>& errors, std::size_t n_links);

/// Runs the detection engine over the normal stream `normal` (raw, in the
/// model's input space) and collects the thresholds. Throws
/// InsufficientSamples when the stream never reaches the warmup length.
ThresholdMatrix calibrate(const TimeSeriesDataset& normal, const CausalModel& model,
                          std::optional<int> window = std::nullopt);

/// Online detector for one stream. Single writer; const accessors may be
/// read between pushes.
class Detector {
public:
    Detector(CausalModel model, ThresholdMatrix thresholds, DetectorConfig config = {},
             std::vector<std::string> input_names = {});

    /// Feeds one raw row. Returns an alarm when the row completes a checkpoint
    /// at which some link error exceeds its threshold. Throws StreamStopped
    /// in stop-on-first mode once an alarm has been raised.
    std::optional<AnomalyAlarm> push_sample(std::span<const double> row);

    bool stopped() const { return stopped_; }
    /// True when the last push was a checkpoint.
    bool at_checkpoint() const { return at_checkpoint_; }
    std::int64_t rows_seen() const { return pre_.rows_seen(); }
    Index model_rows() const { return tracker_.rows(); }
    /// Latest online coefficients, empty before the warmup.
    const std::vector<double>& coefficients() const { return coeffs_; }
    const ErrorHistory& history() const { return history_; }
    std::vector<RootScore> ranking() const { return rank_root_causes(model_, history_, config_.side, config_.scope); }
    const CausalModel& model() const { return model_; }

private:
    CausalModel model_;
    ThresholdMatrix thresholds_;
    DetectorConfig config_;
    StreamPreprocessor pre_;
    CoefficientTracker tracker_;
    std::vector<double> coeffs_;
    ErrorHistory history_;
    bool stopped_ = false;
    bool at_checkpoint_ = false;
};

/// Merges consecutive violating checkpoints of a continuous stream into
/// episodes. The broken set is the union with the largest error seen per
/// link; roots are those of the last checkpoint.
class EpisodeCoalescer {
public:
    /// Call once per checkpoint. Returns an episode when a clean checkpoint
    /// closes it.
    std::optional<AnomalyAlarm> on_checkpoint(const std::optional<AnomalyAlarm>& alarm);
    /// Closes the open episode at stream end.
    std::optional<AnomalyAlarm> finish();

private:
    std::optional<AnomalyAlarm> open_;
};

}  // namespace causalmon
