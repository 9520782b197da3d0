#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "causalmon/json_io.hpp"

namespace causalmon {

using Index = Eigen::Index;

/// T x N observation matrix, one column per variable.
struct TimeSeriesDataset {
    Eigen::MatrixXd values;
    std::vector<std::string> names;
    double dt = 1.0;               ///< seconds between consecutive rows
    std::int64_t origin_index = 0; ///< row offset into the source recording

    Index rows() const { return values.rows(); }
    Index cols() const { return values.cols(); }

    /// Throws InputError unless names are unique, dt > 0, T >= 2 and all
    /// values are finite.
    void validate() const;

    std::optional<Index> column(std::string_view name) const;

    /// Columns `wanted`, in that order. Throws InputError on unknown names.
    TimeSeriesDataset select(std::span<const std::string> wanted) const;
};

// ---------------------------------------------------------------------------
// CSV input

enum class MissingPolicy {
    kReject,      ///< a row with an empty/NaN cell is an error
    kForwardFill, ///< repeat the previous row's value
};

struct CsvSchema {
    std::optional<std::string> timestamp_column; ///< ISO-8601 or integer seconds
    std::optional<std::string> label_column;     ///< read into labels, not values
    std::vector<std::string> ignore_columns;
    MissingPolicy missing = MissingPolicy::kReject;
};

/// Parses a comma separated file with a header row. When `labels` is given and
/// the schema names a label column, it receives one integer per row: 0 for
/// "0"/"normal"/"false", the numeric value for other integers, 1 otherwise.
TimeSeriesDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema = {},
                           std::vector<int>* labels = nullptr);
TimeSeriesDataset parse_csv(std::istream& in, const CsvSchema& schema,
                            std::string_view source_name, std::vector<int>* labels = nullptr);

void write_csv(std::ostream& out, const TimeSeriesDataset& ds);
void write_csv(const std::filesystem::path& path, const TimeSeriesDataset& ds);

/// Seconds since 1970-01-01 for "YYYY-MM-DD[T ]hh:mm[:ss[.fff]][Z]", or the
/// value itself for a plain number. Throws InputError otherwise.
double parse_timestamp(std::string_view text);

// ---------------------------------------------------------------------------
// Preprocessing

/// Dominant (non-DC) periodogram frequency per variable.
struct SpectralProfile {
    std::vector<std::string> names;
    std::vector<double> dominant_freq; ///< Hz; 0 for constant columns
    std::vector<double> power;
    double dt = 1.0;

    double max_freq() const;
    double mean_freq() const;
    SpectralProfile restrict_to(std::span<const std::string> keep) const;
};

struct PreprocessConfig {
    double constant_ratio = 0.01;
    double nyquist_multiplier = 5.0;
    int tau_cap = 20;
    bool standardize = true;
    /// Drop a column when mean < ratio * std (literal reading of the rule)
    /// instead of std < ratio * |mean|.
    bool literal_constant_test = false;
    /// Average each block of t_s rows instead of keeping every t_s-th row.
    bool mean_pool = false;
    std::optional<int> sampling_override;
    std::optional<int> tau_max_override;

    void validate() const;
};

struct Scaling {
    double mean = 0.0;
    double std = 1.0;

    double apply(double v) const { return (v - mean) / std; }
    double invert(double z) const { return z * std + mean; }
};

struct PreprocessReport {
    std::vector<std::string> kept;
    std::vector<std::string> dropped_constant;
    int t_s = 1;
    int tau_max = 1;
    std::map<std::string, Scaling> scaling;
    bool mean_pool = false;

    /// Scaling for each kept variable, in `kept` order.
    std::vector<Scaling> kept_scaling() const;
};

json to_json(const PreprocessReport& report);
PreprocessReport preprocess_report_from_json(const json& j);

/// Periodogram with a Hann window over the mean-removed column. Needs T >= 8.
SpectralProfile dominant_frequencies(const TimeSeriesDataset& ds);

/// round(1 / (2 * multiplier * max(freq)) / dt), at least 1.
int choose_sampling(const SpectralProfile& profile, const PreprocessConfig& cfg);

enum class SubsampleMode { kDecimate, kMeanPool };

/// Decimation keeps rows 0, t_s, 2 t_s, ... (ceil(T / t_s) rows). Mean pooling
/// averages complete blocks of t_s rows (floor(T / t_s) rows).
TimeSeriesDataset subsample(const TimeSeriesDataset& ds, int t_s,
                            SubsampleMode mode = SubsampleMode::kDecimate);

/// Removes nearly constant columns. The returned report has `kept` and
/// `dropped_constant` filled in; the other fields keep their defaults.
std::pair<TimeSeriesDataset, PreprocessReport> drop_near_constant(const TimeSeriesDataset& ds,
                                                                  const PreprocessConfig& cfg);

/// round(1 / (t_s * dt * mean(freq))), clamped to [1, tau_cap].
int choose_max_lag(const SpectralProfile& profile, int t_s, const PreprocessConfig& cfg);

/// Population mean/std per column (divide by T).
std::vector<Scaling> column_scaling(const TimeSeriesDataset& ds);

std::pair<TimeSeriesDataset, std::vector<Scaling>> standardize(const TimeSeriesDataset& ds);
TimeSeriesDataset apply_scaling(const TimeSeriesDataset& ds, std::span<const Scaling> scaling);
TimeSeriesDataset unstandardize(const TimeSeriesDataset& ds, std::span<const Scaling> scaling);

struct Preprocessed {
    TimeSeriesDataset data;
    PreprocessReport report;
};

/// Spectral profile -> sampling interval -> subsample -> drop near-constant
/// columns -> maximum lag -> standardize.
Preprocessed preprocess(const TimeSeriesDataset& ds, const PreprocessConfig& cfg);

/// Applies a previously computed report to new data from the same source:
/// column selection, subsampling and scaling.
TimeSeriesDataset replay_preprocess(const TimeSeriesDataset& ds, const PreprocessReport& report);

}  // namespace causalmon
