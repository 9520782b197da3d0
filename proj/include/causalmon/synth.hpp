#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "causalmon/detector.hpp"
#include "causalmon/discovery.hpp"
#include "causalmon/json_io.hpp"

namespace causalmon {

/// Companion matrices with a spectral radius at or above this are rejected.
inline constexpr double kStabilityMargin = 0.98;

struct VarWeight {
    int src = 0;
    int dst = 0;
    int lag = 1;
    double weight = 0.0;
};

/// Linear-Gaussian VAR: x^j_t = sum w * x^src_{t-lag} + noise_std[j] * eps.
struct VarProcessSpec {
    int n_vars = 1;
    int tau_max_true = 1;
    std::vector<VarWeight> weights;
    std::vector<double> noise_std; ///< one per variable
    std::uint64_t seed = 42;
    int burn_in = 100;              ///< discarded leading rows
    std::vector<std::string> names; ///< empty means x1..xN

    std::vector<std::string> variable_names() const;
    /// Throws InputError on bad indices, lags outside [1, tau_max_true],
    /// duplicate weights, negative noise or an unstable process.
    void validate() const;
};

double spectral_radius(const VarProcessSpec& spec);

/// Standard normal draws from mt19937_64. Uniforms take the top 53 bits,
/// ((x >> 11) + 0.5) / 2^53; normals use Box-Muller pairs, cosine first.
class GaussianSource {
public:
    explicit GaussianSource(std::uint64_t seed) : engine_(seed) {}
    double uniform();
    double normal();

private:
    std::mt19937_64 engine_;
    std::optional<double> cached_;
};

/// Innovations are drawn row by row, variable by variable. Throws
/// InputError unless T > 10 * tau_max_true.
TimeSeriesDataset generate_var(const VarProcessSpec& spec, Index T);

enum class AnomalyKind { kLinkFlip, kLinkCut, kOffset, kStuck, kRewire };

std::string to_string(AnomalyKind kind);
AnomalyKind anomaly_kind_from_string(const std::string& s);

struct AnomalySpec {
    AnomalyKind kind = AnomalyKind::kLinkFlip;
    int src = -1; ///< link attacks
    int dst = -1;
    int lag = 0;
    int variable = -1; ///< offset and stuck
    Index onset = 0;
    double magnitude = 0.0;     ///< offset size
    std::optional<int> new_src; ///< rewire target, default (src + 1) mod N
    int id = 1;                 ///< label written from onset on
};

struct LabeledStream {
    TimeSeriesDataset dataset;
    std::vector<int> labels; ///< 0 before onset, spec.id after
    AnomalySpec spec;
};

/// Regenerates `stream` (produced by generate_var(spec, T)) from the onset on
/// with the attacked mechanism, reusing the same innovations. Rows before the
/// onset are copied unchanged.
LabeledStream inject_anomaly(const VarProcessSpec& spec, const TimeSeriesDataset& stream, const AnomalySpec& anomaly);

/// Tests every (i, j, tau) conditioned on all other lagged variables up to
/// tau_max, using rows t >= tau_max. Returns links with p-value <= alpha in
/// canonical order; coeff is 0, mci holds the partial correlation.
std::vector<LagLink> oracle_full_ci(const TimeSeriesDataset& ds, int tau_max, double alpha);

struct ReplayResult {
    std::vector<Index> steps;                   ///< subsampled row index per checkpoint
    std::vector<std::int64_t> source_indices;   ///< raw row index per checkpoint
    std::vector<std::vector<double>> coefficients;
    std::vector<std::vector<std::size_t>> broken; ///< violated link indices per checkpoint
};

/// Batch recomputation of the detector: preprocesses `stream` with the
/// model's report and refits every checkpoint from scratch by QR.
ReplayResult oracle_replay(const TimeSeriesDataset& stream, const CausalModel& model,
                           const ThresholdMatrix& thresholds, std::optional<int> window = std::nullopt);

/// The three-variable process x1 -> x1 (0.7, lag 1), x1 -> x2 (0.8, lag 1),
/// x2 -> x3 (0.6, lag 2) with unit noise.
VarProcessSpec toy_spec(std::uint64_t seed = 42);
/// The toy structure with a unit-noise driver x1 and quiet downstream
/// variables (noise 0.03), so that link changes dominate estimation noise.
VarProcessSpec plant_spec(std::uint64_t seed = 42);
/// A stable random sparse VAR with N variables, maximum lag 2 and an
/// autoregressive term on every variable.
VarProcessSpec random_spec(int n_vars, std::uint64_t seed);

json spec_to_json(const VarProcessSpec& spec);
VarProcessSpec spec_from_json(const json& j);
json anomaly_to_json(const AnomalySpec& spec);
AnomalySpec anomaly_from_json(const json& j, const VarProcessSpec& process);

/// Writes a labels file with columns index,label.
void write_labels(const std::filesystem::path& path, const std::vector<int>& labels);

struct FixturePaths {
    std::filesystem::path spec;
    std::filesystem::path normal;
    std::optional<std::filesystem::path> attack;
    std::optional<std::filesystem::path> labels;
};

/// Writes spec_<seed>.json, normal_<seed>.csv and, with an attack,
/// attack_<seed>.csv plus labels_<seed>.csv into `dir`. The attacked stream
/// uses seed + 1000 so that it does not replay the normal innovations.
FixturePaths write_fixture(const std::filesystem::path& dir, const VarProcessSpec& spec, Index T,
                           const std::optional<AnomalySpec>& attack);

}  // namespace causalmon
