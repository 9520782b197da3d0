#pragma once

#include <compare>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "causalmon/dataset.hpp"
#include "causalmon/json_io.hpp"

namespace causalmon {

/// A lagged variable x^var_{t-lag}.
struct LagVar {
    int var = 0;
    int lag = 0;

    friend auto operator<=>(const LagVar&, const LagVar&) = default;
};

/// Directed lagged link x^src_{t-lag} -> x^dst_t.
struct LagLink {
    int src = 0;
    int dst = 0;
    int lag = 1;
    double coeff = 0.0;  ///< joint regression weight of the parent
    double pvalue = 1.0; ///< MCI test p-value
    double mci = 0.0;    ///< MCI partial correlation

    LagVar parent() const { return {src, lag}; }
};

/// Learned normal model. `links` are grouped by target in ascending order and,
/// within a target, follow `parents[dst]`: descending |mci|, ties broken by
/// (src, lag). Coefficient vectors elsewhere in the library are indexed like
/// `links`.
struct CausalModel {
    std::vector<std::string> names;
    int tau_max = 1;
    PreprocessReport preprocess;
    std::vector<LagLink> links;
    std::vector<std::vector<LagVar>> parents;

    int n_vars() const { return static_cast<int>(names.size()); }

    /// Sorts links into canonical order and rebuilds `parents`.
    void canonicalize();
    /// Throws InputError on out-of-range indices, bad lags or duplicate links.
    void validate() const;

    std::optional<std::size_t> find_link(int src, int dst, int lag) const;
    /// "src:dst:lag" using variable names.
    std::string link_key(const LagLink& link) const;
    std::size_t max_parent_count() const;
};

enum class PruneScope {
    kRetainedLinks, ///< mean |coeff| over the surviving links
    kFullTensor,    ///< mean |coeff| over all N x N x tau_max entries, zeros included
};

struct DiscoveryConfig {
    double alpha = 0.05;
    std::optional<double> pc_alpha; ///< defaults to alpha
    std::optional<int> max_conds_dim;
    std::optional<int> max_parents;
    PruneScope prune_scope = PruneScope::kFullTensor;
    unsigned threads = 0; ///< 0 = hardware concurrency

    double effective_pc_alpha() const { return pc_alpha.value_or(alpha); }
    void validate() const;
};

/// A PC-stage survivor with the weakest dependence seen over all its tests.
struct ScoredParent {
    LagVar parent;
    double score = 0.0;  ///< min |partial correlation| over the tests run
    double pvalue = 0.0; ///< max p-value over the tests run
    double cmi() const;
};

/// Candidate parents per target, strongest first.
using ParentCandidates = std::vector<std::vector<ScoredParent>>;

/// Condition-selection stage. For each target every lagged variable up to
/// tau_max starts as a candidate; at iteration p each candidate is tested
/// against the p strongest other candidates and dropped when the test's
/// p-value exceeds pc_alpha. Iterates until fewer than p + 1 candidates remain.
ParentCandidates pc_stage(const TimeSeriesDataset& ds, int tau_max, const DiscoveryConfig& cfg);

/// Momentary conditional independence test of every PC candidate, conditioned
/// on the target's other candidates and the candidate's own candidates shifted
/// by its lag. Keeps links with p-value <= alpha; coefficients are left at 0.
std::vector<LagLink> mci_stage(const TimeSeriesDataset& ds, const ParentCandidates& candidates, int tau_max,
                               const DiscoveryConfig& cfg);

/// One least-squares regression (with intercept) per target over all its
/// parents jointly, using rows t >= tau_max. The model's preprocess report is
/// an identity report for `ds`.
CausalModel fit_coefficients(const TimeSeriesDataset& ds, std::vector<LagLink> links, int tau_max);

/// Drops links whose |coeff| is strictly below the mean over `scope`, and
/// links with a zero coefficient.
CausalModel prune_below_mean(CausalModel model, PruneScope scope = PruneScope::kFullTensor);

/// Intermediate results of discover(), for inspection and tests.
struct DiscoveryTrace {
    PreprocessReport report;
    ParentCandidates pc;
    std::vector<LagLink> mci;
    CausalModel fitted;
    int prune_calls = 0;
};

/// preprocess -> pc_stage -> mci_stage -> fit_coefficients -> prune_below_mean.
CausalModel discover(const TimeSeriesDataset& normal, const PreprocessConfig& pcfg, const DiscoveryConfig& dcfg,
                     DiscoveryTrace* trace = nullptr);

json model_to_json(const CausalModel& model);
CausalModel model_from_json(const json& j);
void save_model(const std::filesystem::path& path, const CausalModel& model);
CausalModel load_model(const std::filesystem::path& path);

/// Graphviz rendering with lags collapsed into one edge per variable pair.
std::string to_dot(const CausalModel& model);

}  // namespace causalmon
