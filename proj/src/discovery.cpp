#include "causalmon/discovery.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <thread>

#include "causalmon/error.hpp"
#include "causalmon/log.hpp"
#include "causalmon/stats.hpp"

namespace causalmon {
namespace {

/// Samples x^var_{t-lag} for t in [start, T).
auto lagged(const TimeSeriesDataset& ds, LagVar v, Index start) {
    return ds.values.col(v.var).segment(start - v.lag, ds.rows() - start);
}

Eigen::MatrixXd lagged_matrix(const TimeSeriesDataset& ds, const std::vector<LagVar>& vars, Index start) {
    Eigen::MatrixXd Z(ds.rows() - start, static_cast<Index>(vars.size()));
    for (std::size_t k = 0; k < vars.size(); ++k) Z.col(static_cast<Index>(k)) = lagged(ds, vars[k], start);
    return Z;
}

/// Partial correlation where a vanishing residual counts as independence.
CorrelationResult ci_test(const TimeSeriesDataset& ds, LagVar candidate, int target,
                          const std::vector<LagVar>& conds, Index start) {
    const Eigen::VectorXd x = lagged(ds, candidate, start);
    const Eigen::VectorXd y = ds.values.col(target).segment(start, ds.rows() - start);
    try {
        return partial_correlation(x, y, lagged_matrix(ds, conds, start));
    } catch (const DegenerateInput&) {
        CorrelationResult r;
        r.pvalue = 1.0;
        r.cond_size = conds.size();
        return r;
    }
}

bool stronger(const ScoredParent& a, const ScoredParent& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.parent < b.parent;
}

/// Runs fn(0..n-1) on up to `threads` workers. Each index is handled by
/// exactly one worker; callers write results into per-index slots.
template <typename Fn>
void parallel_for(int n, unsigned threads, Fn&& fn) {
    unsigned workers = threads ? threads : std::max(1u, std::thread::hardware_concurrency());
    workers = std::min<unsigned>(workers, static_cast<unsigned>(std::max(n, 1)));
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (int i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    pool.clear();
    if (failure) std::rethrow_exception(failure);
}

Index discovery_start(int tau_max) { return 2 * static_cast<Index>(tau_max); }

void check_sample_size(const TimeSeriesDataset& ds, int tau_max) {
    if (tau_max < 1) throw InputError("tau_max must be >= 1");
    if (ds.rows() <= discovery_start(tau_max) + 10) {
        throw InsufficientSamples("discovery needs more than 2 * tau_max + 10 rows");
    }
}

}  // namespace

// ---------------------------------------------------------------------------

void CausalModel::canonicalize() {
    std::sort(links.begin(), links.end(), [](const LagLink& a, const LagLink& b) {
        if (a.dst != b.dst) return a.dst < b.dst;
        const double ma = std::abs(a.mci), mb = std::abs(b.mci);
        if (ma != mb) return ma > mb;
        return a.parent() < b.parent();
    });
    parents.assign(names.size(), {});
    for (const auto& l : links) {
        if (l.dst >= 0 && static_cast<std::size_t>(l.dst) < parents.size()) parents[static_cast<std::size_t>(l.dst)].push_back(l.parent());
    }
}

void CausalModel::validate() const {
    const int n = n_vars();
    if (tau_max < 1) throw InputError("model tau_max must be >= 1");
    for (std::size_t k = 0; k < links.size(); ++k) {
        const auto& l = links[k];
        if (l.src < 0 || l.src >= n || l.dst < 0 || l.dst >= n) throw InputError("model link index out of range");
        if (l.lag < 1 || l.lag > tau_max) throw InputError("model link lag outside [1, tau_max]");
        if (!(l.pvalue >= 0.0 && l.pvalue <= 1.0)) throw InputError("model link p-value outside [0, 1]");
        if (!std::isfinite(l.coeff)) throw InputError("model link coefficient is not finite");
        for (std::size_t m = 0; m < k; ++m) {
            if (links[m].src == l.src && links[m].dst == l.dst && links[m].lag == l.lag) {
                throw InputError("duplicate link " + link_key(l));
            }
        }
    }
}

std::optional<std::size_t> CausalModel::find_link(int src, int dst, int lag) const {
    for (std::size_t k = 0; k < links.size(); ++k) {
        if (links[k].src == src && links[k].dst == dst && links[k].lag == lag) return k;
    }
    return std::nullopt;
}

std::string CausalModel::link_key(const LagLink& link) const {
    return names.at(static_cast<std::size_t>(link.src)) + ":" + names.at(static_cast<std::size_t>(link.dst)) + ":" +
           std::to_string(link.lag);
}

std::size_t CausalModel::max_parent_count() const {
    std::size_t m = 0;
    for (const auto& p : parents) m = std::max(m, p.size());
    return m;
}

void DiscoveryConfig::validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("alpha must lie in (0, 1)");
    const double pa = effective_pc_alpha();
    if (!(pa > 0.0 && pa < 1.0)) throw InputError("pc_alpha must lie in (0, 1)");
    if (max_conds_dim && *max_conds_dim < 0) throw InputError("max_conds_dim must be >= 0");
    if (max_parents && *max_parents < 1) throw InputError("max_parents must be >= 1");
}

double ScoredParent::cmi() const {
    return score >= 1.0 ? std::numeric_limits<double>::infinity() : cmi_gaussian(score);
}

// ---------------------------------------------------------------------------

ParentCandidates pc_stage(const TimeSeriesDataset& ds, int tau_max, const DiscoveryConfig& cfg) {
    cfg.validate();
    check_sample_size(ds, tau_max);
    const int n_vars = static_cast<int>(ds.cols());
    const Index start = discovery_start(tau_max);
    const Index n = ds.rows() - start;
    const double pc_alpha = cfg.effective_pc_alpha();

    // Every test needs dof = n - |S| - 2 >= 1.
    int max_dim = static_cast<int>(std::min<Index>(n - 3, std::numeric_limits<int>::max()));
    if (cfg.max_conds_dim) max_dim = std::min(max_dim, *cfg.max_conds_dim);
    if (n_vars * tau_max - 1 > max_dim && (!cfg.max_conds_dim || max_dim < *cfg.max_conds_dim)) {
        log_warn("pc_stage: conditioning sets limited to " + std::to_string(max_dim) + " by the sample size");
    }

    ParentCandidates result(static_cast<std::size_t>(n_vars));
    parallel_for(n_vars, cfg.threads, [&](int target) {
        std::vector<ScoredParent> parents;
        for (int i = 0; i < n_vars; ++i) {
            for (int lag = 1; lag <= tau_max; ++lag) {
                parents.push_back({{i, lag}, std::numeric_limits<double>::infinity(), 0.0});
            }
        }
        for (int p = 0; p <= max_dim && static_cast<int>(parents.size()) - 1 >= p; ++p) {
            std::vector<char> drop(parents.size(), 0);
            for (std::size_t c = 0; c < parents.size(); ++c) {
                std::vector<LagVar> conds;
                for (std::size_t o = 0; o < parents.size() && static_cast<int>(conds.size()) < p; ++o) {
                    if (o != c) conds.push_back(parents[o].parent);
                }
                const auto res = ci_test(ds, parents[c].parent, target, conds, start);
                parents[c].score = std::min(parents[c].score, std::abs(res.r));
                parents[c].pvalue = std::max(parents[c].pvalue, res.pvalue);
                if (res.pvalue > pc_alpha) drop[c] = 1;
            }
            std::vector<ScoredParent> kept;
            for (std::size_t c = 0; c < parents.size(); ++c) {
                if (!drop[c]) kept.push_back(parents[c]);
            }
            parents = std::move(kept);
            std::sort(parents.begin(), parents.end(), stronger);
        }
        if (cfg.max_parents && parents.size() > static_cast<std::size_t>(*cfg.max_parents)) {
            parents.resize(static_cast<std::size_t>(*cfg.max_parents));
        }
        result[static_cast<std::size_t>(target)] = std::move(parents);
    });
    return result;
}

std::vector<LagLink> mci_stage(const TimeSeriesDataset& ds, const ParentCandidates& candidates, int tau_max,
                               const DiscoveryConfig& cfg) {
    cfg.validate();
    check_sample_size(ds, tau_max);
    const int n_vars = static_cast<int>(ds.cols());
    if (candidates.size() != static_cast<std::size_t>(n_vars)) {
        throw InputError("mci_stage: candidate map does not match the dataset");
    }
    const Index start = discovery_start(tau_max);

    std::vector<std::vector<LagLink>> per_target(static_cast<std::size_t>(n_vars));
    parallel_for(n_vars, cfg.threads, [&](int target) {
        const auto& own = candidates[static_cast<std::size_t>(target)];
        for (const auto& cand : own) {
            const LagVar x = cand.parent;
            if (x.lag < 1 || x.lag > tau_max || x.var < 0 || x.var >= n_vars) {
                throw InputError("mci_stage: candidate outside the lag window");
            }
            std::vector<LagVar> conds;
            for (const auto& other : own) {
                if (other.parent != x) conds.push_back(other.parent);
            }
            for (const auto& pp : candidates[static_cast<std::size_t>(x.var)]) {
                const LagVar shifted{pp.parent.var, pp.parent.lag + x.lag};
                if (shifted != x && std::find(conds.begin(), conds.end(), shifted) == conds.end()) {
                    conds.push_back(shifted);
                }
            }
            const auto res = ci_test(ds, x, target, conds, start);
            if (res.pvalue <= cfg.alpha) {
                per_target[static_cast<std::size_t>(target)].push_back({x.var, target, x.lag, 0.0, res.pvalue, res.r});
            }
        }
    });

    std::vector<LagLink> links;
    for (auto& group : per_target) links.insert(links.end(), group.begin(), group.end());
    CausalModel ordering;
    ordering.names.resize(static_cast<std::size_t>(n_vars));
    ordering.links = std::move(links);
    ordering.canonicalize();
    return ordering.links;
}

CausalModel fit_coefficients(const TimeSeriesDataset& ds, std::vector<LagLink> links, int tau_max) {
    CausalModel model;
    model.names = ds.names;
    model.tau_max = tau_max;
    model.links = std::move(links);
    model.canonicalize();
    model.validate();
    if (ds.rows() < tau_max + static_cast<Index>(model.max_parent_count()) + 2) {
        throw InsufficientSamples("fit_coefficients: too few rows for the parent sets");
    }

    model.preprocess.kept = ds.names;
    model.preprocess.t_s = 1;
    model.preprocess.tau_max = tau_max;
    for (const auto& name : ds.names) model.preprocess.scaling[name] = Scaling{};

    const Index start = tau_max;
    const Index n = ds.rows() - start;
    std::size_t offset = 0;
    for (int target = 0; target < model.n_vars(); ++target) {
        const auto& parents = model.parents[static_cast<std::size_t>(target)];
        if (parents.empty()) continue;
        Eigen::MatrixXd X = lagged_matrix(ds, parents, start);
        Eigen::VectorXd y = ds.values.col(target).segment(start, n);
        X.rowwise() -= X.colwise().mean();
        y.array() -= y.mean();
        RegressionFit fit;
        try {
            fit = least_squares(y, X);
        } catch (const SingularSystem&) {
            log_warn("fit_coefficients: singular regressors for '" + ds.names[static_cast<std::size_t>(target)] +
                     "', using ridge fallback");
            fit = least_squares(y, X, kRidgeFallback);
        }
        for (std::size_t k = 0; k < parents.size(); ++k) {
            model.links[offset + k].coeff = fit.coefficients(static_cast<Index>(k));
        }
        offset += parents.size();
    }
    return model;
}

CausalModel prune_below_mean(CausalModel model, PruneScope scope) {
    if (model.links.empty()) {
        log_warn("prune_below_mean: model has no links");
        return model;
    }
    double total = 0.0;
    for (const auto& l : model.links) total += std::abs(l.coeff);
    const double denom = scope == PruneScope::kRetainedLinks
                             ? static_cast<double>(model.links.size())
                             : static_cast<double>(model.n_vars()) * model.n_vars() * model.tau_max;
    // Relative slack so that equal coefficients are not dropped by rounding in the sum.
    const double cut = total / denom * (1.0 - 1e-12);
    std::erase_if(model.links, [cut](const LagLink& l) { return l.coeff == 0.0 || std::abs(l.coeff) < cut; });
    model.canonicalize();
    if (model.links.empty()) log_warn("prune_below_mean: no link survived pruning");
    return model;
}

CausalModel discover(const TimeSeriesDataset& normal, const PreprocessConfig& pcfg, const DiscoveryConfig& dcfg,
                     DiscoveryTrace* trace) {
    dcfg.validate();
    auto prepared = preprocess(normal, pcfg);
    const int tau_max = prepared.report.tau_max;
    auto candidates = pc_stage(prepared.data, tau_max, dcfg);
    auto links = mci_stage(prepared.data, candidates, tau_max, dcfg);
    auto fitted = fit_coefficients(prepared.data, links, tau_max);
    fitted.preprocess = prepared.report;
    auto model = prune_below_mean(fitted, dcfg.prune_scope);
    if (trace) {
        trace->report = prepared.report;
        trace->pc = std::move(candidates);
        trace->mci = std::move(links);
        trace->fitted = std::move(fitted);
        ++trace->prune_calls;
    }
    return model;
}

// ---------------------------------------------------------------------------

json model_to_json(const CausalModel& model) {
    json links = json::array();
    for (const auto& l : model.links) {
        links.push_back(
            {{"src", l.src}, {"dst", l.dst}, {"lag", l.lag}, {"coeff", l.coeff}, {"pvalue", l.pvalue}, {"mci", l.mci}});
    }
    return {{"names", model.names}, {"tau_max", model.tau_max}, {"preprocess", to_json(model.preprocess)},
            {"links", links}};
}

CausalModel model_from_json(const json& j) {
    CausalModel model;
    try {
        model.names = j.at("names").get<std::vector<std::string>>();
        model.tau_max = j.at("tau_max").get<int>();
        model.preprocess = preprocess_report_from_json(j.at("preprocess"));
        for (const auto& l : j.at("links")) {
            model.links.push_back({l.at("src").get<int>(), l.at("dst").get<int>(), l.at("lag").get<int>(),
                                   l.at("coeff").get<double>(), l.at("pvalue").get<double>(),
                                   l.at("mci").get<double>()});
        }
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed model: ") + e.what());
    }
    if (model.preprocess.kept != model.names) throw InputError("model names differ from the preprocess report");
    model.validate();
    model.canonicalize();
    return model;
}

void save_model(const std::filesystem::path& path, const CausalModel& model) {
    write_json_file(path, model_to_json(model));
}

CausalModel load_model(const std::filesystem::path& path) { return model_from_json(read_json_file(path)); }

std::string to_dot(const CausalModel& model) {
    std::string out = "digraph causal_model {\n";
    for (const auto& name : model.names) out += "  " + json(name).dump() + ";\n";
    for (int src = 0; src < model.n_vars(); ++src) {
        for (int dst = 0; dst < model.n_vars(); ++dst) {
            std::vector<int> lags;
            double strength = 0.0;
            for (const auto& l : model.links) {
                if (l.src == src && l.dst == dst) {
                    lags.push_back(l.lag);
                    strength = std::max(strength, std::abs(l.coeff));
                }
            }
            if (lags.empty()) continue;
            std::sort(lags.begin(), lags.end());
            std::string label;
            for (const int lag : lags) label += (label.empty() ? "" : ",") + std::to_string(lag);
            char width[32];
            std::snprintf(width, sizeof(width), "%.3f", 1.0 + 3.0 * std::min(strength, 1.0));
            out += "  " + json(model.names[static_cast<std::size_t>(src)]).dump() + " -> " +
                   json(model.names[static_cast<std::size_t>(dst)]).dump() + " [label=\"" + label +
                   "\", penwidth=" + width + "];\n";
        }
    }
    out += "}\n";
    return out;
}

}  // namespace causalmon
