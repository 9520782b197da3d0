#include "causalmon/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "causalmon/error.hpp"
#include "causalmon/stats.hpp"

namespace causalmon {
namespace {

std::vector<VarWeight> sorted_weights(std::vector<VarWeight> w) {
    std::sort(w.begin(), w.end(), [](const VarWeight& a, const VarWeight& b) {
        return std::tie(a.dst, a.src, a.lag, a.weight) < std::tie(b.dst, b.src, b.lag, b.weight);
    });
    return w;
}

bool is_link_attack(AnomalyKind kind) {
    return kind == AnomalyKind::kLinkFlip || kind == AnomalyKind::kLinkCut || kind == AnomalyKind::kRewire;
}

void check_anomaly(const VarProcessSpec& spec, const AnomalySpec& a) {
    if (a.onset < 0) throw InputError("anomaly onset must be >= 0");
    if (a.id < 1) throw InputError("anomaly id must be >= 1");
    if (is_link_attack(a.kind)) {
        const bool found = std::any_of(spec.weights.begin(), spec.weights.end(), [&](const VarWeight& w) {
            return w.src == a.src && w.dst == a.dst && w.lag == a.lag;
        });
        if (!found) throw InputError("anomaly targets a link that is not in the process");
        if (a.kind == AnomalyKind::kRewire && a.new_src && (*a.new_src < 0 || *a.new_src >= spec.n_vars)) {
            throw InputError("rewire target out of range");
        }
    } else if (a.variable < 0 || a.variable >= spec.n_vars) {
        throw InputError("anomaly targets a variable that is not in the process");
    }
}

/// Effective weight list after the onset of a link attack.
std::vector<VarWeight> attacked_weights(const VarProcessSpec& spec, const AnomalySpec& a) {
    std::vector<VarWeight> out = spec.weights;
    for (auto& w : out) {
        if (w.src != a.src || w.dst != a.dst || w.lag != a.lag) continue;
        switch (a.kind) {
        case AnomalyKind::kLinkFlip: w.weight = -w.weight; break;
        case AnomalyKind::kLinkCut: w.weight = 0.0; break;
        case AnomalyKind::kRewire: w.src = a.new_src.value_or((a.src + 1) % spec.n_vars); break;
        default: break;
        }
    }
    return sorted_weights(out);
}

/// Full simulation including burn-in; `anomaly` switches mechanisms for
/// output rows >= onset.
Eigen::MatrixXd simulate(const VarProcessSpec& spec, Index T, const AnomalySpec* anomaly) {
    const int n = spec.n_vars;
    const Index total = spec.burn_in + T;
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(total, n);
    const auto normal_w = sorted_weights(spec.weights);
    const auto attack_w = anomaly && is_link_attack(anomaly->kind) ? attacked_weights(spec, *anomaly) : normal_w;
    const Index onset = anomaly ? spec.burn_in + anomaly->onset : total;
    GaussianSource g(spec.seed);
    std::vector<double> eps(static_cast<std::size_t>(n));
    for (Index t = 0; t < total; ++t) {
        for (auto& e : eps) e = g.normal();
        const auto& weights = t >= onset ? attack_w : normal_w;
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (const auto& w : weights) {
                if (w.dst == j && t - w.lag >= 0) acc += w.weight * x(t - w.lag, w.src);
            }
            x(t, j) = acc + spec.noise_std[static_cast<std::size_t>(j)] * eps[static_cast<std::size_t>(j)];
        }
        if (t >= onset && anomaly->kind == AnomalyKind::kOffset) x(t, anomaly->variable) += anomaly->magnitude;
        if (t >= onset && anomaly->kind == AnomalyKind::kStuck) {
            x(t, anomaly->variable) = onset > 0 ? x(onset - 1, anomaly->variable) : 0.0;
        }
    }
    return x.bottomRows(T);
}

std::vector<LagVar> all_lagged(int n_vars, int tau_max) {
    std::vector<LagVar> out;
    for (int i = 0; i < n_vars; ++i) {
        for (int lag = 1; lag <= tau_max; ++lag) out.push_back({i, lag});
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<std::string> VarProcessSpec::variable_names() const {
    if (!names.empty()) return names;
    std::vector<std::string> out;
    for (int i = 0; i < n_vars; ++i) out.push_back("x" + std::to_string(i + 1));
    return out;
}

void VarProcessSpec::validate() const {
    if (n_vars < 1) throw InputError("process needs at least one variable");
    if (tau_max_true < 1) throw InputError("tau_max_true must be >= 1");
    if (burn_in < 0) throw InputError("burn_in must be >= 0");
    if (noise_std.size() != static_cast<std::size_t>(n_vars)) throw InputError("noise_std needs one entry per variable");
    for (const double s : noise_std) {
        if (!(s >= 0.0) || !std::isfinite(s)) throw InputError("noise_std must be finite and non-negative");
    }
    if (!names.empty() && names.size() != static_cast<std::size_t>(n_vars)) throw InputError("names needs one entry per variable");
    for (std::size_t k = 0; k < weights.size(); ++k) {
        const auto& w = weights[k];
        if (w.src < 0 || w.src >= n_vars || w.dst < 0 || w.dst >= n_vars) throw InputError("weight index out of range");
        if (w.lag < 1 || w.lag > tau_max_true) throw InputError("weight lag outside [1, tau_max_true]");
        if (!std::isfinite(w.weight)) throw InputError("weight is not finite");
        for (std::size_t m = 0; m < k; ++m) {
            if (weights[m].src == w.src && weights[m].dst == w.dst && weights[m].lag == w.lag) {
                throw InputError("duplicate weight");
            }
        }
    }
    const double rho = spectral_radius(*this);
    if (rho >= kStabilityMargin) {
        throw InputError("process is not safely stationary: spectral radius " + std::to_string(rho) + " >= " +
                         std::to_string(kStabilityMargin));
    }
}

double spectral_radius(const VarProcessSpec& spec) {
    const Index n = spec.n_vars;
    const Index p = spec.tau_max_true;
    Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(n * p, n * p);
    for (const auto& w : spec.weights) companion(w.dst, (w.lag - 1) * n + w.src) += w.weight;
    if (p > 1) companion.bottomLeftCorner(n * (p - 1), n * (p - 1)).setIdentity();
    return companion.eigenvalues().cwiseAbs().maxCoeff();
}

double GaussianSource::uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

double GaussianSource::normal() {
    if (cached_) {
        const double v = *cached_;
        cached_.reset();
        return v;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    cached_ = r * std::sin(2.0 * std::numbers::pi * u2);
    return r * std::cos(2.0 * std::numbers::pi * u2);
}

TimeSeriesDataset generate_var(const VarProcessSpec& spec, Index T) {
    spec.validate();
    if (T <= 10 * static_cast<Index>(spec.tau_max_true)) throw InputError("T must exceed 10 * tau_max_true");
    TimeSeriesDataset ds;
    ds.values = simulate(spec, T, nullptr);
    ds.names = spec.variable_names();
    return ds;
}

std::string to_string(AnomalyKind kind) {
    switch (kind) {
    case AnomalyKind::kLinkFlip: return "link-flip";
    case AnomalyKind::kLinkCut: return "link-cut";
    case AnomalyKind::kOffset: return "offset";
    case AnomalyKind::kStuck: return "stuck";
    case AnomalyKind::kRewire: return "rewire";
    }
    return "unknown";
}

AnomalyKind anomaly_kind_from_string(const std::string& s) {
    for (const auto k : {AnomalyKind::kLinkFlip, AnomalyKind::kLinkCut, AnomalyKind::kOffset, AnomalyKind::kStuck,
                         AnomalyKind::kRewire}) {
        if (to_string(k) == s) return k;
    }
    throw InputError("unknown anomaly kind '" + s + "'");
}

LabeledStream inject_anomaly(const VarProcessSpec& spec, const TimeSeriesDataset& stream, const AnomalySpec& anomaly) {
    spec.validate();
    check_anomaly(spec, anomaly);
    const Index T = stream.rows();
    if (stream.cols() != spec.n_vars) throw InputError("stream width does not match the process");
    if (anomaly.onset >= T) throw InputError("anomaly onset beyond the stream end");

    LabeledStream out;
    out.spec = anomaly;
    out.dataset = stream;
    const Eigen::MatrixXd attacked = simulate(spec, T, &anomaly);
    out.dataset.values.bottomRows(T - anomaly.onset) = attacked.bottomRows(T - anomaly.onset);
    out.labels.assign(static_cast<std::size_t>(T), 0);
    std::fill(out.labels.begin() + anomaly.onset, out.labels.end(), anomaly.id);
    return out;
}

std::vector<LagLink> oracle_full_ci(const TimeSeriesDataset& ds, int tau_max, double alpha) {
    const int n_vars = static_cast<int>(ds.cols());
    const auto lagged = all_lagged(n_vars, tau_max);
    const Index start = tau_max;
    const Index n = ds.rows() - start;
    if (tau_max < 1 || n <= static_cast<Index>(lagged.size()) + 10) {
        throw InputError("oracle_full_ci: too few rows for the full conditioning set");
    }
    Eigen::MatrixXd all(n, static_cast<Index>(lagged.size()));
    for (std::size_t k = 0; k < lagged.size(); ++k) {
        all.col(static_cast<Index>(k)) = ds.values.col(lagged[k].var).segment(start - lagged[k].lag, n);
    }
    std::vector<LagLink> out;
    for (int j = 0; j < n_vars; ++j) {
        const Eigen::VectorXd y = ds.values.col(j).segment(start, n);
        for (std::size_t k = 0; k < lagged.size(); ++k) {
            Eigen::MatrixXd Z(n, all.cols() - 1);
            Index c = 0;
            for (Index m = 0; m < all.cols(); ++m) {
                if (m != static_cast<Index>(k)) Z.col(c++) = all.col(m);
            }
            CorrelationResult res;
            try {
                res = partial_correlation(all.col(static_cast<Index>(k)), y, Z);
            } catch (const DegenerateInput&) {
                continue;
            }
            if (res.pvalue <= alpha) out.push_back({lagged[k].var, j, lagged[k].lag, 0.0, res.pvalue, res.r});
        }
    }
    CausalModel ordering;
    ordering.names.resize(static_cast<std::size_t>(n_vars));
    ordering.links = std::move(out);
    ordering.canonicalize();
    return ordering.links;
}

ReplayResult oracle_replay(const TimeSeriesDataset& stream, const CausalModel& model,
                           const ThresholdMatrix& thresholds, std::optional<int> window) {
    thresholds.validate(model);
    const auto z = replay_preprocess(stream, model.preprocess);
    const Index warm = warmup_length(model);
    const Index stride = model.preprocess.t_s;
    ReplayResult out;
    for (Index L = warm; L <= z.rows(); ++L) {
        const Index start = window ? std::max<Index>(model.tau_max, L - *window) : model.tau_max;
        const Index n = L - start;
        std::vector<double> coeffs(model.links.size(), 0.0);
        std::size_t offset = 0;
        for (int j = 0; j < model.n_vars(); ++j) {
            const auto& parents = model.parents[static_cast<std::size_t>(j)];
            if (parents.empty()) continue;
            Eigen::MatrixXd X(n, static_cast<Index>(parents.size()));
            for (std::size_t k = 0; k < parents.size(); ++k) {
                X.col(static_cast<Index>(k)) = z.values.col(parents[k].var).segment(start - parents[k].lag, n);
            }
            Eigen::VectorXd y = z.values.col(j).segment(start, n);
            X.rowwise() -= X.colwise().mean();
            y.array() -= y.mean();
            RegressionFit fit;
            try {
                fit = least_squares(y, X);
            } catch (const SingularSystem&) {
                fit = least_squares(y, X, kRidgeFallback);
            }
            for (std::size_t k = 0; k < parents.size(); ++k) coeffs[offset + k] = fit.coefficients(static_cast<Index>(k));
            offset += parents.size();
        }
        std::vector<std::size_t> broken;
        for (std::size_t k = 0; k < coeffs.size(); ++k) {
            if (std::abs(coeffs[k] - model.links[k].coeff) > thresholds.values[k]) broken.push_back(k);
        }
        out.steps.push_back(L - 1);
        out.source_indices.push_back(model.preprocess.mean_pool ? L * stride - 1 : (L - 1) * stride);
        out.coefficients.push_back(std::move(coeffs));
        out.broken.push_back(std::move(broken));
    }
    return out;
}

// ---------------------------------------------------------------------------

VarProcessSpec toy_spec(std::uint64_t seed) {
    VarProcessSpec s;
    s.n_vars = 3;
    s.tau_max_true = 2;
    s.weights = {{0, 0, 1, 0.7}, {0, 1, 1, 0.8}, {1, 2, 2, 0.6}};
    s.noise_std = {1.0, 1.0, 1.0};
    s.seed = seed;
    return s;
}

VarProcessSpec plant_spec(std::uint64_t seed) {
    auto s = toy_spec(seed);
    s.noise_std = {1.0, 0.03, 0.03};
    return s;
}

VarProcessSpec random_spec(int n_vars, std::uint64_t seed) {
    if (n_vars < 2) throw InputError("random_spec needs at least two variables");
    GaussianSource g(seed);
    auto pick = [&](int n) { return std::min(n - 1, static_cast<int>(g.uniform() * n)); };
    auto magnitude = [&](double lo, double hi) { return (g.uniform() < 0.5 ? -1.0 : 1.0) * (lo + (hi - lo) * g.uniform()); };
    for (;;) {
        VarProcessSpec s;
        s.n_vars = n_vars;
        s.tau_max_true = 2;
        s.seed = seed;
        s.noise_std.assign(static_cast<std::size_t>(n_vars), 1.0);
        for (int j = 0; j < n_vars; ++j) s.weights.push_back({j, j, 1, 0.2 + 0.4 * g.uniform()});
        for (int added = 0; added < n_vars;) {
            const int src = pick(n_vars), dst = pick(n_vars), lag = 1 + pick(2);
            if (src == dst) continue;
            const bool taken = std::any_of(s.weights.begin(), s.weights.end(), [&](const VarWeight& w) {
                return w.src == src && w.dst == dst && w.lag == lag;
            });
            if (taken) continue;
            s.weights.push_back({src, dst, lag, magnitude(0.3, 0.6)});
            ++added;
        }
        if (spectral_radius(s) < 0.9) return s;
    }
}

// ---------------------------------------------------------------------------

json spec_to_json(const VarProcessSpec& spec) {
    json weights = json::array();
    for (const auto& w : spec.weights) {
        weights.push_back({{"src", w.src}, {"dst", w.dst}, {"lag", w.lag}, {"weight", w.weight}});
    }
    return {{"n_vars", spec.n_vars},     {"tau_max_true", spec.tau_max_true}, {"weights", weights},
            {"noise_std", spec.noise_std}, {"seed", spec.seed},                {"burn_in", spec.burn_in},
            {"names", spec.variable_names()}, {"rng", "mt19937_64+box-muller"}};
}

VarProcessSpec spec_from_json(const json& j) {
    VarProcessSpec s;
    try {
        s.n_vars = j.at("n_vars").get<int>();
        s.tau_max_true = j.at("tau_max_true").get<int>();
        for (const auto& w : j.at("weights")) {
            s.weights.push_back({w.at("src").get<int>(), w.at("dst").get<int>(), w.at("lag").get<int>(),
                                 w.at("weight").get<double>()});
        }
        s.noise_std = j.contains("noise_std") ? j.at("noise_std").get<std::vector<double>>()
                                              : std::vector<double>(static_cast<std::size_t>(s.n_vars), 1.0);
        s.seed = j.value("seed", std::uint64_t{42});
        s.burn_in = j.value("burn_in", 100);
        s.names = j.value("names", std::vector<std::string>{});
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed process spec: ") + e.what());
    }
    s.validate();
    return s;
}

json anomaly_to_json(const AnomalySpec& a) {
    json j = {{"kind", to_string(a.kind)}, {"onset", a.onset}, {"id", a.id}};
    if (is_link_attack(a.kind)) {
        j["src"] = a.src;
        j["dst"] = a.dst;
        j["lag"] = a.lag;
        if (a.new_src) j["new_src"] = *a.new_src;
    } else {
        j["variable"] = a.variable;
        j["magnitude"] = a.magnitude;
    }
    return j;
}

namespace {

/// A variable given either as a 0-based index or by name.
int variable_ref(const json& j, const char* key, const VarProcessSpec& process) {
    if (!j.contains(key)) return -1;
    const auto& v = j.at(key);
    if (!v.is_string()) return v.get<int>();
    const auto names = process.variable_names();
    const auto it = std::find(names.begin(), names.end(), v.get<std::string>());
    if (it == names.end()) throw InputError("anomaly spec names unknown variable '" + v.get<std::string>() + "'");
    return static_cast<int>(it - names.begin());
}

}  // namespace

AnomalySpec anomaly_from_json(const json& j, const VarProcessSpec& process) {
    AnomalySpec a;
    try {
        a.kind = anomaly_kind_from_string(j.at("kind").get<std::string>());
        a.onset = j.at("onset").get<Index>();
        a.id = j.value("id", 1);
        a.src = variable_ref(j, "src", process);
        a.dst = variable_ref(j, "dst", process);
        a.lag = j.value("lag", 0);
        a.variable = variable_ref(j, "variable", process);
        a.magnitude = j.value("magnitude", 0.0);
        if (j.contains("new_src")) a.new_src = variable_ref(j, "new_src", process);
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed anomaly spec: ") + e.what());
    }
    check_anomaly(process, a);
    return a;
}

void write_labels(const std::filesystem::path& path, const std::vector<int>& labels) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path.string());
    out << "index,label\n";
    for (std::size_t t = 0; t < labels.size(); ++t) out << t << ',' << labels[t] << '\n';
}

FixturePaths write_fixture(const std::filesystem::path& dir, const VarProcessSpec& spec, Index T,
                           const std::optional<AnomalySpec>& attack) {
    std::filesystem::create_directories(dir);
    const auto tag = std::to_string(spec.seed);
    FixturePaths paths;
    paths.spec = dir / ("spec_" + tag + ".json");
    paths.normal = dir / ("normal_" + tag + ".csv");
    json meta = spec_to_json(spec);
    write_csv(paths.normal, generate_var(spec, T));
    if (attack) {
        auto shifted = spec;
        shifted.seed = spec.seed + 1000;
        const auto stream = inject_anomaly(shifted, generate_var(shifted, T), *attack);
        paths.attack = dir / ("attack_" + tag + ".csv");
        paths.labels = dir / ("labels_" + tag + ".csv");
        write_csv(*paths.attack, stream.dataset);
        write_labels(*paths.labels, stream.labels);
        meta["attack"] = anomaly_to_json(*attack);
        meta["attack_seed"] = shifted.seed;
    }
    write_json_file(paths.spec, meta);
    return paths;
}

}  // namespace causalmon
