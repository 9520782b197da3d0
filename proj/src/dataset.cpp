#include "causalmon/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>
#include <unordered_set>

#include <unsupported/Eigen/FFT>

#include "causalmon/error.hpp"
#include "causalmon/log.hpp"

namespace causalmon {

void TimeSeriesDataset::validate() const {
    if (static_cast<std::size_t>(cols()) != names.size()) {
        throw InputError("dataset has " + std::to_string(cols()) + " columns but " + std::to_string(names.size()) +
                         " names");
    }
    if (rows() < 2) throw InputError("dataset needs at least 2 rows");
    if (!(dt > 0.0)) throw InputError("dataset sampling interval must be positive");
    std::unordered_set<std::string> seen;
    for (const auto& n : names) {
        if (!seen.insert(n).second) throw InputError("duplicate variable name '" + n + "'");
    }
    if (!values.allFinite()) throw InputError("dataset contains non-finite values");
}

std::optional<Index> TimeSeriesDataset::column(std::string_view name) const {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) return std::nullopt;
    return static_cast<Index>(it - names.begin());
}

TimeSeriesDataset TimeSeriesDataset::select(std::span<const std::string> wanted) const {
    TimeSeriesDataset out;
    out.dt = dt;
    out.origin_index = origin_index;
    out.values.resize(rows(), static_cast<Index>(wanted.size()));
    for (std::size_t k = 0; k < wanted.size(); ++k) {
        const auto c = column(wanted[k]);
        if (!c) throw InputError("variable '" + wanted[k] + "' not present in dataset");
        out.values.col(static_cast<Index>(k)) = values.col(*c);
        out.names.push_back(wanted[k]);
    }
    return out;
}

// ---------------------------------------------------------------------------

double SpectralProfile::max_freq() const {
    return dominant_freq.empty() ? 0.0 : *std::max_element(dominant_freq.begin(), dominant_freq.end());
}

double SpectralProfile::mean_freq() const {
    if (dominant_freq.empty()) return 0.0;
    return std::accumulate(dominant_freq.begin(), dominant_freq.end(), 0.0) /
           static_cast<double>(dominant_freq.size());
}

SpectralProfile SpectralProfile::restrict_to(std::span<const std::string> keep) const {
    SpectralProfile out;
    out.dt = dt;
    for (const auto& name : keep) {
        const auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end()) throw InputError("variable '" + name + "' not in spectral profile");
        const auto k = static_cast<std::size_t>(it - names.begin());
        out.names.push_back(name);
        out.dominant_freq.push_back(dominant_freq[k]);
        out.power.push_back(power[k]);
    }
    return out;
}

void PreprocessConfig::validate() const {
    if (!(constant_ratio > 0.0)) throw InputError("constant_ratio must be positive");
    if (!(nyquist_multiplier >= 1.0)) throw InputError("nyquist_multiplier must be >= 1");
    if (tau_cap < 1) throw InputError("tau_cap must be >= 1");
    if (sampling_override && *sampling_override < 1) throw InputError("sampling interval must be >= 1");
    if (tau_max_override && *tau_max_override < 1) throw InputError("tau_max must be >= 1");
}

std::vector<Scaling> PreprocessReport::kept_scaling() const {
    std::vector<Scaling> out;
    out.reserve(kept.size());
    for (const auto& name : kept) {
        const auto it = scaling.find(name);
        out.push_back(it == scaling.end() ? Scaling{} : it->second);
    }
    return out;
}

json to_json(const PreprocessReport& report) {
    json scaling = json::object();
    for (const auto& [name, s] : report.scaling) scaling[name] = {{"mean", s.mean}, {"std", s.std}};
    json j = {{"kept", report.kept},
              {"dropped_constant", report.dropped_constant},
              {"t_s", report.t_s},
              {"tau_max", report.tau_max},
              {"scaling", scaling}};
    if (report.mean_pool) j["pooling"] = "mean";
    return j;
}

PreprocessReport preprocess_report_from_json(const json& j) {
    try {
        PreprocessReport r;
        r.kept = j.at("kept").get<std::vector<std::string>>();
        r.dropped_constant = j.at("dropped_constant").get<std::vector<std::string>>();
        r.t_s = j.at("t_s").get<int>();
        r.tau_max = j.at("tau_max").get<int>();
        for (const auto& [name, s] : j.at("scaling").items()) {
            r.scaling[name] = Scaling{s.at("mean").get<double>(), s.at("std").get<double>()};
        }
        r.mean_pool = j.value("pooling", std::string("decimate")) == "mean";
        if (r.t_s < 1 || r.tau_max < 1) throw InputError("preprocess report: t_s and tau_max must be >= 1");
        for (const auto& [name, s] : r.scaling) {
            if (!(s.std > 0.0)) throw InputError("preprocess report: non-positive std for '" + name + "'");
        }
        return r;
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed preprocess report: ") + e.what());
    }
}

// ---------------------------------------------------------------------------

SpectralProfile dominant_frequencies(const TimeSeriesDataset& ds) {
    const Index T = ds.rows();
    if (T < 8) throw InsufficientSamples("spectral estimation needs at least 8 rows");

    std::vector<double> window(static_cast<std::size_t>(T));
    for (Index t = 0; t < T; ++t) {
        window[static_cast<std::size_t>(t)] =
            0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(t) / static_cast<double>(T - 1));
    }
    const double window_energy = std::inner_product(window.begin(), window.end(), window.begin(), 0.0);

    SpectralProfile profile;
    profile.names = ds.names;
    profile.dt = ds.dt;
    Eigen::FFT<double> fft;
    std::vector<double> buf(static_cast<std::size_t>(T));
    std::vector<std::complex<double>> spectrum;
    for (Index c = 0; c < ds.cols(); ++c) {
        const auto col = ds.values.col(c);
        if ((col.array() == col(0)).all()) {
            profile.dominant_freq.push_back(0.0);
            profile.power.push_back(0.0);
            continue;
        }
        const double mean = col.mean();
        for (Index t = 0; t < T; ++t) {
            buf[static_cast<std::size_t>(t)] = (col(t) - mean) * window[static_cast<std::size_t>(t)];
        }
        fft.fwd(spectrum, buf);
        Index best = 1;
        double best_power = -1.0;
        for (Index k = 1; k <= T / 2; ++k) {
            const double p = std::norm(spectrum[static_cast<std::size_t>(k)]) / window_energy;
            if (p > best_power) {
                best_power = p;
                best = k;
            }
        }
        profile.dominant_freq.push_back(static_cast<double>(best) / (static_cast<double>(T) * ds.dt));
        profile.power.push_back(best_power);
    }
    return profile;
}

int choose_sampling(const SpectralProfile& profile, const PreprocessConfig& cfg) {
    const double max_freq = profile.max_freq();
    if (!(max_freq > 0.0)) throw InputError("no variable has a positive dominant frequency (all constant?)");
    const double interval = 1.0 / (2.0 * cfg.nyquist_multiplier * max_freq) / profile.dt;
    return static_cast<int>(std::max<long long>(1, std::llround(interval)));
}

TimeSeriesDataset subsample(const TimeSeriesDataset& ds, int t_s, SubsampleMode mode) {
    if (t_s < 1) throw InputError("subsampling interval must be >= 1");
    TimeSeriesDataset out;
    out.names = ds.names;
    out.dt = ds.dt * t_s;
    out.origin_index = ds.origin_index;
    const Index T = ds.rows();
    if (mode == SubsampleMode::kDecimate) {
        const Index rows = (T + t_s - 1) / t_s;
        out.values.resize(rows, ds.cols());
        for (Index r = 0; r < rows; ++r) out.values.row(r) = ds.values.row(r * t_s);
    } else {
        const Index rows = T / t_s;
        out.values.resize(rows, ds.cols());
        for (Index r = 0; r < rows; ++r) {
            out.values.row(r) = ds.values.middleRows(r * t_s, t_s).colwise().mean();
        }
    }
    return out;
}

std::vector<Scaling> column_scaling(const TimeSeriesDataset& ds) {
    std::vector<Scaling> out;
    out.reserve(static_cast<std::size_t>(ds.cols()));
    const auto n = static_cast<double>(ds.rows());
    for (Index c = 0; c < ds.cols(); ++c) {
        const auto col = ds.values.col(c);
        const double mean = col.mean();
        const double var = (col.array() - mean).square().sum() / n;
        out.push_back({mean, std::sqrt(var)});
    }
    return out;
}

std::pair<TimeSeriesDataset, PreprocessReport> drop_near_constant(const TimeSeriesDataset& ds,
                                                                  const PreprocessConfig& cfg) {
    const auto stats = column_scaling(ds);
    PreprocessReport report;
    for (Index c = 0; c < ds.cols(); ++c) {
        const auto& s = stats[static_cast<std::size_t>(c)];
        const bool constant = (ds.values.col(c).array() == ds.values(0, c)).all() || s.std == 0.0;
        const bool near_constant = cfg.literal_constant_test ? s.mean < cfg.constant_ratio * s.std
                                                             : s.std < cfg.constant_ratio * std::abs(s.mean);
        (constant || near_constant ? report.dropped_constant : report.kept).push_back(ds.names[static_cast<std::size_t>(c)]);
    }
    if (report.kept.empty()) throw InputError("every variable was removed as nearly constant");
    return {ds.select(report.kept), std::move(report)};
}

int choose_max_lag(const SpectralProfile& profile, int t_s, const PreprocessConfig& cfg) {
    const double mean_freq = profile.mean_freq();
    if (!(mean_freq > 0.0)) throw InputError("mean dominant frequency must be positive");
    const double lag = 1.0 / (static_cast<double>(t_s) * profile.dt * mean_freq);
    return static_cast<int>(std::clamp<long long>(std::llround(lag), 1, cfg.tau_cap));
}

TimeSeriesDataset apply_scaling(const TimeSeriesDataset& ds, std::span<const Scaling> scaling) {
    if (scaling.size() != static_cast<std::size_t>(ds.cols())) throw InputError("scaling size mismatch");
    TimeSeriesDataset out = ds;
    for (Index c = 0; c < ds.cols(); ++c) {
        const auto& s = scaling[static_cast<std::size_t>(c)];
        out.values.col(c) = ds.values.col(c).unaryExpr([&s](double v) { return s.apply(v); });
    }
    return out;
}

TimeSeriesDataset unstandardize(const TimeSeriesDataset& ds, std::span<const Scaling> scaling) {
    if (scaling.size() != static_cast<std::size_t>(ds.cols())) throw InputError("scaling size mismatch");
    TimeSeriesDataset out = ds;
    for (Index c = 0; c < ds.cols(); ++c) {
        const auto& s = scaling[static_cast<std::size_t>(c)];
        out.values.col(c) = ds.values.col(c).unaryExpr([&s](double z) { return s.invert(z); });
    }
    return out;
}

std::pair<TimeSeriesDataset, std::vector<Scaling>> standardize(const TimeSeriesDataset& ds) {
    auto scaling = column_scaling(ds);
    for (std::size_t c = 0; c < scaling.size(); ++c) {
        if (!(scaling[c].std > 0.0)) throw DegenerateInput("column '" + ds.names[c] + "' has zero variance");
    }
    auto out = apply_scaling(ds, scaling);
    return {std::move(out), std::move(scaling)};
}

Preprocessed preprocess(const TimeSeriesDataset& ds, const PreprocessConfig& cfg) {
    cfg.validate();
    ds.validate();

    std::optional<SpectralProfile> profile;
    if (!cfg.sampling_override || !cfg.tau_max_override) profile = dominant_frequencies(ds);

    const int t_s = cfg.sampling_override ? *cfg.sampling_override : choose_sampling(*profile, cfg);
    const auto mode = cfg.mean_pool ? SubsampleMode::kMeanPool : SubsampleMode::kDecimate;
    const auto sub = subsample(ds, t_s, mode);
    if (sub.rows() < 2) throw InsufficientSamples("fewer than 2 rows left after subsampling");

    auto [kept, report] = drop_near_constant(sub, cfg);
    report.t_s = t_s;
    report.mean_pool = cfg.mean_pool;
    report.tau_max = cfg.tau_max_override ? *cfg.tau_max_override
                                          : choose_max_lag(profile->restrict_to(report.kept), t_s, cfg);
    if (!report.dropped_constant.empty()) {
        log_info("dropped " + std::to_string(report.dropped_constant.size()) + " nearly constant variables");
    }

    std::vector<Scaling> scaling(report.kept.size());
    if (cfg.standardize) {
        auto [z, s] = standardize(kept);
        kept = std::move(z);
        scaling = std::move(s);
    }
    for (std::size_t k = 0; k < report.kept.size(); ++k) report.scaling[report.kept[k]] = scaling[k];
    return {std::move(kept), std::move(report)};
}

TimeSeriesDataset replay_preprocess(const TimeSeriesDataset& ds, const PreprocessReport& report) {
    const auto selected = ds.select(report.kept);
    const auto mode = report.mean_pool ? SubsampleMode::kMeanPool : SubsampleMode::kDecimate;
    const auto sub = subsample(selected, report.t_s, mode);
    const auto scaling = report.kept_scaling();
    return apply_scaling(sub, scaling);
}

}  // namespace causalmon
