#include "causalmon/detector.hpp"

#include <algorithm>
#include <cmath>

#include "causalmon/error.hpp"
#include "causalmon/stats.hpp"

namespace causalmon {
namespace {

struct TargetSlice {
    int var = 0;
    std::size_t first_link = 0;
    std::vector<LagVar> parents;
};

std::vector<TargetSlice> target_slices(const CausalModel& model) {
    std::vector<TargetSlice> out;
    std::size_t offset = 0;
    for (int j = 0; j < model.n_vars(); ++j) {
        const auto& parents = model.parents[static_cast<std::size_t>(j)];
        if (parents.empty()) continue;
        out.push_back({j, offset, parents});
        offset += parents.size();
    }
    return out;
}

void check_window(const CausalModel& model, std::optional<int> window) {
    if (!window) return;
    const auto needed = static_cast<int>(model.max_parent_count()) + 5;
    if (*window < needed) {
        throw InputError("window must be at least max parent count + 5 = " + std::to_string(needed));
    }
}

int var_index(const CausalModel& model, const std::string& name) {
    const auto it = std::find(model.names.begin(), model.names.end(), name);
    if (it == model.names.end()) throw InputError("unknown variable '" + name + "'");
    return static_cast<int>(it - model.names.begin());
}

}  // namespace

// ---------------------------------------------------------------------------

void ThresholdMatrix::validate(const CausalModel& model) const {
    if (values.size() != model.links.size()) throw InputError("threshold count does not match the model links");
    for (const double v : values) {
        if (!std::isfinite(v) || v < 0.0) throw InputError("thresholds must be finite and non-negative");
    }
}

json thresholds_to_json(const CausalModel& model, const ThresholdMatrix& thresholds) {
    thresholds.validate(model);
    json out = json::object();
    for (std::size_t k = 0; k < model.links.size(); ++k) out[model.link_key(model.links[k])] = thresholds.values[k];
    return out;
}

ThresholdMatrix thresholds_from_json(const json& j, const CausalModel& model) {
    if (!j.is_object()) throw InputError("threshold file must be a JSON object");
    ThresholdMatrix out;
    for (const auto& link : model.links) {
        const auto key = model.link_key(link);
        const auto it = j.find(key);
        if (it == j.end()) throw InputError("threshold file lacks link " + key);
        if (!it->is_number()) throw InputError("threshold for " + key + " is not a number");
        out.values.push_back(it->get<double>());
    }
    if (j.size() != model.links.size()) throw InputError("threshold file has links that are not in the model");
    out.warmup = warmup_length(model);
    out.validate(model);
    return out;
}

json alarm_to_json(const CausalModel& model, const AnomalyAlarm& alarm) {
    json broken = json::array();
    for (const auto& b : alarm.broken) {
        broken.push_back({{"src", model.names.at(static_cast<std::size_t>(b.src))},
                          {"dst", model.names.at(static_cast<std::size_t>(b.dst))},
                          {"lag", b.lag},
                          {"error", b.error},
                          {"threshold", b.threshold}});
    }
    json roots = json::array();
    for (const auto& r : alarm.roots) {
        roots.push_back({{"var", model.names.at(static_cast<std::size_t>(r.var))}, {"score", r.score}});
    }
    return {{"step", alarm.step},
            {"source_index", alarm.source_index},
            {"end_step", alarm.end_step},
            {"end_source_index", alarm.end_source_index},
            {"broken", broken},
            {"roots", roots}};
}

AnomalyAlarm alarm_from_json(const json& j, const CausalModel& model) {
    AnomalyAlarm a;
    try {
        a.step = j.at("step").get<Index>();
        a.source_index = j.at("source_index").get<std::int64_t>();
        a.end_step = j.value("end_step", a.step);
        a.end_source_index = j.value("end_source_index", a.source_index);
        for (const auto& b : j.at("broken")) {
            BrokenLink link;
            link.src = var_index(model, b.at("src").get<std::string>());
            link.dst = var_index(model, b.at("dst").get<std::string>());
            link.lag = b.at("lag").get<int>();
            link.error = b.at("error").get<double>();
            link.threshold = b.at("threshold").get<double>();
            const auto idx = model.find_link(link.src, link.dst, link.lag);
            if (!idx) throw InputError("alarm names a link that is not in the model");
            link.link = *idx;
            a.broken.push_back(link);
        }
        for (const auto& r : j.value("roots", json::array())) {
            a.roots.push_back({var_index(model, r.at("var").get<std::string>()), r.at("score").get<double>()});
        }
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed alarm: ") + e.what());
    }
    return a;
}

void ErrorHistory::add(std::span<const double> errors, std::span<const double> thresholds) {
    if (checkpoints == 0) {
        sum_squares.assign(errors.size(), 0.0);
        broken_sum_squares.assign(errors.size(), 0.0);
    }
    if (sum_squares.size() != errors.size() || thresholds.size() != errors.size()) {
        throw InputError("error vector length does not match the history");
    }
    for (std::size_t k = 0; k < errors.size(); ++k) {
        const double sq = errors[k] * errors[k];
        sum_squares[k] += sq;
        if (std::abs(errors[k]) > thresholds[k]) broken_sum_squares[k] += sq;
    }
    ++checkpoints;
}

std::vector<RootScore> rank_root_causes(const CausalModel& model, const ErrorHistory& history, RootSide side,
                                        ErrorScope scope) {
    if (history.checkpoints == 0) throw InputError("no checkpoint has been evaluated yet");
    const auto& sums = scope == ErrorScope::kBrokenLinks ? history.broken_sum_squares : history.sum_squares;
    if (sums.size() != model.links.size()) throw InputError("error history does not match the model");
    std::vector<double> total(static_cast<std::size_t>(model.n_vars()), 0.0);
    for (std::size_t k = 0; k < model.links.size(); ++k) {
        const auto& l = model.links[k];
        total[static_cast<std::size_t>(side == RootSide::kParent ? l.src : l.dst)] += sums[k];
    }
    std::vector<RootScore> out;
    for (int v = 0; v < model.n_vars(); ++v) out.push_back({v, std::sqrt(total[static_cast<std::size_t>(v)])});
    std::stable_sort(out.begin(), out.end(), [](const RootScore& a, const RootScore& b) { return a.score > b.score; });
    return out;
}

Index warmup_length(const CausalModel& model) {
    return model.tau_max + static_cast<Index>(model.max_parent_count()) + 5;
}

// ---------------------------------------------------------------------------

StreamPreprocessor::StreamPreprocessor(const CausalModel& model, std::vector<std::string> input_names) {
    if (input_names.empty()) input_names = model.names;
    width_ = input_names.size();
    const auto& report = model.preprocess;
    for (const auto& name : model.names) {
        const auto it = std::find(input_names.begin(), input_names.end(), name);
        if (it == input_names.end()) throw InputError("input stream lacks model variable '" + name + "'");
        columns_.push_back(it - input_names.begin());
        const auto s = report.scaling.find(name);
        if (s == report.scaling.end()) throw InputError("model has no scaling for '" + name + "'");
        scaling_.push_back(s->second);
    }
    t_s_ = report.t_s;
    pool_ = report.mean_pool;
    if (t_s_ < 1) throw InputError("model sampling interval must be >= 1");
    block_ = Eigen::VectorXd::Zero(static_cast<Index>(columns_.size()));
}

std::optional<Eigen::VectorXd> StreamPreprocessor::push(std::span<const double> row) {
    if (row.size() != width_) {
        throw InputError("row has " + std::to_string(row.size()) + " values, expected " + std::to_string(width_));
    }
    for (const double v : row) {
        if (!std::isfinite(v)) throw InputError("non-finite value in row " + std::to_string(seen_));
    }
    const std::int64_t index = seen_++;
    const auto n = static_cast<Index>(columns_.size());
    if (pool_) {
        for (Index c = 0; c < n; ++c) block_(c) += row[static_cast<std::size_t>(columns_[static_cast<std::size_t>(c)])];
        if ((index + 1) % t_s_ != 0) return std::nullopt;
        Eigen::VectorXd out(n);
        for (Index c = 0; c < n; ++c) out(c) = scaling_[static_cast<std::size_t>(c)].apply(block_(c) / t_s_);
        block_.setZero();
        last_source_ = index;
        return out;
    }
    if (index % t_s_ != 0) return std::nullopt;
    Eigen::VectorXd out(n);
    for (Index c = 0; c < n; ++c) {
        out(c) = scaling_[static_cast<std::size_t>(c)].apply(row[static_cast<std::size_t>(columns_[static_cast<std::size_t>(c)])]);
    }
    last_source_ = index;
    return out;
}

// ---------------------------------------------------------------------------

CoefficientTracker::CoefficientTracker(const CausalModel& model, std::optional<int> window)
    : tau_max_(model.tau_max), n_links_(model.links.size()), window_(window), warmup_(warmup_length(model)) {
    check_window(model, window);
    for (auto& slice : target_slices(model)) {
        Target t;
        t.var = slice.var;
        t.first_link = slice.first_link;
        t.parents = std::move(slice.parents);
        const auto d = static_cast<Index>(t.parents.size()) + 1;
        t.mean = Eigen::VectorXd::Zero(d);
        t.comom = Eigen::MatrixXd::Zero(d, d);
        targets_.push_back(std::move(t));
    }
}

Index CoefficientTracker::regression_rows() const {
    const Index all = std::max<Index>(0, rows_ - tau_max_);
    return window_ ? std::min<Index>(all, *window_) : all;
}

const Eigen::VectorXd& CoefficientTracker::at(Index row) const {
    const Index first = rows_ - static_cast<Index>(buffer_.size());
    return buffer_[static_cast<std::size_t>(row - first)];
}

Eigen::VectorXd CoefficientTracker::sample(const Target& target, Index row) const {
    const auto p = static_cast<Index>(target.parents.size());
    Eigen::VectorXd u(p + 1);
    for (Index k = 0; k < p; ++k) {
        const auto& par = target.parents[static_cast<std::size_t>(k)];
        u(k) = at(row - par.lag)(par.var);
    }
    u(p) = at(row)(target.var);
    return u;
}

std::optional<std::vector<double>> CoefficientTracker::push(const Eigen::VectorXd& row) {
    buffer_.push_back(row);
    ++rows_;
    const auto capacity = static_cast<std::size_t>(tau_max_ + 2 + (window_ ? *window_ : 0));
    while (buffer_.size() > capacity) buffer_.pop_front();

    const Index r = rows_ - 1;
    if (r >= tau_max_) {
        for (auto& t : targets_) {
            const Eigen::VectorXd u = sample(t, r);
            ++t.n;
            const Eigen::VectorXd delta = u - t.mean;
            t.mean += delta / static_cast<double>(t.n);
            t.comom.noalias() += (static_cast<double>(t.n - 1) / static_cast<double>(t.n)) * delta * delta.transpose();
        }
        const Index old = window_ ? r - *window_ : -1;
        if (window_ && old >= tau_max_) {
            for (auto& t : targets_) {
                const Eigen::VectorXd u = sample(t, old);
                const double n = static_cast<double>(t.n);
                const Eigen::VectorXd delta = u - t.mean;
                t.comom.noalias() -= (n / (n - 1.0)) * delta * delta.transpose();
                t.mean -= delta / (n - 1.0);
                --t.n;
            }
        }
    }
    if (rows_ < warmup_) return std::nullopt;

    std::vector<double> coeffs(n_links_, 0.0);
    regularized_ = false;
    for (const auto& t : targets_) {
        const auto p = static_cast<Index>(t.parents.size());
        bool reg = false;
        const Eigen::VectorXd beta = solve_gram(t.comom.topLeftCorner(p, p), t.comom.col(p).head(p), &reg);
        regularized_ = regularized_ || reg;
        for (Index k = 0; k < p; ++k) coeffs[t.first_link + static_cast<std::size_t>(k)] = beta(k);
    }
    return coeffs;
}

std::vector<double> online_coefficients(const Eigen::MatrixXd& buffer, const CausalModel& model,
                                        std::optional<int> window) {
    check_window(model, window);
    const Index T = buffer.rows();
    if (T < warmup_length(model)) throw InsufficientSamples("buffer is shorter than the warmup length");
    if (buffer.cols() != model.n_vars()) throw InputError("buffer width does not match the model");
    const Index start = window ? std::max<Index>(model.tau_max, T - *window) : model.tau_max;
    const Index n = T - start;
    std::vector<double> coeffs(model.links.size(), 0.0);
    for (const auto& slice : target_slices(model)) {
        const auto p = static_cast<Index>(slice.parents.size());
        Eigen::MatrixXd X(n, p);
        for (Index k = 0; k < p; ++k) {
            const auto& par = slice.parents[static_cast<std::size_t>(k)];
            X.col(k) = buffer.col(par.var).segment(start - par.lag, n);
        }
        Eigen::VectorXd y = buffer.col(slice.var).segment(start, n);
        X.rowwise() -= X.colwise().mean();
        y.array() -= y.mean();
        const Eigen::VectorXd beta = solve_gram(X.transpose() * X, X.transpose() * y);
        for (Index k = 0; k < p; ++k) coeffs[slice.first_link + static_cast<std::size_t>(k)] = beta(k);
    }
    return coeffs;
}

std::vector<double> thresholds_from_errors(const std::vector<std::vector<double>>& errors, std::size_t n_links) {
    std::vector<double> sum(n_links, 0.0), peak(n_links, 0.0);
    for (const auto& row : errors) {
        if (row.size() != n_links) throw InputError("error table row has the wrong length");
        for (std::size_t k = 0; k < n_links; ++k) {
            sum[k] += row[k] * row[k];
            peak[k] = std::max(peak[k], std::abs(row[k]));
        }
    }
    std::vector<double> out(n_links);
    for (std::size_t k = 0; k < n_links; ++k) out[k] = std::max(std::sqrt(sum[k]), peak[k]);
    return out;
}

ThresholdMatrix calibrate(const TimeSeriesDataset& normal, const CausalModel& model, std::optional<int> window) {
    model.validate();
    StreamPreprocessor pre(model, normal.names);
    CoefficientTracker tracker(model, window);
    std::vector<std::vector<double>> errors;
    std::vector<double> row(static_cast<std::size_t>(normal.cols()));
    for (Index t = 0; t < normal.rows(); ++t) {
        for (Index c = 0; c < normal.cols(); ++c) row[static_cast<std::size_t>(c)] = normal.values(t, c);
        const auto z = pre.push(row);
        if (!z) continue;
        auto coeffs = tracker.push(*z);
        if (!coeffs) continue;
        for (std::size_t k = 0; k < coeffs->size(); ++k) (*coeffs)[k] -= model.links[k].coeff;
        errors.push_back(std::move(*coeffs));
    }
    if (errors.empty()) {
        throw InsufficientSamples("calibration stream has " + std::to_string(tracker.rows()) +
                                  " model rows, warmup needs " + std::to_string(tracker.warmup()));
    }
    ThresholdMatrix out;
    out.values = thresholds_from_errors(errors, model.links.size());
    out.horizon = normal.rows();
    out.warmup = tracker.warmup();
    out.checkpoints = static_cast<Index>(errors.size());
    out.window = window;
    return out;
}

// ---------------------------------------------------------------------------

Detector::Detector(CausalModel model, ThresholdMatrix thresholds, DetectorConfig config,
                   std::vector<std::string> input_names)
    : model_(std::move(model)),
      thresholds_(std::move(thresholds)),
      config_(config),
      pre_(model_, std::move(input_names)),
      tracker_(model_, config.window) {
    model_.validate();
    thresholds_.validate(model_);
}

std::optional<AnomalyAlarm> Detector::push_sample(std::span<const double> row) {
    if (stopped_) throw StreamStopped("stream stopped after its first alarm");
    at_checkpoint_ = false;
    const auto z = pre_.push(row);
    if (!z) return std::nullopt;
    auto coeffs = tracker_.push(*z);
    if (!coeffs) return std::nullopt;
    at_checkpoint_ = true;
    coeffs_ = std::move(*coeffs);

    std::vector<double> errors(coeffs_.size());
    AnomalyAlarm alarm;
    for (std::size_t k = 0; k < coeffs_.size(); ++k) {
        errors[k] = coeffs_[k] - model_.links[k].coeff;
        const double e = std::abs(errors[k]);
        if (e > thresholds_.values[k]) {
            const auto& l = model_.links[k];
            alarm.broken.push_back({k, l.src, l.dst, l.lag, e, thresholds_.values[k]});
        }
    }
    history_.add(errors, thresholds_.values);
    if (alarm.broken.empty()) return std::nullopt;

    alarm.step = alarm.end_step = tracker_.rows() - 1;
    alarm.source_index = alarm.end_source_index = pre_.last_source_index();
    alarm.roots = ranking();
    if (config_.mode == AlarmMode::kStopOnFirst) stopped_ = true;
    return alarm;
}

// ---------------------------------------------------------------------------

std::optional<AnomalyAlarm> EpisodeCoalescer::on_checkpoint(const std::optional<AnomalyAlarm>& alarm) {
    if (!alarm) return finish();
    if (!open_) {
        open_ = alarm;
        return std::nullopt;
    }
    open_->end_step = alarm->end_step;
    open_->end_source_index = alarm->end_source_index;
    open_->roots = alarm->roots;
    for (const auto& b : alarm->broken) {
        auto it = std::find_if(open_->broken.begin(), open_->broken.end(),
                               [&](const BrokenLink& o) { return o.link == b.link; });
        if (it == open_->broken.end()) {
            open_->broken.push_back(b);
        } else if (b.error > it->error) {
            *it = b;
        }
    }
    std::sort(open_->broken.begin(), open_->broken.end(),
              [](const BrokenLink& a, const BrokenLink& b) { return a.link < b.link; });
    return std::nullopt;
}

std::optional<AnomalyAlarm> EpisodeCoalescer::finish() {
    auto out = std::move(open_);
    open_.reset();
    return out;
}

}  // namespace causalmon
