// Acceptance battery. Prints one PASS/FAIL/SKIP line per criterion and exits
// non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "causalmon/dataset.hpp"
#include "causalmon/detector.hpp"
#include "causalmon/discovery.hpp"
#include "causalmon/eval.hpp"
#include "causalmon/log.hpp"
#include "causalmon/synth.hpp"

namespace {

using namespace causalmon;
using Clock = std::chrono::steady_clock;

enum class Outcome { kPass, kFail, kSkip };

struct Verdict {
    Outcome outcome;
    std::string detail;
};

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* pattern, auto... args) {
    char buf[2048];
    std::snprintf(buf, sizeof(buf), pattern, args...);
    return buf;
}

using LinkSet = std::set<std::tuple<int, int, int>>;

LinkSet link_set(const std::vector<LagLink>& links) {
    LinkSet out;
    for (const auto& l : links) out.emplace(l.src, l.dst, l.lag);
    return out;
}

PreprocessConfig fixed(int t_s, int tau_max) {
    PreprocessConfig p;
    p.sampling_override = t_s;
    p.tau_max_override = tau_max;
    return p;
}

/// Runs a continuous detector over `stream` and returns every alarming checkpoint.
std::vector<AnomalyAlarm> detect_all(const TimeSeriesDataset& stream, const CausalModel& model,
                                     const ThresholdMatrix& thr, DetectorConfig cfg) {
    Detector det(model, thr, cfg, stream.names);
    const Eigen::MatrixXd rows = stream.values.transpose();
    std::vector<AnomalyAlarm> out;
    for (Index t = 0; t < rows.cols(); ++t) {
        if (auto a = det.push_sample({rows.col(t).data(), static_cast<std::size_t>(rows.rows())})) {
            out.push_back(std::move(*a));
        }
        if (det.stopped()) break;
    }
    return out;
}

// 1. Learn, calibrate and replay the calibration stream: no alarm at all.
Verdict zero_false_positives() {
    const auto start = Clock::now();
    int fixtures = 0, alarms = 0;
    std::string worst;
    for (int n : {3, 5, 8}) {
        for (std::uint64_t seed = 1; seed <= 20; ++seed) {
            const auto normal = generate_var(random_spec(n, seed), 2000);
            const auto model = discover(normal, PreprocessConfig{}, DiscoveryConfig{});
            const auto thr = calibrate(normal, model);
            const auto found = detect_all(normal, model, thr, {AlarmMode::kContinuous, std::nullopt});
            ++fixtures;
            if (!found.empty()) {
                alarms += static_cast<int>(found.size());
                worst = fmt("N=%d seed=%d", n, static_cast<int>(seed));
            }
        }
    }
    const double elapsed = seconds_since(start);
    const bool ok = alarms == 0 && elapsed < 60.0;
    return {ok ? Outcome::kPass : Outcome::kFail,
            fmt("%d fixtures, %d alarms%s, %.1f s (limit 60 s)", fixtures, alarms,
                worst.empty() ? "" : (" (last at " + worst + ")").c_str(), elapsed)};
}

// 2. Discovery on the toy process matches the full-conditioning oracle.
Verdict oracle_equivalence() {
    const auto start = Clock::now();
    const LinkSet planted = {{0, 0, 1}, {0, 1, 1}, {1, 2, 2}};
    DiscoveryConfig cfg;
    cfg.alpha = 0.01;
    int equal = 0, complete = 0, spurious = 0;
    std::string mismatches;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto ds = generate_var(toy_spec(seed), 2000);
        const auto found = link_set(discover(ds, fixed(1, 2), cfg).links);
        const auto oracle_links = oracle_full_ci(ds, 2, cfg.alpha);
        const auto oracle = link_set(oracle_links);
        if (found == oracle) {
            ++equal;
        } else {
            mismatches += fmt(" seed %d:", static_cast<int>(seed));
            for (const auto& l : oracle_links) {
                if (!found.count({l.src, l.dst, l.lag})) {
                    mismatches += fmt(" oracle-only x%d->x%d lag %d (p=%.2g%s)", l.src + 1, l.dst + 1, l.lag, l.pvalue,
                                      planted.count({l.src, l.dst, l.lag}) ? ", planted" : ", not planted");
                }
            }
            for (const auto& [src, dst, lag] : found) {
                if (!oracle.count({src, dst, lag})) mismatches += fmt(" found-only x%d->x%d lag %d", src + 1, dst + 1, lag);
            }
            mismatches += ";";
        }
        if (std::includes(found.begin(), found.end(), planted.begin(), planted.end())) ++complete;
        for (const auto& l : found) spurious += planted.count(l) ? 0 : 1;
    }
    const double elapsed = seconds_since(start);
    const double mean_spurious = spurious / 20.0;
    const bool ok = equal == 20 && complete == 20 && mean_spurious <= 1.0 && elapsed < 30.0;
    return {ok ? Outcome::kPass : Outcome::kFail,
            fmt("oracle-equal %d/20%s, planted recovered %d/20, spurious %.2f/seed (limit 1), %.1f s (limit 30 s)",
                equal, mismatches.empty() ? "" : (" (" + mismatches + ")").c_str(), complete, mean_spurious,
                elapsed)};
}

// 3. Incremental detector equals batch recomputation on attacked streams.
Verdict incremental_equals_batch() {
    const AnomalyKind kinds[] = {AnomalyKind::kLinkFlip, AnomalyKind::kLinkCut, AnomalyKind::kOffset,
                                 AnomalyKind::kStuck};
    int matched = 0, checkpoints = 0, alarm_checkpoints = 0;
    std::string failures;
    for (int k = 0; k < 20; ++k) {
        const std::uint64_t seed = 100 + static_cast<std::uint64_t>(k);
        const auto spec = random_spec(3 + k % 4, seed);
        const auto normal = generate_var(spec, 2000);
        const auto model = discover(normal, fixed(1, 2), DiscoveryConfig{});
        const std::optional<int> window = k % 2 ? std::optional<int>{100} : std::nullopt;
        const auto thr = calibrate(normal, model, window);

        AnomalySpec a;
        a.kind = kinds[k % 4];
        a.onset = 600;
        if (a.kind == AnomalyKind::kLinkFlip || a.kind == AnomalyKind::kLinkCut) {
            const auto& w = spec.weights[static_cast<std::size_t>(k) % spec.weights.size()];
            a.src = w.src;
            a.dst = w.dst;
            a.lag = w.lag;
        } else {
            a.variable = k % spec.n_vars;
            a.magnitude = 3.0;
        }
        auto attack_spec = spec;
        attack_spec.seed += 1000;
        const auto stream = inject_anomaly(attack_spec, generate_var(attack_spec, 1200), a).dataset;

        // Also compare with thresholds scaled down so that many checkpoints alarm.
        auto tight = thr;
        for (auto& v : tight.values) v *= 0.05;
        bool same = true;
        for (const ThresholdMatrix* t : {&thr, static_cast<const ThresholdMatrix*>(&tight)}) {
            const auto replay = oracle_replay(stream, model, *t, window);
            const auto alarms = detect_all(stream, model, *t, {AlarmMode::kContinuous, window});
            std::vector<std::pair<Index, std::vector<std::size_t>>> online, batch;
            for (const auto& al : alarms) {
                std::vector<std::size_t> links;
                for (const auto& b : al.broken) links.push_back(b.link);
                online.emplace_back(al.step, links);
            }
            for (std::size_t c = 0; c < replay.steps.size(); ++c) {
                if (!replay.broken[c].empty()) batch.emplace_back(replay.steps[c], replay.broken[c]);
            }
            checkpoints += static_cast<int>(replay.steps.size());
            alarm_checkpoints += static_cast<int>(batch.size());
            same = same && online == batch;
        }
        if (same) {
            ++matched;
        } else {
            failures += " " + std::to_string(seed);
        }
    }
    return {matched == 20 ? Outcome::kPass : Outcome::kFail,
            fmt("%d/20 fixtures identical at calibrated and 0.05x thresholds (%d checkpoints, %d alarming)%s", matched, checkpoints, alarm_checkpoints,
                failures.empty() ? "" : (", differing seeds:" + failures).c_str())};
}

// 4. Link attacks are found quickly and blamed on the attacked variable.
Verdict detection_and_explanation() {
    struct Attack {
        const char* name;
        AnomalyKind kind;
        int src, dst, lag;
    };
    const Attack attacks[] = {{"flip x2->x3", AnomalyKind::kLinkFlip, 1, 2, 2},
                              {"cut x1->x2", AnomalyKind::kLinkCut, 0, 1, 1}};
    const int window = 100;
    std::string detail;
    bool ok = true;
    for (const auto& atk : attacks) {
        int good = 0;
        double delay_sum = 0.0;
        int detected = 0;
        for (std::uint64_t seed = 1; seed <= 20; ++seed) {
            const auto spec = plant_spec(seed);
            const auto normal = generate_var(spec, 3000);
            const auto model = discover(normal, fixed(1, 2), DiscoveryConfig{});
            const auto thr = calibrate(normal, model, window);
            AnomalySpec a;
            a.kind = atk.kind;
            a.src = atk.src;
            a.dst = atk.dst;
            a.lag = atk.lag;
            a.onset = 1000;
            auto attack_spec = spec;
            attack_spec.seed += 1000;
            const auto stream = inject_anomaly(attack_spec, generate_var(attack_spec, 1500), a).dataset;
            const auto alarms = detect_all(stream, model, thr, {AlarmMode::kStopOnFirst, window});
            if (alarms.empty() || alarms[0].step < a.onset) continue;
            // Checkpoints are one per model row, and t_s = 1 here.
            const Index delay = alarms[0].step - a.onset;
            ++detected;
            delay_sum += static_cast<double>(delay);
            const auto top = static_cast<std::size_t>(std::ceil(0.1 * model.n_vars()));
            const auto& roots = alarms[0].roots;
            const bool blamed = std::any_of(roots.begin(), roots.begin() + static_cast<long>(std::min(top, roots.size())),
                                            [&](const RootScore& r) { return r.var == atk.src && r.score > 0.0; });
            if (delay <= 50 && blamed) ++good;
        }
        ok = ok && good >= 18;
        detail += fmt("%s%s: %d/20 (mean delay %.1f)", detail.empty() ? "" : "; ", atk.name, good,
                      detected ? delay_sum / detected : NAN);
    }
    return {ok ? Outcome::kPass : Outcome::kFail, detail + " (need >= 18/20 each)"};
}

// 5. F1 arithmetic of the reference table, directly and through evaluate().
Verdict metric_formulas() {
    const double direct = f1_score(0.96, 0.63);
    const double perfect = f1_score(1.0, 1.0);
    // 800 five-row episodes; 504 detected plus 21 stray alarms gives
    // Pr = 504 / 525 = 0.96 and Rec = 504 / 800 = 0.63.
    std::vector<int> labels(8000, 0);
    std::vector<AlarmSpan> alarms;
    for (int e = 0; e < 800; ++e) {
        std::fill(labels.begin() + e * 10, labels.begin() + e * 10 + 5, 1);
        if (e < 504) alarms.push_back({e * 10 + 2, e * 10 + 3});
        if (e < 21) alarms.push_back({e * 10 + 7, e * 10 + 8});
    }
    const auto m = evaluate(alarms, labels);
    const auto all = evaluate({{0, 7999}}, std::vector<int>(8000, 1));
    const bool ok = std::abs(direct - 0.76) <= 0.005 && std::abs(perfect - 1.0) <= 0.005 &&
                    std::abs(m.precision - 0.96) < 1e-12 && std::abs(m.recall - 0.63) < 1e-12 &&
                    std::abs(m.f1 - 0.76) <= 0.005 && std::abs(all.f1 - 1.0) <= 0.005;
    return {ok ? Outcome::kPass : Outcome::kFail,
            fmt("F1(0.96, 0.63) = %.4f, via evaluate() %.4f (0.76 +/- 0.005); F1(1, 1) = %.4f, via evaluate() %.4f",
                direct, m.f1, perfect, all.f1)};
}

// 6. Per-checkpoint detection cost at N = 50 with a 10^4-row buffer.
Verdict latency() {
    const auto spec = random_spec(50, 7);
    const auto normal = generate_var(spec, 12000);
    std::vector<LagLink> links;
    for (const auto& w : spec.weights) links.push_back({w.src, w.dst, w.lag, 0.0, 0.0, w.weight});
    auto model = fit_coefficients(apply_scaling(normal, column_scaling(normal)), links, spec.tau_max_true);
    model.preprocess.scaling.clear();
    const auto scaling = column_scaling(normal);
    for (std::size_t j = 0; j < scaling.size(); ++j) model.preprocess.scaling[normal.names[j]] = scaling[j];
    ThresholdMatrix thr;
    thr.values.assign(model.links.size(), 1e9);
    thr.window = 10000;

    Detector det(model, thr, {AlarmMode::kContinuous, 10000}, normal.names);
    const Eigen::MatrixXd rows = normal.values.transpose();
    std::vector<double> ms;
    for (Index t = 0; t < rows.cols(); ++t) {
        const auto t0 = Clock::now();
        det.push_sample({rows.col(t).data(), static_cast<std::size_t>(rows.rows())});
        const double elapsed = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
        if (det.at_checkpoint() && t >= 10000) ms.push_back(elapsed);
    }
    if (ms.empty()) return {Outcome::kFail, "no checkpoint with a full buffer"};
    const double mean = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
    std::sort(ms.begin(), ms.end());
    const double p99 = ms[static_cast<std::size_t>(0.99 * static_cast<double>(ms.size() - 1))];
    const bool ok = mean < 10.0 && p99 < 10.0;
    return {ok ? Outcome::kPass : Outcome::kFail,
            fmt("N=50, %zu links, window 10^4: mean %.3f ms, p99 %.3f ms over %zu checkpoints (limit 10 ms)",
                model.links.size(), mean, p99, ms.size())};
}

// 7. Optional run on a user-supplied SWaT export.
Verdict swat_integration() {
    const char* dir = std::getenv("CAUSALMON_SWAT_DIR");
    if (!dir || !*dir) return {Outcome::kSkip, "CAUSALMON_SWAT_DIR not set"};
    const std::filesystem::path root(dir);
    CsvSchema schema;
    schema.timestamp_column = "Timestamp";
    schema.label_column = "Normal/Attack";
    const auto normal = load_csv(root / "normal.csv", schema);
    std::vector<int> labels;
    const auto attack = load_csv(root / "attack.csv", schema, &labels);
    // A labels.csv with one id per attack, when present, separates adjacent attacks.
    if (std::filesystem::exists(root / "labels.csv")) labels = read_labels(root / "labels.csv");
    const auto model = discover(normal, PreprocessConfig{}, DiscoveryConfig{});
    const auto thr = calibrate(normal, model);
    std::set<int> involved;
    for (const auto& l : model.links) {
        involved.insert(l.src);
        involved.insert(l.dst);
    }
    std::vector<AlarmSpan> spans;
    for (const auto& a : detect_all(attack, model, thr, {AlarmMode::kContinuous, std::nullopt})) {
        spans.push_back({a.source_index, a.end_source_index});
    }
    const auto m = evaluate(spans, labels);
    const bool ok = m.recall == 1.0 && involved.size() >= 30;
    return {ok ? Outcome::kPass : Outcome::kFail,
            fmt("recall %.2f over %lld attacks, %zu variables in the model (need 100%% and >= 30)", m.recall,
                static_cast<long long>(m.tp + m.fn), involved.size())};
}

// 8. False links on independent noise stay within twice the nominal rate.
Verdict ci_calibration() {
    const int n = 5, tau = 3;
    const double alpha = 0.05;
    DiscoveryConfig cfg;
    cfg.alpha = alpha;
    long total = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        VarProcessSpec white;
        white.n_vars = n;
        white.noise_std.assign(n, 1.0);
        white.seed = seed;
        total += static_cast<long>(discover(generate_var(white, 1000), fixed(1, tau), cfg).links.size());
    }
    const double mean = static_cast<double>(total) / 100.0;
    const double bound = 2.0 * alpha * n * n * tau;
    return {mean <= bound ? Outcome::kPass : Outcome::kFail,
            fmt("mean %.2f links per dataset, bound 2*alpha*N^2*tau_max = %.2f", mean, bound)};
}

}  // namespace

/// Usage: causalmon_acceptance [--allow-fail ACn]... [--report FILE]
/// A FAIL on an allowed criterion is still printed but does not change the
/// exit status.
int main(int argc, char** argv) {
    causalmon::set_log_level(causalmon::LogLevel::kQuiet);
    std::set<std::string> allowed;
    std::FILE* report = nullptr;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--allow-fail" && i + 1 < argc) {
            allowed.insert(argv[++i]);
        } else if (arg == "--report" && i + 1 < argc) {
            report = std::fopen(argv[++i], "w");
        } else {
            std::fprintf(stderr, "usage: %s [--allow-fail ACn]... [--report FILE]\n", argv[0]);
            return 2;
        }
    }
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
        {"AC1 zero false positives on calibration streams", zero_false_positives},
        {"AC2 discovery equals full-conditioning oracle", oracle_equivalence},
        {"AC3 incremental detector equals batch replay", incremental_equals_batch},
        {"AC4 detection delay and root-cause ranking", detection_and_explanation},
        {"AC5 F1 arithmetic", metric_formulas},
        {"AC6 per-checkpoint latency", latency},
        {"AC7 SWaT integration", swat_integration},
        {"AC8 CI test calibration on independent noise", ci_calibration},
    };
    int passed = 0, failed = 0, tolerated = 0, skipped = 0;
    for (const auto& [name, run] : criteria) {
        Verdict v{Outcome::kFail, ""};
        try {
            v = run();
        } catch (const std::exception& e) {
            v = {Outcome::kFail, std::string("exception: ") + e.what()};
        }
        const auto id = name.substr(0, name.find(' '));
        const char* tag = v.outcome == Outcome::kPass ? "PASS" : v.outcome == Outcome::kSkip ? "SKIP" : "FAIL";
        std::string line = std::string(tag) + " " + name + ": " + v.detail;
        switch (v.outcome) {
        case Outcome::kPass: ++passed; break;
        case Outcome::kSkip: ++skipped; break;
        case Outcome::kFail:
            if (allowed.count(id)) {
                ++tolerated;
                line += " [allowed failure]";
            } else {
                ++failed;
            }
            break;
        }
        std::printf("%s\n", line.c_str());
        std::fflush(stdout);
        if (report) std::fprintf(report, "%s\n", line.c_str());
    }
    const auto summary = fmt("summary: %d passed, %d failed, %d allowed failures, %d skipped", passed, failed,
                             tolerated, skipped);
    std::printf("%s\n", summary.c_str());
    if (report) {
        std::fprintf(report, "%s\n", summary.c_str());
        std::fclose(report);
    }
    return failed == 0 ? 0 : 1;
}
