#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "causalmon/dataset.hpp"
#include "causalmon/detector.hpp"
#include "causalmon/discovery.hpp"
#include "causalmon/error.hpp"
#include "causalmon/eval.hpp"
#include "causalmon/json_io.hpp"
#include "causalmon/log.hpp"
#include "causalmon/synth.hpp"

namespace causalmon {
namespace {

struct CsvOptions {
    std::string timestamp;
    std::string label;
    std::vector<std::string> ignore;
    bool forward_fill = false;

    void add_to(CLI::App* app) {
        app->add_option("--timestamp-column", timestamp, "Column holding timestamps (excluded from the variables)");
        app->add_option("--label-column", label, "Column holding anomaly labels (excluded from the variables)");
        app->add_option("--ignore", ignore, "Columns to leave out")->delimiter(',');
        app->add_flag("--forward-fill", forward_fill, "Repeat the previous value for empty or NaN cells");
    }

    CsvSchema schema() const {
        CsvSchema s;
        if (!timestamp.empty()) s.timestamp_column = timestamp;
        if (!label.empty()) s.label_column = label;
        s.ignore_columns = ignore;
        s.missing = forward_fill ? MissingPolicy::kForwardFill : MissingPolicy::kReject;
        return s;
    }

    bool skipped(const std::string& name) const {
        return name == timestamp || name == label || std::find(ignore.begin(), ignore.end(), name) != ignore.end();
    }
};

std::optional<int> positive_option(int v) { return v > 0 ? std::optional<int>(v) : std::nullopt; }

RootSide parse_side(const std::string& s) { return s == "child" ? RootSide::kChild : RootSide::kParent; }

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot write " + path);
    f << text;
}

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r\"");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\"");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(trim(c));
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

/// Incremental CSV row reader for streaming input.
class RowReader {
public:
    RowReader(std::istream& in, const CsvOptions& opts, bool follow, double idle_timeout)
        : in_(in), opts_(opts), follow_(follow), idle_timeout_(idle_timeout) {}

    std::vector<std::string> header() {
        std::string line;
        if (!next_line(line)) throw InputError("stream is empty, header row expected");
        if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
        header_ = split(line);
        std::vector<std::string> names;
        for (std::size_t c = 0; c < header_.size(); ++c) {
            if (opts_.skipped(header_[c])) continue;
            names.push_back(header_[c]);
            columns_.push_back(c);
        }
        previous_.assign(columns_.size(), std::numeric_limits<double>::quiet_NaN());
        return names;
    }

    /// False at end of stream.
    bool next(std::vector<double>& row) {
        std::string line;
        do {
            if (!next_line(line)) return false;
        } while (trim(line).empty());
        const auto cells = split(line);
        const auto where = "stream line " + std::to_string(line_no_);
        if (cells.size() != header_.size()) throw InputError(where + " has the wrong number of cells");
        row.resize(columns_.size());
        for (std::size_t k = 0; k < columns_.size(); ++k) {
            const auto& cell = cells[columns_[k]];
            const std::string l = [&] {
                std::string s = cell;
                std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::tolower(ch); });
                return s;
            }();
            if (cell.empty() || l == "nan" || l == "na" || l == "null") {
                if (!opts_.forward_fill || std::isnan(previous_[k])) {
                    throw InputError(where + ": missing value in column '" + header_[columns_[k]] + "'");
                }
                row[k] = previous_[k];
                continue;
            }
            const char* b = cell.data() + (cell.front() == '+' ? 1 : 0);
            const char* e = cell.data() + cell.size();
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(b, e, v);
            if (ec != std::errc() || ptr != e || !std::isfinite(v)) {
                throw InputError(where + ": non-numeric cell '" + cell + "'");
            }
            row[k] = previous_[k] = v;
        }
        return true;
    }

private:
    bool next_line(std::string& line) {
        std::string partial;
        auto idle_since = std::chrono::steady_clock::now();
        for (;;) {
            std::string chunk;
            if (std::getline(in_, chunk)) {
                if (!in_.eof()) {
                    line = partial + chunk;
                    ++line_no_;
                    if (!line.empty() && line.back() == '\r') line.pop_back();
                    return true;
                }
                partial += chunk;
            }
            if (!follow_) {
                if (partial.empty()) return false;
                line = partial;
                ++line_no_;
                return true;
            }
            in_.clear();
            if (idle_timeout_ > 0.0 &&
                std::chrono::duration<double>(std::chrono::steady_clock::now() - idle_since).count() > idle_timeout_) {
                if (partial.empty()) return false;
                line = partial;
                ++line_no_;
                return true;
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(100));
            if (!chunk.empty()) idle_since = std::chrono::steady_clock::now();
        }
    }

    std::istream& in_;
    const CsvOptions& opts_;
    bool follow_;
    double idle_timeout_;
    std::vector<std::string> header_;
    std::vector<std::size_t> columns_;
    std::vector<double> previous_;
    std::size_t line_no_ = 0;
};

std::vector<RootScore> scores_from_alarms(const CausalModel& model, const std::vector<AnomalyAlarm>& alarms,
                                          RootSide side) {
    std::vector<double> total(static_cast<std::size_t>(model.n_vars()), 0.0);
    for (const auto& a : alarms) {
        for (const auto& b : a.broken) {
            total[static_cast<std::size_t>(side == RootSide::kParent ? b.src : b.dst)] += b.error * b.error;
        }
    }
    std::vector<RootScore> out;
    for (int v = 0; v < model.n_vars(); ++v) out.push_back({v, std::sqrt(total[static_cast<std::size_t>(v)])});
    std::stable_sort(out.begin(), out.end(), [](const RootScore& a, const RootScore& b) { return a.score > b.score; });
    return out;
}

VarProcessSpec load_spec(const std::string& spec) {
    if (spec == "toy") return toy_spec();
    if (spec == "plant") return plant_spec();
    if (spec.rfind("random:", 0) == 0) return random_spec(std::stoi(spec.substr(7)), 42);
    return spec_from_json(read_json_file(spec));
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
    CLI::App app{"Causal-graph based anomaly detection and root-cause ranking for multivariate time series",
                 "causalmon"};
    app.set_version_flag("--version", std::string("causalmon ") + CAUSALMON_VERSION);
    app.require_subcommand(1);
    app.fallthrough();
    bool quiet = false, verbose = false;
    app.add_flag("-q,--quiet", quiet, "Suppress warnings");
    app.add_flag("-v,--verbose", verbose, "Print progress information");

    // learn
    auto* learn = app.add_subcommand("learn", "Learn a causal model from normal data");
    std::string learn_input, learn_out, learn_dot, prune_scope = "full";
    PreprocessConfig pcfg;
    DiscoveryConfig dcfg;
    double pc_alpha = 0.0;
    int ts = 0, tau_max = 0, max_conds = -1, max_parents = 0;
    bool no_standardize = false;
    CsvOptions learn_csv;
    learn->add_option("--input", learn_input, "Normal-operation CSV")->required();
    learn->add_option("--out", learn_out, "Model JSON to write")->required();
    learn->add_option("--alpha", dcfg.alpha, "MCI significance level")->capture_default_str();
    learn->add_option("--pc-alpha", pc_alpha, "PC-stage significance level (default: --alpha)");
    learn->add_option("--tau-cap", pcfg.tau_cap, "Upper bound on the maximum lag")->capture_default_str();
    learn->add_option("--ts", ts, "Fixed subsampling interval (skips the spectral choice)");
    learn->add_option("--tau-max", tau_max, "Fixed maximum lag (skips the spectral choice)");
    learn->add_option("--constant-ratio", pcfg.constant_ratio, "Near-constant cutoff")->capture_default_str();
    learn->add_option("--nyquist-multiplier", pcfg.nyquist_multiplier, "Sampling safety factor")->capture_default_str();
    learn->add_flag("--literal-constant-test", pcfg.literal_constant_test, "Drop columns with mean < ratio * std");
    learn->add_flag("--mean-pool", pcfg.mean_pool, "Average blocks of t_s rows instead of decimating");
    learn->add_flag("--no-standardize", no_standardize, "Keep the original units");
    learn->add_option("--max-conds-dim", max_conds, "Largest PC conditioning set");
    learn->add_option("--max-parents", max_parents, "Keep at most this many PC candidates per target");
    learn->add_option("--prune-scope", prune_scope, "Mean used for pruning: full (N*N*tau_max entries) or retained")
        ->check(CLI::IsMember({"full", "retained"}))
        ->capture_default_str();
    learn->add_option("--threads", dcfg.threads, "Worker threads (0 = all cores)");
    learn->add_option("--dot", learn_dot, "Also write the graph in Graphviz format");
    learn_csv.add_to(learn);

    // calibrate
    auto* cal = app.add_subcommand("calibrate", "Compute per-link thresholds on normal data");
    std::string cal_input, cal_model, cal_out;
    int cal_window = 0;
    CsvOptions cal_csv;
    cal->add_option("--input", cal_input, "Normal-operation CSV (the learning data)")->required();
    cal->add_option("--model", cal_model, "Model JSON")->required();
    cal->add_option("--out", cal_out, "Threshold JSON to write")->required();
    cal->add_option("--window", cal_window, "Sliding regression window in subsampled rows (default: expanding)");
    cal_csv.add_to(cal);

    // detect
    auto* det = app.add_subcommand("detect", "Monitor a CSV stream and emit alarms as JSON lines");
    std::string det_model, det_thr, det_input, det_out, det_side = "parent";
    int det_window = 0;
    bool follow = false, stop_first = false;
    double idle_timeout = 0.0;
    CsvOptions det_csv;
    det->add_option("--model", det_model, "Model JSON")->required();
    det->add_option("--thresholds", det_thr, "Threshold JSON")->required();
    det->add_option("--input", det_input, "Stream CSV (default: standard input)");
    det->add_option("--out", det_out, "Alarm log to write (default: standard output)");
    det->add_flag("--follow", follow, "Keep reading as the input file grows");
    det->add_option("--idle-timeout", idle_timeout, "With --follow, stop after this many idle seconds (0 = never)");
    det->add_flag("--stop-on-first", stop_first, "Stop at the first alarm and exit with status 2");
    det->add_option("--window", det_window, "Sliding regression window; must match calibration");
    det->add_option("--side", det_side, "Root-cause aggregation side")->check(CLI::IsMember({"parent", "child"}));
    det_csv.add_to(det);

    // explain
    auto* exp = app.add_subcommand("explain", "Rank root-cause variables");
    std::string exp_log, exp_model, exp_side = "parent", exp_stream, exp_thr;
    int exp_window = 0;
    bool exp_json = false, exp_all = false;
    CsvOptions exp_csv;
    exp->add_option("--alarm-log", exp_log, "Alarm log from detect");
    exp->add_option("--model", exp_model, "Model JSON")->required();
    exp->add_option("--side", exp_side, "Aggregate over links leaving (parent) or entering (child) a variable")
        ->check(CLI::IsMember({"parent", "child"}))
        ->capture_default_str();
    exp->add_option("--stream", exp_stream, "Replay this CSV and rank on every checkpoint's error");
    exp->add_option("--thresholds", exp_thr, "Threshold JSON (with --stream)");
    exp->add_option("--window", exp_window, "Sliding regression window (with --stream)");
    exp->add_flag("--all-errors", exp_all, "With --stream, score every checkpoint error, not only broken links");
    exp->add_flag("--json", exp_json, "Print JSON instead of a table");
    exp_csv.add_to(exp);

    // eval
    auto* ev = app.add_subcommand("eval", "Score an alarm log against labels");
    std::string ev_alarms, ev_labels, ev_out;
    WindowPolicy policy;
    ev->add_option("--alarms", ev_alarms, "Alarm log from detect")->required();
    ev->add_option("--labels", ev_labels, "CSV with a label column (0 = normal) and optional index column")->required();
    ev->add_option("--grace", policy.grace, "Rows after an episode in which alarms still count")->capture_default_str();
    ev->add_flag("--point-level", policy.point_level, "Score individual rows instead of episodes");
    ev->add_option("--out", ev_out, "Write the metrics here instead of standard output");

    // synth
    auto* syn = app.add_subcommand("synth", "Generate a synthetic fixture");
    std::string syn_spec, syn_attack, syn_dir = ".";
    Index syn_T = 2000;
    std::optional<std::uint64_t> syn_seed;
    syn->add_option("--spec", syn_spec, "Process JSON, or toy, plant, random:N")->required();
    syn->add_option("--T", syn_T, "Rows to generate")->capture_default_str();
    syn->add_option("--seed", syn_seed, "Override the spec's seed");
    syn->add_option("--attack", syn_attack, "Anomaly JSON");
    syn->add_option("--out-dir", syn_dir, "Fixture directory")->capture_default_str();

    // report
    auto* rep = app.add_subcommand("report", "Summarize a metrics file");
    std::string rep_metrics, rep_format = "md";
    rep->add_option("--metrics", rep_metrics, "Metrics JSON from eval")->required();
    rep->add_option("--format", rep_format, "md or json")->check(CLI::IsMember({"md", "json"}))->capture_default_str();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitInputError;
    }

    set_log_level(quiet ? LogLevel::kQuiet : verbose ? LogLevel::kInfo : LogLevel::kWarn);
    try {
        if (*learn) {
            if (pc_alpha > 0.0) dcfg.pc_alpha = pc_alpha;
            if (ts > 0) pcfg.sampling_override = ts;
            if (tau_max > 0) pcfg.tau_max_override = tau_max;
            if (max_conds >= 0) dcfg.max_conds_dim = max_conds;
            dcfg.max_parents = positive_option(max_parents);
            dcfg.prune_scope = prune_scope == "retained" ? PruneScope::kRetainedLinks : PruneScope::kFullTensor;
            pcfg.standardize = !no_standardize;
            const auto ds = load_csv(learn_input, learn_csv.schema());
            const auto model = discover(ds, pcfg, dcfg);
            save_model(learn_out, model);
            if (!learn_dot.empty()) write_text(learn_dot, to_dot(model));
            log_info("learned " + std::to_string(model.links.size()) + " links");
        } else if (*cal) {
            const auto model = load_model(cal_model);
            const auto ds = load_csv(cal_input, cal_csv.schema());
            const auto thr = calibrate(ds, model, positive_option(cal_window));
            write_json_file(cal_out, thresholds_to_json(model, thr));
        } else if (*det) {
            const auto model = load_model(det_model);
            auto thr = thresholds_from_json(read_json_file(det_thr), model);
            std::ifstream file;
            if (!det_input.empty()) {
                file.open(det_input);
                if (!file) throw InputError("cannot open " + det_input);
            } else if (follow) {
                throw InputError("--follow needs --input");
            }
            std::istream& source = det_input.empty() ? in : file;
            std::ofstream log_file;
            if (!det_out.empty()) {
                log_file.open(det_out, std::ios::binary);
                if (!log_file) throw InputError("cannot write " + det_out);
            }
            std::ostream& sink = det_out.empty() ? out : log_file;

            RowReader reader(source, det_csv, follow, idle_timeout);
            DetectorConfig cfg;
            cfg.mode = stop_first ? AlarmMode::kStopOnFirst : AlarmMode::kContinuous;
            cfg.window = positive_option(det_window);
            cfg.side = parse_side(det_side);
            Detector detector(model, std::move(thr), cfg, reader.header());
            EpisodeCoalescer episodes;
            auto emit = [&](const AnomalyAlarm& a) { sink << dump_json(alarm_to_json(model, a)) << '\n' << std::flush; };
            std::vector<double> row;
            while (reader.next(row)) {
                const auto alarm = detector.push_sample(row);
                if (stop_first && alarm) {
                    emit(*alarm);
                    return kExitAlarm;
                }
                if (detector.at_checkpoint()) {
                    if (const auto closed = episodes.on_checkpoint(alarm)) emit(*closed);
                }
            }
            if (const auto closed = episodes.finish()) emit(*closed);
        } else if (*exp) {
            const auto model = load_model(exp_model);
            const auto side = parse_side(exp_side);
            std::vector<RootScore> scores;
            if (!exp_stream.empty()) {
                if (exp_thr.empty()) throw InputError("--stream needs --thresholds");
                auto thr = thresholds_from_json(read_json_file(exp_thr), model);
                const auto ds = load_csv(exp_stream, exp_csv.schema());
                DetectorConfig cfg{AlarmMode::kContinuous, positive_option(exp_window), side,
                                   exp_all ? ErrorScope::kAllLinks : ErrorScope::kBrokenLinks};
                Detector detector(model, std::move(thr), cfg, ds.names);
                std::vector<double> row(static_cast<std::size_t>(ds.cols()));
                for (Index t = 0; t < ds.rows(); ++t) {
                    for (Index c = 0; c < ds.cols(); ++c) row[static_cast<std::size_t>(c)] = ds.values(t, c);
                    detector.push_sample(row);
                }
                scores = detector.ranking();
            } else {
                if (exp_log.empty()) throw InputError("explain needs --alarm-log or --stream");
                std::ifstream f(exp_log);
                if (!f) throw InputError("cannot open " + exp_log);
                std::vector<AnomalyAlarm> alarms;
                std::string line;
                while (std::getline(f, line)) {
                    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
                    try {
                        alarms.push_back(alarm_from_json(json::parse(line), model));
                    } catch (const json::exception& e) {
                        throw InputError(std::string("malformed alarm log: ") + e.what());
                    }
                }
                if (alarms.empty()) throw InputError("alarm log is empty");
                scores = scores_from_alarms(model, alarms, side);
            }
            if (exp_json) {
                json j = json::array();
                for (const auto& s : scores) {
                    j.push_back({{"var", model.names[static_cast<std::size_t>(s.var)]}, {"score", s.score}});
                }
                out << dump_json(j, 2) << '\n';
            } else {
                out << "rank\tvariable\tscore\n";
                char buf[64];
                for (std::size_t r = 0; r < scores.size(); ++r) {
                    std::snprintf(buf, sizeof(buf), "%.6g", scores[r].score);
                    out << r + 1 << '\t' << model.names[static_cast<std::size_t>(scores[r].var)] << '\t' << buf << '\n';
                }
            }
        } else if (*ev) {
            const auto metrics = evaluate(read_alarm_log(std::filesystem::path(ev_alarms)), read_labels(ev_labels), policy);
            const auto text = dump_json(metrics_to_json(metrics), 2) + "\n";
            if (ev_out.empty()) {
                out << text;
            } else {
                write_text(ev_out, text);
            }
        } else if (*syn) {
            auto spec = load_spec(syn_spec);
            if (syn_seed) spec.seed = *syn_seed;
            std::optional<AnomalySpec> attack;
            if (!syn_attack.empty()) attack = anomaly_from_json(read_json_file(syn_attack), spec);
            const auto paths = write_fixture(syn_dir, spec, syn_T, attack);
            json j = {{"spec", paths.spec.string()}, {"normal", paths.normal.string()}};
            if (paths.attack) j["attack"] = paths.attack->string();
            if (paths.labels) j["labels"] = paths.labels->string();
            out << dump_json(j, 2) << '\n';
        } else if (*rep) {
            const auto metrics = metrics_from_json(read_json_file(rep_metrics));
            out << (rep_format == "md" ? metrics_markdown(metrics) : dump_json(metrics_to_json(metrics), 2) + "\n");
        }
    } catch (const Error& e) {
        err << "causalmon: error: " << e.what() << '\n';
        return kExitInputError;
    } catch (const std::exception& e) {
        err << "causalmon: error: " << e.what() << '\n';
        return kExitInputError;
    }
    return kExitOk;
}

}  // namespace causalmon
