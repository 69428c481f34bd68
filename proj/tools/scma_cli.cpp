// Command-line front end for the experiment harness.

#include <scma/scma.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

// One JSON object per line on stderr.
void log_event(const char* level, const std::string& event, scma::json fields = scma::json::object()) {
    scma::json line = scma::json::object();
    line["level"] = level;
    line["event"] = event;
    for (auto& [k, v] : fields.items()) line[k] = v;
    std::fprintf(stderr, "%s\n", line.dump().c_str());
}

std::vector<double> parse_range(const std::string& text) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    for (;;) {
        const auto pos = text.find(':', start);
        parts.push_back(text.substr(start, pos - start));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    auto num = [&](const std::string& s) {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw scma::parameter_error("bad number '" + s + "' in range '" + text + "'");
        return v;
    };
    if (parts.size() == 1) return {num(parts[0])};
    if (parts.size() != 3) throw scma::parameter_error("range must be a or a:b:step, got '" + text + "'");
    const double a = num(parts[0]), b = num(parts[1]), step = num(parts[2]);
    if (!(step > 0) || b < a) throw scma::parameter_error("range needs a <= b and step > 0");
    std::vector<double> out;
    for (int i = 0;; ++i) {
        const double v = a + i * step;
        if (v > b + 1e-9 * step) break;
        out.push_back(v);
    }
    return out;
}

std::vector<scma::Algorithm> parse_algorithms(const std::string& list) {
    std::vector<scma::Algorithm> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = list.find(',', start);
        const auto item = list.substr(start, pos - start);
        if (!item.empty()) out.push_back(scma::parse_algorithm(item));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

struct Common {
    std::string scenario_path;
    std::string algos;
    std::optional<int> trials;
    std::optional<std::uint64_t> seed;
    std::string pmax;
    std::string out;
    std::string format = "csv";
    bool bits = false;
    std::optional<unsigned> threads;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--scenario", c.scenario_path, "JSON scenario file")->check(CLI::ExistingFile);
    app->add_option("--algo", c.algos, "comma-separated: max-sr,max-min,fuo,oa,pf,oracle");
    app->add_option("--trials", c.trials, "Monte-Carlo trials")->check(CLI::PositiveNumber);
    app->add_option("--seed", c.seed, "master seed");
    app->add_option("--pmax-dbm", c.pmax, "budget sweep a:b:step in dBm, or a single value");
    app->add_option("--out", c.out, "output path (default: stdout)");
    app->add_option("--format", c.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
    app->add_flag("--bits", c.bits, "report rates in bits instead of nats");
    app->add_option("--threads", c.threads, "worker threads (0 = all cores)");
}

scma::Scenario build_scenario(const Common& c) {
    scma::Scenario sc = c.scenario_path.empty() ? scma::Scenario{} : scma::load_scenario(c.scenario_path);
    if (!c.algos.empty()) sc.algorithms = parse_algorithms(c.algos);
    if (c.trials) sc.trials = *c.trials;
    if (c.seed) {
        sc.seed = *c.seed;
        sc.system.seed = *c.seed;
    }
    if (!c.pmax.empty()) sc.pmax_sweep_dbm = parse_range(c.pmax);
    if (c.threads) sc.threads = *c.threads;
    sc.validate();
    return sc;
}

std::string suffixed(const std::string& path, const std::string& tag) {
    const auto dot = path.find_last_of('.');
    const auto slash = path.find_last_of('/');
    if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) return path + "." + tag;
    return path.substr(0, dot) + "." + tag + path.substr(dot);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Subcarrier and power allocation experiments for uplink SCMA"};
    app.require_subcommand(1);

    Common sweep_opts, csi_opts, trace_opts;
    bool timing = false;
    std::string summary_path;
    auto* sweep = app.add_subcommand("sweep", "sum-rate and fairness versus power budget");
    add_common(sweep, sweep_opts);
    sweep->add_flag("--timing", timing, "record wall-clock per allocation (output is then not reproducible)");
    sweep->add_option("--summary", summary_path, "also write per-(algorithm, budget) means here");

    std::vector<double> rho2;
    int max_period = 0;
    auto* csi = app.add_subcommand("csi", "retention under outdated channel knowledge");
    add_common(csi, csi_opts);
    csi->add_option("--rho2", rho2, "squared fading correlations between slots");
    csi->add_option("--max-period", max_period, "longest pilot period in slots")->check(CLI::PositiveNumber);

    int inits = 3;
    std::string finals_path;
    auto* trace = app.add_subcommand("trace", "per-cycle objectives from several random starts");
    add_common(trace, trace_opts);
    trace->add_option("--inits", inits, "number of random initial points")->check(CLI::PositiveNumber);
    trace->add_option("--finals", finals_path, "also write the final rate and fairness of each run here");

    int instances = 20, restarts = 10;
    std::optional<std::uint64_t> oracle_seed;
    std::string oracle_out, oracle_format = "csv";
    auto* oracle = app.add_subcommand("oracle-check", "compare Max-SR with exhaustive search on tiny instances");
    oracle->add_option("--instances", instances, "number of instances")->check(CLI::PositiveNumber);
    oracle->add_option("--restarts", restarts, "Max-SR restarts per instance")->check(CLI::PositiveNumber);
    oracle->add_option("--seed", oracle_seed, "master seed");
    oracle->add_option("--out", oracle_out, "output path (default: stdout)");
    oracle->add_option("--format", oracle_format, "csv or json")->check(CLI::IsMember({"csv", "json"}));

    CLI11_PARSE(app, argc, argv);

    try {
        if (*sweep) {
            scma::Scenario sc = build_scenario(sweep_opts);
            sc.record_timing = sc.record_timing || timing;
            log_event("info", "sweep_start", {{"trials", sc.trials}, {"budgets", sc.pmax_sweep_dbm.size()}, {"seed", sc.seed}});
            const auto rows = scma::run_sweep(sc);
            const auto fmt = scma::parse_format(sweep_opts.format);
            scma::emit(scma::result_table(rows, sweep_opts.bits), fmt, sweep_opts.out);
            if (!summary_path.empty())
                scma::emit(scma::summary_table(scma::summarize(rows), sweep_opts.bits), fmt, summary_path);
            int errors = 0, warnings = 0;
            for (const auto& r : rows) {
                if (r.status.rfind("error", 0) == 0) {
                    ++errors;
                    log_event("error", "allocation_failed",
                              {{"algorithm", r.algorithm}, {"pmax_dbm", r.pmax_dbm}, {"trial", r.trial}, {"detail", r.status}});
                } else if (r.status != "ok") {
                    ++warnings;
                }
            }
            log_event(errors ? "error" : "info", "sweep_done", {{"rows", rows.size()}, {"errors", errors}, {"warnings", warnings}});
            return errors ? 2 : 0;
        }
        if (*csi) {
            scma::Scenario sc = build_scenario(csi_opts);
            if (!sc.csi) sc.csi = scma::CsiSettings{};
            if (!rho2.empty()) sc.csi->rho2 = rho2;
            if (max_period > 0) sc.csi->max_period = max_period;
            sc.validate();
            log_event("info", "csi_start", {{"trials", sc.trials}, {"pmax_dbm", sc.pmax_sweep_dbm.front()}, {"seed", sc.seed}});
            const auto rows = scma::run_outdated_csi(sc);
            scma::emit(scma::retention_table(rows), scma::parse_format(csi_opts.format), csi_opts.out);
            log_event("info", "csi_done", {{"rows", rows.size()}});
            return 0;
        }
        if (*trace) {
            scma::Scenario sc = build_scenario(trace_opts);
            log_event("info", "trace_start", {{"inits", inits}, {"seed", sc.seed}});
            const auto tr = scma::run_convergence_trace(sc, inits);
            const auto fmt = scma::parse_format(trace_opts.format);
            scma::emit(scma::trace_table(tr), fmt, trace_opts.out);
            scma::Table finals;
            finals.columns = {"algorithm", "init", "sum_rate", "jain_index", "cycles", "converged"};
            int unconverged = 0;
            for (const auto& f : tr.finals) {
                finals.rows.push_back({scma::json(f.algorithm), scma::json(f.init), scma::json(f.sum_rate), scma::json(f.jain),
                                       scma::json(f.cycles), scma::json(f.converged ? "yes" : "no")});
                if (!f.converged) {
                    ++unconverged;
                    log_event("warning", "cycle_cap_reached", {{"algorithm", f.algorithm}, {"init", f.init}});
                }
            }
            const std::string fp = !finals_path.empty() ? finals_path : (trace_opts.out.empty() ? "" : suffixed(trace_opts.out, "finals"));
            if (!fp.empty()) scma::emit(finals, fmt, fp);
            log_event("info", "trace_done", {{"runs", tr.finals.size()}, {"unconverged", unconverged}});
            return 0;
        }
        if (*oracle) {
            const std::uint64_t seed = oracle_seed.value_or(1);
            log_event("info", "oracle_check_start", {{"instances", instances}, {"restarts", restarts}, {"seed", seed}});
            const auto rows = scma::run_oracle_check(seed, instances, restarts);
            scma::emit(scma::oracle_table(rows), scma::parse_format(oracle_format), oracle_out);
            int flagged = 0;
            for (const auto& r : rows)
                if (r.status != "ok") {
                    ++flagged;
                    log_event("error", "oracle_gap", {{"instance", r.instance}, {"gap_pct", r.gap_pct}, {"detail", r.status}});
                }
            log_event(flagged ? "error" : "info", "oracle_check_done", {{"instances", rows.size()}, {"flagged", flagged}});
            return flagged ? 2 : 0;
        }
    } catch (const std::exception& e) {
        log_event("error", "fatal", {{"what", e.what()}});
        return 1;
    }
    return 0;
}
