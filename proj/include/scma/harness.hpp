#pragma once

// Monte-Carlo experiment drivers, metrics, and table I/O.

#include <scma/baselines.hpp>
#include <scma/bslm.hpp>
#include <scma/channel.hpp>
#include <scma/rng.hpp>
#include <scma/system_model.hpp>

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace scma {

/// (sum c)^2 / (J sum c^2). An all-zero vector maps to 1/J.
inline double jain_index(const Vector& rates) {
    const auto J = rates.size();
    if (J == 0) throw parameter_error("rate vector is empty");
    if ((rates.array() < 0).any()) throw parameter_error("rates must be nonnegative");
    const double sq = rates.squaredNorm();
    if (sq == 0.0) return 1.0 / static_cast<double>(J);
    const double s = rates.sum();
    return s * s / (static_cast<double>(J) * sq);
}

enum class Algorithm { max_sr, max_min, fuo, oa, pf, oracle };

inline const char* to_string(Algorithm a) {
    switch (a) {
        case Algorithm::max_sr: return "max-sr";
        case Algorithm::max_min: return "max-min";
        case Algorithm::fuo: return "fuo";
        case Algorithm::oa: return "oa";
        case Algorithm::pf: return "pf";
        case Algorithm::oracle: return "oracle";
    }
    return "unknown";
}

inline Algorithm parse_algorithm(const std::string& s) {
    for (Algorithm a : {Algorithm::max_sr, Algorithm::max_min, Algorithm::fuo, Algorithm::oa, Algorithm::pf, Algorithm::oracle})
        if (s == to_string(a)) return a;
    throw parameter_error("unknown algorithm '" + s + "'");
}

struct CsiSettings {
    std::vector<double> rho2{0.95, 0.62, 0.22, 0.01};
    double T_s_s = 0.01;
    int max_period = 50;
};

struct Scenario {
    SystemConfig system;
    std::vector<double> pmax_sweep_dbm{3, 4, 5, 6, 7, 8, 9, 10};
    int trials = 200;
    std::vector<Algorithm> algorithms{Algorithm::max_sr, Algorithm::max_min, Algorithm::fuo, Algorithm::oa, Algorithm::pf};
    std::optional<CsiSettings> csi;
    std::uint64_t seed = 1;
    std::size_t pf_window = 10;
    double pf_smoothing = 0.9;
    int oracle_levels = 11;
    unsigned threads = 0;         ///< 0 = hardware concurrency
    bool record_timing = false;   ///< wall-clock is not reproducible, so off by default

    void validate() const {
        system.validate();
        if (trials < 1) throw parameter_error("trials must be at least 1");
        if (pmax_sweep_dbm.empty()) throw parameter_error("power sweep is empty");
        if (algorithms.empty()) throw parameter_error("no algorithms requested");
        if (csi) {
            if (csi->rho2.empty() || csi->max_period < 1 || !(csi->T_s_s > 0)) throw parameter_error("invalid CSI settings");
            for (double r : csi->rho2)
                if (!(r >= 0 && r <= 1)) throw parameter_error("rho^2 must lie in [0, 1]");
        }
        if (std::find(algorithms.begin(), algorithms.end(), Algorithm::oracle) != algorithms.end()) {
            if (system.K > 3 || system.J > 3) throw parameter_error("oracle requested on an instance beyond K, J <= 3");
        }
    }
};

struct ResultRow {
    std::string algorithm;
    double pmax_dbm = 0.0;
    int trial = 0;
    double sum_rate_nats = 0.0;
    std::vector<double> per_user_rates;
    double jain_index = 0.0;
    int cycles_to_converge = 0;
    double wall_ms = 0.0;
    std::string status = "ok";
};

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

using json = nlohmann::ordered_json;

/// Column-named rows of numbers and strings, emitted as CSV or JSON.
struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<json>> rows;
};

inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string csv_cell(const json& v) {
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        if (s.find_first_of(",\"\n") == std::string::npos) return s;
        std::string q = "\"";
        for (char c : s) q += (c == '"') ? std::string("\"\"") : std::string(1, c);
        return q + "\"";
    }
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    if (v.is_number()) return format_number(v.get<double>());
    if (v.is_null()) return "nan";
    return v.dump();
}

inline std::string to_csv(const Table& t) {
    std::string out;
    for (std::size_t c = 0; c < t.columns.size(); ++c) out += (c ? "," : "") + csv_cell(json(t.columns[c]));
    out += "\n";
    for (const auto& r : t.rows) {
        for (std::size_t c = 0; c < r.size(); ++c) out += (c ? "," : "") + csv_cell(r[c]);
        out += "\n";
    }
    return out;
}

inline json parse_csv_cell(const std::string& s) {
    if (s == "nan") return json(std::numeric_limits<double>::quiet_NaN());
    if (s == "inf") return json(std::numeric_limits<double>::infinity());
    if (s == "-inf") return json(-std::numeric_limits<double>::infinity());
    if (!s.empty() && s.find_first_not_of("0123456789-") == std::string::npos && s != "-") {
        try {
            std::size_t pos = 0;
            const long long v = std::stoll(s, &pos);
            if (pos == s.size()) return json(v);
        } catch (const std::exception&) {
        }
    }
    if (!s.empty()) {
        char* end = nullptr;
        const double v = std::strtod(s.c_str(), &end);
        if (end == s.c_str() + s.size()) return json(v);
    }
    return json(s);
}

/// Inverse of to_csv for tables it produced.
inline Table parse_csv(const std::string& text) {
    Table t;
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> rec;
    std::string cell;
    bool quoted = false;
    bool any = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    cell += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cell += c;
            }
            continue;
        }
        if (c == '"') {
            quoted = true;
            any = true;
        } else if (c == ',') {
            rec.push_back(cell);
            cell.clear();
        } else if (c == '\n') {
            rec.push_back(cell);
            records.push_back(rec);
            rec.clear();
            cell.clear();
            any = false;
        } else {
            cell += c;
            any = true;
        }
    }
    if (any || !rec.empty()) {
        rec.push_back(cell);
        records.push_back(rec);
    }
    if (records.empty()) throw parameter_error("CSV has no header");
    t.columns = records.front();
    for (std::size_t r = 1; r < records.size(); ++r) {
        std::vector<json> row;
        for (const auto& s : records[r]) row.push_back(parse_csv_cell(s));
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline std::string to_json_text(const Table& t) {
    json arr = json::array();
    for (const auto& r : t.rows) {
        json obj = json::object();
        for (std::size_t c = 0; c < t.columns.size() && c < r.size(); ++c) {
            const auto& v = r[c];
            // JSON has no NaN; emit null for missing numbers
            if (v.is_number_float() && !std::isfinite(v.get<double>())) obj[t.columns[c]] = nullptr;
            else obj[t.columns[c]] = v;
        }
        arr.push_back(std::move(obj));
    }
    return arr.dump(2) + "\n";
}

enum class Format { csv, json };

inline Format parse_format(const std::string& s) {
    if (s == "csv") return Format::csv;
    if (s == "json") return Format::json;
    throw parameter_error("unknown format '" + s + "'");
}

/// Writes the table; an empty path writes to standard output.
inline void emit(const Table& t, Format fmt, const std::string& path) {
    const std::string text = fmt == Format::csv ? to_csv(t) : to_json_text(t);
    if (path.empty()) {
        std::fwrite(text.data(), 1, text.size(), stdout);
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

inline std::string join_rates(const std::vector<double>& v, double scale) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + format_number(v[i] * scale);
    return s;
}

/// Rates are converted to bits when `bits` is set.
inline Table result_table(const std::vector<ResultRow>& rows, bool bits = false) {
    const double scale = bits ? 1.0 / std::numbers::ln2 : 1.0;
    Table t;
    t.columns = {"algorithm", "pmax_dbm", "trial", bits ? "sum_rate_bits" : "sum_rate_nats",
                 "per_user_rates", "jain_index", "cycles_to_converge", "wall_ms", "status"};
    for (const auto& r : rows) {
        t.rows.push_back({json(r.algorithm), json(r.pmax_dbm), json(r.trial), json(r.sum_rate_nats * scale),
                          json(join_rates(r.per_user_rates, scale)), json(r.jain_index), json(r.cycles_to_converge),
                          json(r.wall_ms), json(r.status)});
    }
    return t;
}

struct SummaryRow {
    std::string algorithm;
    double pmax_dbm;
    int count;
    double mean_sum_rate;
    double std_sum_rate;
    double mean_jain;
    double std_jain;
};

/// Mean and sample standard deviation per (algorithm, budget), first-seen order.
inline std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows) {
    std::vector<SummaryRow> out;
    std::vector<std::vector<const ResultRow*>> groups;
    for (const auto& r : rows) {
        if (r.status.rfind("error", 0) == 0) continue;
        auto it = std::find_if(out.begin(), out.end(),
                               [&](const SummaryRow& s) { return s.algorithm == r.algorithm && s.pmax_dbm == r.pmax_dbm; });
        if (it == out.end()) {
            out.push_back({r.algorithm, r.pmax_dbm, 0, 0, 0, 0, 0});
            groups.emplace_back();
            it = out.end() - 1;
        }
        groups[static_cast<std::size_t>(it - out.begin())].push_back(&r);
    }
    for (std::size_t g = 0; g < out.size(); ++g) {
        const auto& grp = groups[g];
        const double n = static_cast<double>(grp.size());
        double ms = 0, mj = 0;
        for (auto* r : grp) {
            ms += r->sum_rate_nats;
            mj += r->jain_index;
        }
        ms /= n;
        mj /= n;
        double vs = 0, vj = 0;
        for (auto* r : grp) {
            vs += (r->sum_rate_nats - ms) * (r->sum_rate_nats - ms);
            vj += (r->jain_index - mj) * (r->jain_index - mj);
        }
        out[g].count = static_cast<int>(grp.size());
        out[g].mean_sum_rate = ms;
        out[g].mean_jain = mj;
        out[g].std_sum_rate = grp.size() > 1 ? std::sqrt(vs / (n - 1)) : 0.0;
        out[g].std_jain = grp.size() > 1 ? std::sqrt(vj / (n - 1)) : 0.0;
    }
    return out;
}

inline Table summary_table(const std::vector<SummaryRow>& rows, bool bits = false) {
    const double scale = bits ? 1.0 / std::numbers::ln2 : 1.0;
    Table t;
    t.columns = {"algorithm", "pmax_dbm", "count", "mean_sum_rate", "std_sum_rate", "mean_jain", "std_jain"};
    for (const auto& r : rows)
        t.rows.push_back({json(r.algorithm), json(r.pmax_dbm), json(r.count), json(r.mean_sum_rate * scale),
                          json(r.std_sum_rate * scale), json(r.mean_jain), json(r.std_jain)});
    return t;
}

// ---------------------------------------------------------------------------
// Experiment drivers
// ---------------------------------------------------------------------------

namespace detail {

/// Runs `work(cell)` for every cell on a small thread pool. Each cell writes
/// only its own output slot, so assembly order is independent of timing.
inline void parallel_cells(std::size_t cells, unsigned threads, const std::function<void(std::size_t)>& work) {
    unsigned n = threads ? threads : std::max(1u, std::thread::hardware_concurrency());
    n = static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(cells, 1)));
    if (n <= 1) {
        for (std::size_t c = 0; c < cells; ++c) work(c);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (unsigned i = 0; i < n; ++i) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t c = next.fetch_add(1);
                if (c >= cells) return;
                try {
                    work(c);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

constexpr std::uint64_t channel_stream = 0x100000000ULL;
constexpr std::uint64_t algorithm_stream = 0x200000000ULL;
constexpr std::uint64_t evolution_stream = 0x300000000ULL;

struct Evaluated {
    double sum_rate;
    Vector per_user;
    double jain;
};

inline Evaluated evaluate(const Matrix& gain2, const Allocation& a, const SystemConfig& cfg) {
    const auto rb = per_user_rates(gain2, a, noise_power(cfg), cfg.order());
    // tiny negative rates cannot occur, but guard Jain's precondition anyway
    const Vector rates = rb.per_user.cwiseMax(0.0);
    return {rb.total, rates, jain_index(rates)};
}

/// Draws the paired channel for one trial: user placement plus fading.
inline ChannelState trial_channel(const SystemConfig& cfg, std::uint64_t seed, std::uint64_t trial, Rng* history_rng = nullptr) {
    Rng rng = Rng::stream(seed, channel_stream + trial);
    const Vector r = place_users(cfg.J, cfg.cell_radius_m, rng);
    ChannelState ch = draw_channel(r, cfg.pathloss_exp, cfg.K, rng, cfg.distance_scale);
    if (history_rng) *history_rng = rng;
    return ch;
}

/// Builds a proportional-fair history of `window` earlier slots for the
/// same users, with independent fading per slot.
inline PfState pf_history(const ChannelState& ch, const Scenario& sc, Rng& rng) {
    PfState st(ch.J(), sc.pf_window, sc.pf_smoothing);
    for (std::size_t s = 0; s < sc.pf_window; ++s) {
        ChannelState past = ch;
        for (Eigen::Index j = 0; j < past.small_scale.cols(); ++j)
            for (Eigen::Index k = 0; k < past.small_scale.rows(); ++k) past.small_scale(k, j) = rng.complex_normal(1.0);
        recompose(past);
        st.push(past.gain2());
    }
    return st;
}

struct AllocationOutcome {
    Allocation allocation;
    int cycles = 0;
    double wall_ms = 0.0;
};

inline AllocationOutcome allocate(Algorithm algo, const ChannelState& ch, const SystemConfig& cfg, const Scenario& sc,
                                  Rng& rng, PfState* pf_state) {
    const auto t0 = std::chrono::steady_clock::now();
    const Matrix g = ch.gain2();
    AllocationOutcome out;
    switch (algo) {
        case Algorithm::max_sr: {
            auto r = run_max_sr(g, cfg, rng);
            out.allocation = r.allocation;
            out.cycles = r.cycles;
            break;
        }
        case Algorithm::max_min: {
            auto r = run_max_min(g, cfg, rng);
            out.allocation = r.allocation;
            out.cycles = r.cycles;
            break;
        }
        case Algorithm::fuo: out.allocation = fuo(g, cfg, rng); break;
        case Algorithm::oa: out.allocation = oa(g, cfg); break;
        case Algorithm::pf: {
            if (!pf_state) throw parameter_error("proportional-fair allocation needs history");
            out.allocation = pf(g, cfg, *pf_state);
            break;
        }
        case Algorithm::oracle: out.allocation = brute_force_oracle(g, cfg, sc.oracle_levels).allocation; break;
    }
    out.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

inline std::uint64_t algo_tag(Algorithm a) { return static_cast<std::uint64_t>(a) << 24; }

}  // namespace detail

/// For every budget and trial, draws one channel and runs every requested
/// algorithm on it. Per-algorithm failures become flagged rows.
inline std::vector<ResultRow> run_sweep(const Scenario& sc) {
    sc.validate();
    const std::size_t nb = sc.pmax_sweep_dbm.size();
    const std::size_t nt = static_cast<std::size_t>(sc.trials);
    const std::size_t na = sc.algorithms.size();
    std::vector<ResultRow> rows(nb * nt * na);

    detail::parallel_cells(nb * nt, sc.threads, [&](std::size_t cell) {
        const std::size_t b = cell / nt;
        const std::size_t t = cell % nt;
        SystemConfig cfg = sc.system;
        cfg.p_max_dbm = {sc.pmax_sweep_dbm[b]};
        Rng hist_rng(0);
        const ChannelState ch = detail::trial_channel(cfg, sc.seed, t, &hist_rng);
        PfState pf_state = detail::pf_history(ch, sc, hist_rng);
        for (std::size_t a = 0; a < na; ++a) {
            const Algorithm algo = sc.algorithms[a];
            ResultRow& row = rows[cell * na + a];
            row.algorithm = to_string(algo);
            row.pmax_dbm = sc.pmax_sweep_dbm[b];
            row.trial = static_cast<int>(t);
            Rng rng = Rng::stream(sc.seed, detail::algorithm_stream + detail::algo_tag(algo) + cell);
            cfg.seed = rng.next_u64();
            try {
                const auto out = detail::allocate(algo, ch, cfg, sc, rng, &pf_state);
                const auto ev = detail::evaluate(ch.gain2(), out.allocation, cfg);
                row.sum_rate_nats = ev.sum_rate;
                row.per_user_rates.assign(ev.per_user.data(), ev.per_user.data() + ev.per_user.size());
                row.jain_index = ev.jain;
                row.cycles_to_converge = out.cycles;
                row.wall_ms = sc.record_timing ? out.wall_ms : 0.0;
                if (ev.per_user.squaredNorm() == 0.0) row.status = "warning: all rates zero";
            } catch (const std::exception& e) {
                row.sum_rate_nats = std::numeric_limits<double>::quiet_NaN();
                row.jain_index = std::numeric_limits<double>::quiet_NaN();
                row.status = std::string("error: ") + e.what();
            }
        }
    });
    return rows;
}

struct RetentionRow {
    std::string algorithm;
    double rho2 = 0.0;
    int period_T = 1;
    double mean_sum_rate = 0.0;
    double mean_jain = 0.0;
    double sum_rate_retention_pct = 100.0;
    double jain_retention_pct = 100.0;
};

/// Allocations are computed from the slot-0 channel and reused while the
/// fading ages as a Gauss-Markov process. The metric for period T averages
/// the true-channel performance over slots 0..T-1; retention divides by the
/// T = 1 value of the same algorithm. Uses the first budget of the sweep.
inline std::vector<RetentionRow> run_outdated_csi(const Scenario& sc) {
    sc.validate();
    if (!sc.csi) throw parameter_error("outdated-CSI run needs CSI settings");
    const CsiSettings& csi = *sc.csi;
    std::vector<Algorithm> algos;
    for (Algorithm a : sc.algorithms)
        if (a != Algorithm::oracle) algos.push_back(a);
    if (algos.empty()) throw parameter_error("no algorithms for the outdated-CSI run");

    const std::size_t nr = csi.rho2.size();
    const std::size_t nt = static_cast<std::size_t>(sc.trials);
    const std::size_t na = algos.size();
    const std::size_t Tm = static_cast<std::size_t>(csi.max_period);
    // per (trial, rho, algo): per-slot sum rate and Jain
    std::vector<std::vector<double>> rate_slot(nt * nr * na, std::vector<double>(Tm));
    std::vector<std::vector<double>> jain_slot(nt * nr * na, std::vector<double>(Tm));
    std::vector<std::string> failures(nt);

    SystemConfig cfg0 = sc.system;
    cfg0.p_max_dbm = {sc.pmax_sweep_dbm.front()};

    detail::parallel_cells(nt, sc.threads, [&](std::size_t t) {
        SystemConfig cfg = cfg0;
        Rng hist_rng(0);
        const ChannelState ch0 = detail::trial_channel(cfg, sc.seed, t, &hist_rng);
        PfState pf_state = detail::pf_history(ch0, sc, hist_rng);
        std::vector<Allocation> allocs;
        try {
            for (Algorithm algo : algos) {
                Rng rng = Rng::stream(sc.seed, detail::algorithm_stream + detail::algo_tag(algo) + t);
                cfg.seed = rng.next_u64();
                allocs.push_back(detail::allocate(algo, ch0, cfg, sc, rng, &pf_state).allocation);
            }
        } catch (const std::exception& e) {
            failures[t] = e.what();
            return;
        }
        for (std::size_t r = 0; r < nr; ++r) {
            const double fmax = doppler_for_rho2(csi.rho2[r], csi.T_s_s);
            const double rho = doppler_correlation({fmax, csi.T_s_s, 1});
            Rng evo = Rng::stream(sc.seed, detail::evolution_stream + r * nt + t);
            ChannelState ch = ch0;
            for (std::size_t s = 0; s < Tm; ++s) {
                if (s > 0) ch = evolve_channel(ch, rho, evo);
                const Matrix g = ch.gain2();
                for (std::size_t a = 0; a < na; ++a) {
                    const auto ev = detail::evaluate(g, allocs[a], cfg);
                    rate_slot[(t * nr + r) * na + a][s] = ev.sum_rate;
                    jain_slot[(t * nr + r) * na + a][s] = ev.jain;
                }
            }
        }
    });
    for (std::size_t t = 0; t < nt; ++t)
        if (!failures[t].empty()) throw std::runtime_error("trial " + std::to_string(t) + " failed: " + failures[t]);

    std::vector<RetentionRow> out;
    for (std::size_t r = 0; r < nr; ++r) {
        for (std::size_t a = 0; a < na; ++a) {
            double base_rate = 0.0, base_jain = 0.0;
            for (std::size_t T = 1; T <= Tm; ++T) {
                double mr = 0.0, mj = 0.0;
                for (std::size_t t = 0; t < nt; ++t) {
                    const auto& rs = rate_slot[(t * nr + r) * na + a];
                    const auto& js = jain_slot[(t * nr + r) * na + a];
                    double sr = 0.0, sj = 0.0;
                    for (std::size_t s = 0; s < T; ++s) {
                        sr += rs[s];
                        sj += js[s];
                    }
                    mr += sr / static_cast<double>(T);
                    mj += sj / static_cast<double>(T);
                }
                mr /= static_cast<double>(nt);
                mj /= static_cast<double>(nt);
                if (T == 1) {
                    base_rate = mr;
                    base_jain = mj;
                }
                RetentionRow row;
                row.algorithm = to_string(algos[a]);
                row.rho2 = csi.rho2[r];
                row.period_T = static_cast<int>(T);
                row.mean_sum_rate = mr;
                row.mean_jain = mj;
                row.sum_rate_retention_pct = 100.0 * mr / base_rate;
                row.jain_retention_pct = 100.0 * mj / base_jain;
                out.push_back(row);
            }
        }
    }
    return out;
}

inline Table retention_table(const std::vector<RetentionRow>& rows) {
    Table t;
    t.columns = {"algorithm", "rho2", "period_T", "mean_sum_rate", "mean_jain", "sum_rate_retention_pct", "jain_retention_pct"};
    for (const auto& r : rows)
        t.rows.push_back({json(r.algorithm), json(r.rho2), json(r.period_T), json(r.mean_sum_rate), json(r.mean_jain),
                          json(r.sum_rate_retention_pct), json(r.jain_retention_pct)});
    return t;
}

struct TraceRow {
    std::string algorithm;
    int init = 0;
    int cycle = 0;
    double penalized = 0.0;
    double objective = 0.0;
    double binary_objective = 0.0;
    double dF = 0.0;
    double dP = 0.0;
    int inner_iterations = 0;
};

struct ConvergenceTrace {
    std::vector<TraceRow> rows;
    /// Per (algorithm, init): final binary sum rate, Jain index and cycles.
    struct Final {
        std::string algorithm;
        int init;
        double sum_rate;
        double jain;
        int cycles;
        bool converged;
    };
    std::vector<Final> finals;
};

/// One channel draw, `n_inits` random starting points, both algorithms run
/// from each start. Uses the first budget of the sweep.
inline ConvergenceTrace run_convergence_trace(const Scenario& sc, int n_inits) {
    sc.validate();
    if (n_inits < 1) throw parameter_error("n_inits must be at least 1");
    SystemConfig cfg = sc.system;
    cfg.p_max_dbm = {sc.pmax_sweep_dbm.front()};
    const ChannelState ch = detail::trial_channel(cfg, sc.seed, 0);
    const Matrix g = ch.gain2();
    ConvergenceTrace out;
    for (int i = 0; i < n_inits; ++i) {
        Rng init_rng = Rng::stream(sc.seed, detail::algorithm_stream + static_cast<std::uint64_t>(i));
        BslmOptions opts;
        opts.initial = random_initial_point(cfg, init_rng);
        for (Algorithm algo : {Algorithm::max_sr, Algorithm::max_min}) {
            Rng rng = init_rng;
            const auto res = algo == Algorithm::max_sr ? run_max_sr(g, cfg, rng, opts) : run_max_min(g, cfg, rng, opts);
            TraceRow r0;
            r0.algorithm = to_string(algo);
            r0.init = i;
            r0.cycle = 0;
            r0.penalized = res.trace.initial_penalized;
            const auto crit = algo == Algorithm::max_sr ? Criterion::sum_rate : Criterion::min_rate;
            r0.objective = criterion_value(crit, g, *opts.initial, noise_power(cfg), cfg.order());
            r0.binary_objective = std::numeric_limits<double>::quiet_NaN();
            out.rows.push_back(r0);
            for (const auto& c : res.trace.cycles) {
                out.rows.push_back({to_string(algo), i, c.cycle, c.penalized, c.objective, c.binary_objective, c.dF, c.dP,
                                    c.inner_F + c.inner_P});
            }
            const auto ev = detail::evaluate(g, res.allocation, cfg);
            out.finals.push_back({to_string(algo), i, ev.sum_rate, ev.jain, res.cycles, res.converged});
        }
    }
    return out;
}

inline Table trace_table(const ConvergenceTrace& tr) {
    Table t;
    t.columns = {"algorithm", "init", "cycle", "penalized", "objective", "binary_objective", "dF", "dP", "inner_iterations"};
    for (const auto& r : tr.rows)
        t.rows.push_back({json(r.algorithm), json(r.init), json(r.cycle), json(r.penalized), json(r.objective),
                          json(r.binary_objective), json(r.dF), json(r.dP), json(r.inner_iterations)});
    return t;
}

struct OracleCheckRow {
    int instance = 0;
    int K = 0;
    int J = 0;
    double oracle = 0.0;
    double best_max_sr = 0.0;
    double gap_pct = 0.0;  ///< 100 (oracle - algorithm) / oracle
    std::string status = "ok";
};

/// Tiny instances (K = J = 2 and K = J = 3, one subcarrier per user, one
/// user per subcarrier): best-of-`restarts` Max-SR against the exhaustive
/// oracle. A row is flagged when the gap exceeds `max_gap_pct` or the
/// algorithm beats the oracle by more than rounding.
inline std::vector<OracleCheckRow> run_oracle_check(std::uint64_t seed, int instances = 20, int restarts = 10,
                                                    double max_gap_pct = 5.0, const SystemConfig& base = {}) {
    if (instances < 1 || restarts < 1) throw parameter_error("instances and restarts must be positive");
    std::vector<OracleCheckRow> out;
    for (int i = 0; i < instances; ++i) {
        SystemConfig cfg = base;
        cfg.K = cfg.J = (i % 2 == 0) ? 2 : 3;
        cfg.N = 1;
        cfg.d_f = 1;
        cfg.decode_order.clear();
        const ChannelState ch = detail::trial_channel(cfg, seed, static_cast<std::uint64_t>(i));
        const Matrix g = ch.gain2();
        const double sigma2 = noise_power(cfg);
        OracleCheckRow row;
        row.instance = i;
        row.K = cfg.K;
        row.J = cfg.J;
        row.oracle = brute_force_oracle(g, cfg).objective;
        double best = -std::numeric_limits<double>::infinity();
        for (int r = 0; r < restarts; ++r) {
            Rng rng = Rng::stream(seed, detail::algorithm_stream + static_cast<std::uint64_t>(i) * 1024 + r);
            best = std::max(best, sum_rate(g, run_max_sr(g, cfg, rng).allocation, sigma2));
        }
        row.best_max_sr = best;
        row.gap_pct = 100.0 * (row.oracle - best) / std::max(row.oracle, 1e-300);
        if (row.gap_pct > max_gap_pct) row.status = "error: gap above threshold";
        else if (best > row.oracle * (1.0 + 1e-9)) row.status = "error: algorithm beats oracle";
        out.push_back(row);
    }
    return out;
}

inline Table oracle_table(const std::vector<OracleCheckRow>& rows) {
    Table t;
    t.columns = {"instance", "K", "J", "oracle_sum_rate", "best_max_sr", "gap_pct", "status"};
    for (const auto& r : rows)
        t.rows.push_back({json(r.instance), json(r.K), json(r.J), json(r.oracle), json(r.best_max_sr), json(r.gap_pct),
                          json(r.status)});
    return t;
}

// ---------------------------------------------------------------------------
// Scenario files
// ---------------------------------------------------------------------------

inline Scenario scenario_from_json(const nlohmann::json& j) {
    Scenario sc;
    if (j.contains("system")) {
        const auto& s = j.at("system");
        SystemConfig& c = sc.system;
        c.K = s.value("K", c.K);
        c.J = s.value("J", c.J);
        c.N = s.value("N", c.N);
        c.d_f = s.value("d_f", c.d_f);
        c.cell_radius_m = s.value("cell_radius_m", c.cell_radius_m);
        c.pathloss_exp = s.value("pathloss_exp", c.pathloss_exp);
        c.distance_scale = s.value("distance_scale", c.distance_scale);
        c.noise_density_dbm_hz = s.value("noise_density_dbm_hz", c.noise_density_dbm_hz);
        c.bandwidth_hz = s.value("bandwidth_hz", c.bandwidth_hz);
        if (s.contains("p_max_dbm")) {
            if (s.at("p_max_dbm").is_array()) c.p_max_dbm = s.at("p_max_dbm").get<std::vector<double>>();
            else c.p_max_dbm = {s.at("p_max_dbm").get<double>()};
        }
        c.lambda_penalty = s.value("lambda_penalty", c.lambda_penalty);
        c.eps_F = s.value("eps_F", c.eps_F);
        c.eps_P = s.value("eps_P", c.eps_P);
        c.max_cycles = s.value("max_cycles", c.max_cycles);
        c.solver_eps = s.value("solver_eps", c.solver_eps);
        c.init_spread = s.value("init_spread", c.init_spread);
        c.complete_assignment = s.value("complete_assignment", c.complete_assignment);
        c.decode_order = s.value("decode_order", c.decode_order);
        if (s.contains("stop_rule")) {
            const auto r = s.at("stop_rule").get<std::string>();
            if (r == "both-below") c.stop_rule = StopRule::both_below;
            else if (r == "either-below") c.stop_rule = StopRule::either_below;
            else throw parameter_error("unknown stop_rule '" + r + "'");
        }
    }
    if (j.contains("pmax_sweep_dbm")) sc.pmax_sweep_dbm = j.at("pmax_sweep_dbm").get<std::vector<double>>();
    sc.trials = j.value("trials", sc.trials);
    if (j.contains("algorithms")) {
        sc.algorithms.clear();
        for (const auto& a : j.at("algorithms")) sc.algorithms.push_back(parse_algorithm(a.get<std::string>()));
    }
    if (j.contains("csi") && !j.at("csi").is_null()) {
        CsiSettings c;
        const auto& s = j.at("csi");
        if (s.contains("rho2")) c.rho2 = s.at("rho2").get<std::vector<double>>();
        c.T_s_s = s.value("T_s_s", c.T_s_s);
        c.max_period = s.value("max_period", c.max_period);
        sc.csi = c;
    }
    sc.seed = j.value("seed", sc.seed);
    sc.system.seed = sc.seed;
    sc.pf_window = j.value("pf_window", sc.pf_window);
    sc.pf_smoothing = j.value("pf_smoothing", sc.pf_smoothing);
    sc.oracle_levels = j.value("oracle_levels", sc.oracle_levels);
    sc.threads = j.value("threads", sc.threads);
    sc.record_timing = j.value("record_timing", sc.record_timing);
    sc.validate();
    return sc;
}

inline Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open scenario '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error("cannot parse scenario '" + path + "': " + e.what());
    }
    return scenario_from_json(j);
}

}  // namespace scma
