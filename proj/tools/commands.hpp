#pragma once

// Subcommands of the echochain tool. Every command resolves a JSON config
// (file, then flag overrides), echoes the resolved config into the output
// header, and maps failures onto exit codes:
//   0 ok, 2 usage / invalid config, 3 resource guard, 4 numeric failure.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "echochain/errors.hpp"
#include "echochain/floquet.hpp"
#include "echochain/io.hpp"
#include "echochain/parallel.hpp"
#include "echochain/rmt.hpp"
#include "echochain/spectral.hpp"
#include "echochain/stats.hpp"
#include "echochain/symmetry.hpp"

namespace echochain::cli {

using json = nlohmann::json;

enum ExitCode : int { kOk = 0, kUsage = 2, kResource = 3, kNumeric = 4 };

/// Invalid configuration or arguments.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// --- config helpers -------------------------------------------------------------------

inline json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw UsageError("config '" + path + "' is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw UsageError("config must be a JSON object");
    return j;
}

template <class T>
void override_key(json& cfg, const char* key, const std::optional<T>& v) {
    if (v) cfg[key] = *v;
}

template <class T>
T get_or(const json& cfg, const char* key, T fallback) {
    if (!cfg.contains(key) || cfg[key].is_null()) return fallback;
    try {
        return cfg[key].get<T>();
    } catch (const json::exception&) {
        throw UsageError(std::string("config field '") + key + "' has the wrong type");
    }
}

template <class T>
T require(const json& cfg, const char* key) {
    if (!cfg.contains(key) || cfg[key].is_null()) throw UsageError(std::string("missing required field '") + key + "'");
    return get_or<T>(cfg, key, T{});
}

inline std::vector<double> parse_number_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (item.empty()) continue;
        try {
            out.push_back(parse_double(item));
        } catch (const std::invalid_argument&) {
            throw UsageError("'" + item + "' is not a number");
        }
    }
    return out;
}

inline std::vector<int> to_ints(const std::vector<double>& v) {
    std::vector<int> out;
    for (double x : v) {
        if (x != std::floor(x)) throw UsageError("expected integers, got " + format_double(x));
        out.push_back(static_cast<int>(x));
    }
    return out;
}

/// "x,y,z;x,y,z" -> [[x,y,z],[x,y,z]]
inline json parse_kicks(const std::string& s) {
    json arr = json::array();
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ';')) {
        const auto v = parse_number_list(item);
        if (v.size() != 3) throw UsageError("each kick needs three components, got '" + item + "'");
        arr.push_back(v);
    }
    return arr;
}

/// Single integer or list of integers.
inline std::vector<int> int_list(const json& cfg, const char* key) {
    if (!cfg.contains(key)) throw UsageError(std::string("missing required field '") + key + "'");
    const json& v = cfg[key];
    if (v.is_number_integer()) return {v.get<int>()};
    if (v.is_array()) {
        std::vector<int> out;
        for (const auto& x : v) {
            if (!x.is_number_integer()) throw UsageError(std::string("field '") + key + "' must hold integers");
            out.push_back(x.get<int>());
        }
        if (out.empty()) throw UsageError(std::string("field '") + key + "' is empty");
        return out;
    }
    throw UsageError(std::string("field '") + key + "' must be an integer or a list of integers");
}

inline QubitCount qubits(int l) {
    try {
        return QubitCount(l);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
}

struct ChainModel {
    FloquetSpec spec;
    SymmetryClassLabel cls = SymmetryClassLabel::non_tri;
};

/// Resolves preset / explicit kicks and the symmetry class; writes the
/// resolved values back into cfg.
inline ChainModel resolve_chain(json& cfg, int l) {
    const QubitCount q = qubits(l);
    const double j = get_or<double>(cfg, "J", 1.0);
    const std::string preset = get_or<std::string>(cfg, "preset", cfg.contains("kicks") ? "" : "gue");
    ChainModel m{non_tri_preset(q), SymmetryClassLabel::non_tri};
    std::string cls_default;
    if (cfg.contains("kicks")) {
        if (!cfg["kicks"].is_array() || cfg["kicks"].empty()) throw UsageError("'kicks' must be a non-empty list");
        std::vector<KickField> kicks;
        for (const auto& k : cfg["kicks"]) {
            if (!k.is_array() || k.size() != 3) throw UsageError("each kick must be [bx, by, bz]");
            kicks.push_back({k[0].get<double>(), k[1].get<double>(), k[2].get<double>()});
        }
        m.spec = FloquetSpec{q, ChainCoupling{j}, kicks};
        cls_default = "non_tri";
    } else if (preset == "gue" || preset == "non_tri") {
        m.spec = non_tri_preset(q);
        cls_default = "non_tri";
    } else if (preset == "goe" || preset == "tri") {
        m.spec = tri_preset(q);
        cls_default = "tri";
    } else {
        throw UsageError("unknown preset '" + preset + "' (gue, goe)");
    }
    m.spec.J = ChainCoupling{j};
    const std::string cls = get_or<std::string>(cfg, "class", cls_default);
    if (cls == "tri")
        m.cls = SymmetryClassLabel::tri;
    else if (cls == "non_tri")
        m.cls = SymmetryClassLabel::non_tri;
    else
        throw UsageError("class must be 'tri' or 'non_tri', got '" + cls + "'");
    cfg["J"] = j;
    json kicks = json::array();
    for (const auto& k : m.spec.kicks) kicks.push_back({k.x, k.y, k.z});
    cfg["kicks"] = kicks;
    cfg["class"] = cls;
    return m;
}

inline int beta_of(SymmetryClassLabel c) { return c == SymmetryClassLabel::tri ? 1 : 2; }

inline void apply_threads(const json& cfg) {
    int n = threads_from_env();
    if (cfg.contains("threads")) n = cfg["threads"].get<int>();
    if (n > 0) set_thread_count(n);
}

inline Metadata base_metadata(const std::string& command, const json& cfg) {
    json echo = cfg;
    echo.erase("threads");   // outputs do not depend on the worker count
    echo.erase("output");
    return {{"echochain", std::string(kVersion)}, {"command", command}, {"config", echo.dump()}};
}

/// Runs `body` with the CSV stream: the output file when configured, else `out`.
template <class Fn>
void with_output(const json& cfg, std::ostream& out, Fn&& body) {
    const std::string path = get_or<std::string>(cfg, "output", "");
    if (path.empty() || path == "-") {
        body(out);
        return;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw UsageError("cannot write '" + path + "'");
    body(f);
    if (!f) throw std::runtime_error("write to '" + path + "' failed");
}

/// Summary lines go to stdout when the CSV goes to a file, else to stderr.
inline std::ostream& summary_stream(const json& cfg, std::ostream& out, std::ostream& err) {
    const std::string path = get_or<std::string>(cfg, "output", "");
    return (path.empty() || path == "-") ? err : out;
}

// --- calibration -----------------------------------------------------------------------

inline int default_calibration_cutoff(QubitCount l, bool tri) {
    // stay well inside the ramp towards the finite-size plateau
    return std::max(4, std::min(200, static_cast<int>(heisenberg_time(l, tri) / 3.0)));
}

inline Calibration run_calibration(const ChainModel& m, int calib_m, int cutoff, std::uint64_t seed) {
    const auto c = correlation_series(m.spec, cutoff, ProbeEnsemble::gaussian(calib_m, seed));
    return calibrate_sigma(c, cutoff, m.cls == SymmetryClassLabel::tri);
}

inline json calibration_json(const Calibration& cal) {
    return json{{"sigma", cal.sigma},
                {"sigma_corrected", cal.sigma_corrected},
                {"sigma_raw", cal.raw.sigma},
                {"plateau", cal.plateau},
                {"ramp_plateau", cal.ramp_plateau},
                {"t_heis", cal.t_heis},
                {"non_convergent", cal.raw.non_convergent},
                {"non_decaying", cal.non_decaying}};
}

// --- memory guard ----------------------------------------------------------------------

inline void check_memory(double bytes, const json& cfg) {
    const double limit_mb = get_or<double>(cfg, "max_memory_mb", 4096.0);
    if (bytes > limit_mb * 1024.0 * 1024.0)
        throw ResourceError("estimated memory " + format_double(std::ceil(bytes / (1024.0 * 1024.0))) +
                            " MiB exceeds max_memory_mb = " + format_double(limit_mb));
}

// --- fidelity --------------------------------------------------------------------------

inline int cmd_fidelity(json cfg, std::ostream& out, std::ostream& err) {
    const int l = require<int>(cfg, "L");
    ChainModel model = resolve_chain(cfg, l);
    const QubitCount q = model.spec.L;
    const bool tri = model.cls == SymmetryClassLabel::tri;
    const double t_h = heisenberg_time(q, tri);
    const bool has_delta = cfg.contains("delta") && !cfg["delta"].is_null();
    const bool has_eps = cfg.contains("epsilon") && !cfg["epsilon"].is_null();
    if (has_delta == has_eps) throw UsageError("give exactly one of 'delta' and 'epsilon'");
    const int m = get_or<int>(cfg, "m", 10);
    const int stride = get_or<int>(cfg, "stride", 1);
    const int t_max = get_or<int>(cfg, "t_max", static_cast<int>(std::ceil(2.0 * t_h)));
    if (!cfg.contains("seed")) throw UsageError("missing required field 'seed'");
    const auto seed = cfg["seed"].get<std::uint64_t>();
    if (m < 1) throw UsageError("m must be >= 1");
    if (stride < 1) throw UsageError("stride must be >= 1");
    if (t_max < 0) throw UsageError("t_max must be >= 0");
    const double n_amp = static_cast<double>(q.dimension());
    check_memory(2.0 * 16.0 * n_amp * std::max(1, thread_count()) +
                     16.0 * m * (static_cast<double>(t_max) / stride + 2.0), cfg);

    std::optional<double> sigma;
    if (cfg.contains("sigma_int") && !cfg["sigma_int"].is_null()) {
        sigma = cfg["sigma_int"].get<double>();
        cfg["sigma_source"] = "given";
    }
    double delta = 0.0;
    if (has_eps) {
        const double eps = cfg["epsilon"].get<double>();
        if (eps < 0.0) throw UsageError("epsilon must be >= 0");
        if (!sigma) {
            const int calib_m = get_or<int>(cfg, "calib_m", 20);
            const int cutoff = get_or<int>(cfg, "calib_cutoff", default_calibration_cutoff(q, tri));
            cfg["calib_m"] = calib_m;
            cfg["calib_cutoff"] = cutoff;
            const auto cal = run_calibration(model, calib_m, cutoff, seed);
            cfg["calibration"] = calibration_json(cal);
            if (cal.non_decaying || !(cal.sigma > 0.0))
                throw NumericError("calibration failed: correlation function does not decay (plateau " +
                                   format_double(cal.plateau) + ")");
            sigma = cal.sigma;
            cfg["sigma_source"] = "calibrated";
        }
        if (!(*sigma > 0.0)) throw UsageError("sigma_int must be > 0");
        delta = delta_from_epsilon(q, eps, *sigma);
        cfg["delta"] = delta;
    } else {
        delta = cfg["delta"].get<double>();
        if (delta < 0.0) throw UsageError("delta must be >= 0");
        if (sigma) {
            if (!(*sigma > 0.0)) throw UsageError("sigma_int must be > 0");
            cfg["epsilon"] = epsilon_from_delta(q, delta, *sigma);
        }
    }
    if (sigma) cfg["sigma_int"] = *sigma;
    cfg["m"] = m;
    cfg["stride"] = stride;
    cfg["t_max"] = t_max;
    cfg["t_heis"] = t_h;
    apply_threads(cfg);

    const auto series = trace_fidelity(model.spec, delta, ProbeEnsemble::gaussian(m, seed), t_max, stride, model.cls);
    int cutoff = get_or<int>(cfg, "cutoff", default_transient_cutoff(series));
    cfg["cutoff"] = cutoff;
    json budget = nullptr;
    const bool has_tail = std::any_of(series.t_steps.begin(), series.t_steps.end(), [&](int t) { return t > cutoff; });
    if (has_tail) {
        const auto b = error_budget(series, cutoff);
        budget = json{{"sigma_fa", b.sigma_fa},
                      {"sigma_total", b.sigma_total},
                      {"sigma_intrinsic", b.sigma_intrinsic},
                      {"intrinsic_clipped", b.intrinsic_clipped},
                      {"m", b.m},
                      {"transient_cutoff", b.transient_cutoff}};
    }
    Metadata meta = base_metadata("fidelity", cfg);
    meta.emplace_back("error_budget", budget.dump());
    with_output(cfg, out, [&](std::ostream& os) {
        CsvWriter w(os, meta, {"t_step", "t_heis", "re_f", "im_f"});
        for (std::size_t k = 0; k < series.t_steps.size(); ++k)
            w.row({static_cast<double>(series.t_steps[k]), series.t_steps[k] / t_h, series.f[k].real(),
                   series.f[k].imag()});
    });
    auto& s = summary_stream(cfg, out, err);
    s << "delta " << format_double(delta) << "\n";
    if (cfg.contains("epsilon")) s << "epsilon " << format_double(cfg["epsilon"].get<double>()) << "\n";
    s << "error_budget " << budget.dump() << "\n";
    return kOk;
}

// --- calibrate -------------------------------------------------------------------------

inline int cmd_calibrate(json cfg, std::ostream& out, std::ostream& err) {
    const int l = require<int>(cfg, "L");
    ChainModel model = resolve_chain(cfg, l);
    const bool tri = model.cls == SymmetryClassLabel::tri;
    const int m = get_or<int>(cfg, "m", 20);
    const int cutoff = get_or<int>(cfg, "cutoff", default_calibration_cutoff(model.spec.L, tri));
    const int t_max = get_or<int>(cfg, "t_max", cutoff);
    if (!cfg.contains("seed")) throw UsageError("missing required field 'seed'");
    const auto seed = cfg["seed"].get<std::uint64_t>();
    if (m < 1) throw UsageError("m must be >= 1");
    if (cutoff < 0 || t_max < cutoff) throw UsageError("need 0 <= cutoff <= t_max");
    check_memory(3.0 * 16.0 * static_cast<double>(model.spec.L.dimension()) * std::max(1, thread_count()), cfg);
    cfg["m"] = m;
    cfg["cutoff"] = cutoff;
    cfg["t_max"] = t_max;
    apply_threads(cfg);

    const auto c = correlation_series(model.spec, t_max, ProbeEnsemble::gaussian(m, seed));
    const auto cal = calibrate_sigma(c, cutoff, tri);
    Metadata meta = base_metadata("calibrate", cfg);
    meta.emplace_back("calibration", calibration_json(cal).dump());
    with_output(cfg, out, [&](std::ostream& os) {
        CsvWriter w(os, meta, {"t", "c"});
        for (int t = 0; t <= t_max; ++t) w.row({static_cast<double>(t), c.c[static_cast<std::size_t>(t)]});
    });
    auto& s = summary_stream(cfg, out, err);
    s << "sigma " << format_double(cal.sigma) << "\n";
    s << "sigma_raw " << format_double(cal.raw.sigma) << "\n";
    s << "plateau " << format_double(cal.plateau) << "\n";
    s << "ramp_plateau " << format_double(cal.ramp_plateau) << "\n";
    s << "running_sum";
    const int step = std::max(1, cutoff / 10);
    for (int t = 0; t <= cutoff; t += step) s << ' ' << t << ':' << format_double(cal.raw.running[static_cast<std::size_t>(t)]);
    s << "\n";
    if (cal.raw.non_convergent) s << "warning: integrated correlation has not converged within the cutoff\n";
    if (cal.non_decaying) s << "warning: correlation function does not decay; sigma is not meaningful\n";
    return kOk;
}

// --- spectrum / formfactor --------------------------------------------------------------

struct SpectrumData {
    std::vector<EigenphaseList> lists;
    std::vector<double> spacings;
    RatioAccumulator ratios;
    json sectors = json::array();
};

inline std::vector<double> parse_sector_field(const json& cfg) {
    const json& v = cfg["sectors"];
    if (v.is_array()) {
        std::vector<double> out;
        for (const auto& x : v) out.push_back(x.get<double>());
        return out;
    }
    if (v.is_string()) return parse_number_list(v.get<std::string>());
    throw UsageError("'sectors' must be a list of integers");
}

inline SpectrumData collect_spectrum(json& cfg) {
    const auto ls = int_list(cfg, "L");
    const bool parity = get_or<bool>(cfg, "parity", false);
    const auto max_dim = get_or<std::size_t>(cfg, "max_dense_dim", kDefaultMaxDenseDimension);
    cfg["parity"] = parity;
    cfg["max_dense_dim"] = max_dim;
    const bool explicit_sectors = cfg.contains("sectors");
    SpectrumData d;
    json basis_csv = nullptr;
    const std::string phases_path = get_or<std::string>(cfg, "phases_output", "");
    const std::string basis_path = get_or<std::string>(cfg, "basis_output", "");
    std::ofstream phases_out;
    std::ofstream basis_out;
    if (!phases_path.empty()) {
        phases_out.open(phases_path, std::ios::binary);
        if (!phases_out) throw UsageError("cannot write '" + phases_path + "'");
        phases_out << "# echochain: " << kVersion << "\nL,k,parity,theta\n";
    }
    if (!basis_path.empty()) {
        basis_out.open(basis_path, std::ios::binary);
        if (!basis_out) throw UsageError("cannot write '" + basis_path + "'");
    }
    std::optional<SymmetryClassLabel> cls;
    for (int l : ls) {
        json sub = cfg;
        ChainModel model = resolve_chain(sub, l);
        if (cls && *cls != model.cls) throw UsageError("all sizes must share one symmetry class");
        cls = model.cls;
        cfg["class"] = sub["class"];
        cfg["kicks"] = sub["kicks"];
        cfg["J"] = sub["J"];
        const auto ks = explicit_sectors ? to_ints(parse_sector_field(cfg)) : default_spectral_sectors(l);
        for (int k : ks) {
            if (k < 0 || k >= l) throw UsageError("sector " + std::to_string(k) + " out of range for L = " + std::to_string(l));
            const auto basis = build_sector_basis(model.spec.L, k);
            if (basis.dimension() > max_dim)
                throw ResourceError("sector L=" + std::to_string(l) + " k=" + std::to_string(k) + " has dimension " +
                                    std::to_string(basis.dimension()) + " > max_dense_dim " + std::to_string(max_dim));
            if (basis_out.is_open()) basis.write_csv(basis_out);
            const auto mat = sector_floquet_matrix(model.spec, basis, max_dim);
            std::vector<std::pair<std::string, Eigen::MatrixXcd>> blocks;
            const bool self_paired = k == 0 || 2 * k == l;
            if (parity && self_paired) {
                const auto split = parity_split(basis);
                blocks.emplace_back("+", restrict_to(mat, split.even));
                blocks.emplace_back("-", restrict_to(mat, split.odd));
            } else {
                blocks.emplace_back("", mat);
            }
            for (const auto& [tag, blk] : blocks) {
                auto e = eigenphases(blk, k);
                if (phases_out.is_open())
                    for (double th : e.phases) phases_out << l << ',' << k << ',' << (tag.empty() ? "0" : tag == "+" ? "1" : "-1") << ',' << format_double(th) << '\n';
                const auto s = unfolded_spacings(e);
                d.spacings.insert(d.spacings.end(), s.begin(), s.end());
                accumulate_spacing_ratios(e, d.ratios);
                d.sectors.push_back(json{{"L", l}, {"k", k}, {"parity", tag}, {"dim", e.phases.size()}});
                d.lists.push_back(std::move(e));
            }
        }
    }
    return d;
}

inline int cmd_spectrum(json cfg, std::ostream& out, std::ostream& err) {
    const int bins = get_or<int>(cfg, "bins", 40);
    const double s_max = get_or<double>(cfg, "s_max", 4.0);
    const int mc_ref = get_or<int>(cfg, "mc_ref", 0);
    const int mc_n = get_or<int>(cfg, "mc_n", 200);
    const auto seed = get_or<std::uint64_t>(cfg, "seed", 0);
    if (bins < 1 || !(s_max > 0.0)) throw UsageError("need bins >= 1 and s_max > 0");
    cfg["bins"] = bins;
    cfg["s_max"] = s_max;
    apply_threads(cfg);
    auto d = collect_spectrum(cfg);
    if (d.spacings.empty()) throw UsageError("no spacings: every selected sector has fewer than 2 levels");
    const auto h = nns_density(d.spacings, bins, s_max);
    const double ks1 = ks_distance_to_surmise(d.spacings, 1);
    const double ks2 = ks_distance_to_surmise(d.spacings, 2);
    std::vector<std::string> cols{"s", "density", "surmise_b1", "surmise_b2"};
    SpacingHistogram ref1, ref2;
    json mc_meta = nullptr;
    if (mc_ref > 0) {
        cfg["mc_ref"] = mc_ref;
        cfg["mc_n"] = mc_n;
        cfg["seed"] = seed;
        const auto c1 = circular_ensemble_reference(1, mc_n, mc_ref, seed);
        const auto c2 = circular_ensemble_reference(2, mc_n, mc_ref, seed);
        ref1 = nns_density(c1.spacings, bins, s_max);
        ref2 = nns_density(c2.spacings, bins, s_max);
        cols.emplace_back("mc_b1");
        cols.emplace_back("mc_b2");
        mc_meta = json{{"r_mean_b1", c1.ratios.mean()}, {"r_mean_b2", c2.ratios.mean()}};
    }
    const json summary{{"r_mean", d.ratios.mean()},
                       {"ratios", d.ratios.count},
                       {"spacings", d.spacings.size()},
                       {"ks_b1", ks1},
                       {"ks_b2", ks2},
                       {"sectors", d.sectors}};
    Metadata meta = base_metadata("spectrum", cfg);
    meta.emplace_back("statistics", summary.dump());
    if (!mc_meta.is_null()) meta.emplace_back("mc_reference", mc_meta.dump());
    with_output(cfg, out, [&](std::ostream& os) {
        CsvWriter w(os, meta, cols);
        for (std::size_t b = 0; b < h.centers.size(); ++b) {
            std::vector<double> row{h.centers[b], h.density[b], wigner_surmise(1, h.centers[b]),
                                    wigner_surmise(2, h.centers[b])};
            if (mc_ref > 0) {
                row.push_back(ref1.density[b]);
                row.push_back(ref2.density[b]);
            }
            w.row(row);
        }
    });
    auto& s = summary_stream(cfg, out, err);
    s << "r_mean " << format_double(d.ratios.mean()) << "\n";
    s << "spacings " << d.spacings.size() << "\n";
    s << "ks_b1 " << format_double(ks1) << "\nks_b2 " << format_double(ks2) << "\n";
    return kOk;
}

inline int cmd_formfactor(json cfg, std::ostream& out, std::ostream& err) {
    const double tau_max = get_or<double>(cfg, "tau_max", 2.0);
    const double window = get_or<double>(cfg, "window", 0.15);
    if (!(tau_max > 0.0) || window < 0.0) throw UsageError("need tau_max > 0 and window >= 0");
    cfg["tau_max"] = tau_max;
    cfg["window"] = window;
    apply_threads(cfg);
    auto d = collect_spectrum(cfg);
    const int beta = cfg["class"].get<std::string>() == "tri" ? 1 : 2;
    const auto ff = spectral_form_factor(d.lists, beta, tau_max, window);
    Metadata meta = base_metadata("formfactor", cfg);
    meta.emplace_back("beta", std::to_string(beta));
    meta.emplace_back("sectors", d.sectors.dump());
    with_output(cfg, out, [&](std::ostream& os) {
        CsvWriter w(os, meta, {"tau", "k", "k_ref"});
        for (std::size_t g = 0; g < ff.tau.size(); ++g) w.row({ff.tau[g], ff.k[g], ff.k_ref[g]});
    });
    summary_stream(cfg, out, err) << "points " << ff.tau.size() << "\n";
    return kOk;
}

// --- rmt / mc-rmt ----------------------------------------------------------------------

inline int beta_from(const json& cfg) {
    const int beta = get_or<int>(cfg, "beta", 2);
    if (beta != 1 && beta != 2) throw UsageError("beta must be 1 or 2");
    return beta;
}

inline Metadata rmt_metadata(const std::string& command, const json& cfg, const RmtCurve& c) {
    Metadata meta = base_metadata(command, cfg);
    meta.emplace_back("beta", std::to_string(c.beta));
    meta.emplace_back("class", c.beta == 1 ? "tri" : "non_tri");
    meta.emplace_back("epsilon", format_double(c.epsilon));
    meta.emplace_back("method", c.method);
    if (!c.late_branch.empty()) meta.emplace_back("late_branch", c.late_branch);
    return meta;
}

inline void write_rmt(std::ostream& os, const Metadata& meta, const RmtCurve& c) {
    CsvWriter w(os, meta, {"t", "f", "stderr"});
    for (std::size_t k = 0; k < c.t.size(); ++k) w.row({c.t[k], c.f[k], c.stderr_[k]});
}

inline int cmd_rmt(json cfg, std::ostream& out, std::ostream& err) {
    const int beta = beta_from(cfg);
    const double eps = require<double>(cfg, "epsilon");
    const double t_max = get_or<double>(cfg, "t_max", 2.0);
    const double dt = get_or<double>(cfg, "dt", 0.01);
    const std::string method = get_or<std::string>(cfg, "method", beta == 2 ? "exact" : "elr");
    const std::string branch_name = get_or<std::string>(cfg, "late_branch", to_string(kDefaultLateBranch));
    if (eps < 0.0) throw UsageError("epsilon must be >= 0");
    if (method == "exact" && beta != 2)
        throw UsageError("no closed-form exact curve for beta = 1; use mc-rmt for the GOE reference");
    LateBranch branch;
    if (branch_name == "continuous")
        branch = LateBranch::continuous;
    else if (branch_name == "printed")
        branch = LateBranch::printed;
    else
        throw UsageError("late_branch must be 'continuous' or 'printed'");
    if (method != "exact" && method != "lr" && method != "elr") throw UsageError("method must be exact, lr or elr");
    std::vector<double> grid;
    try {
        grid = uniform_grid(t_max, dt);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    cfg["beta"] = beta;
    cfg["t_max"] = t_max;
    cfg["dt"] = dt;
    cfg["method"] = method;
    if (method == "exact") cfg["late_branch"] = branch_name;
    const auto c = closed_form_curve(method, beta, eps, grid, branch);
    const auto meta = rmt_metadata("rmt", cfg, c);
    with_output(cfg, out, [&](std::ostream& os) { write_rmt(os, meta, c); });
    summary_stream(cfg, out, err) << "points " << c.t.size() << "\n";
    return kOk;
}

inline int cmd_mc_rmt(json cfg, std::ostream& out, std::ostream& err) {
    const int beta = beta_from(cfg);
    const double eps = require<double>(cfg, "epsilon");
    const double t_max = get_or<double>(cfg, "t_max", 2.0);
    const double dt = get_or<double>(cfg, "dt", 0.05);
    const int n = get_or<int>(cfg, "N", 200);
    const int nr = get_or<int>(cfg, "realizations", 500);
    if (!cfg.contains("seed")) throw UsageError("missing required field 'seed'");
    const auto seed = cfg["seed"].get<std::uint64_t>();
    if (eps < 0.0) throw UsageError("epsilon must be >= 0");
    if (n < 4 || nr < 2) throw UsageError("need N >= 4 and realizations >= 2");
    check_memory(static_cast<double>(nr) * (t_max / dt + 2.0) * 16.0 +
                     2.0 * 16.0 * n * n * std::max(1, thread_count()), cfg);
    std::vector<double> grid;
    try {
        grid = uniform_grid(t_max, dt);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    cfg["beta"] = beta;
    cfg["t_max"] = t_max;
    cfg["dt"] = dt;
    cfg["N"] = n;
    cfg["realizations"] = nr;
    apply_threads(cfg);
    const auto c = mc_ensemble_fidelity(beta, eps, grid, {n, nr, seed});
    auto meta = rmt_metadata("mc-rmt", cfg, c);
    double max_im_z = 0.0;
    for (std::size_t k = 0; k < c.t.size(); ++k)
        if (c.im_stderr[k] > 0.0) max_im_z = std::max(max_im_z, std::abs(c.im_f[k]) / c.im_stderr[k]);
    meta.emplace_back("max_abs_im_over_stderr", format_double(max_im_z));
    with_output(cfg, out, [&](std::ostream& os) { write_rmt(os, meta, c); });
    summary_stream(cfg, out, err) << "points " << c.t.size() << "\nmax_abs_im_over_stderr " << format_double(max_im_z)
                                  << "\n";
    return kOk;
}

// --- compare ---------------------------------------------------------------------------

/// One curve read back from a fidelity or RMT CSV, with the metadata needed
/// to check compatibility.
struct LoadedCurve {
    std::vector<double> t;       ///< Heisenberg units
    std::vector<double> f;       ///< real part
    std::vector<double> stderr_; ///< per-point standard error (RMT files)
    std::string cls;
    std::optional<double> epsilon;
    std::optional<double> sigma_total;
    std::string kind;            ///< fidelity | rmt
};

inline LoadedCurve load_curve(const std::string& path) {
    CsvTable tab;
    try {
        tab = read_csv_file(path);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    LoadedCurve c;
    if (tab.has_column("t_heis") && tab.has_column("re_f")) {
        c.kind = "fidelity";
        c.t = tab.values("t_heis");
        c.f = tab.values("re_f");
        c.stderr_.assign(c.t.size(), 0.0);
        if (!tab.meta.count("config")) throw UsageError("'" + path + "' lacks the config header");
        const json cfg = json::parse(tab.meta["config"]);
        c.cls = cfg.value("class", "");
        if (cfg.contains("epsilon") && cfg["epsilon"].is_number()) c.epsilon = cfg["epsilon"].get<double>();
        if (tab.meta.count("error_budget")) {
            const json b = json::parse(tab.meta["error_budget"]);
            if (b.is_object() && b.contains("sigma_total")) c.sigma_total = b["sigma_total"].get<double>();
        }
    } else if (tab.has_column("t") && tab.has_column("f")) {
        c.kind = "rmt";
        c.t = tab.values("t");
        c.f = tab.values("f");
        c.stderr_ = tab.has_column("stderr") ? tab.values("stderr") : std::vector<double>(c.t.size(), 0.0);
        c.cls = tab.meta.count("class") ? tab.meta["class"] : "";
        if (tab.meta.count("epsilon")) c.epsilon = parse_double(tab.meta["epsilon"]);
    } else {
        throw UsageError("'" + path + "' is neither a fidelity nor an RMT curve");
    }
    return c;
}

inline double interpolate(const std::vector<double>& x, const std::vector<double>& y, double at) {
    const auto it = std::upper_bound(x.begin(), x.end(), at);
    if (it == x.begin()) return y.front();
    if (it == x.end()) return y.back();
    const auto i = static_cast<std::size_t>(it - x.begin());
    const double w = (at - x[i - 1]) / (x[i] - x[i - 1]);
    return (1.0 - w) * y[i - 1] + w * y[i];
}

inline int cmd_compare(json cfg, std::ostream& out, std::ostream& err) {
    const auto test = load_curve(require<std::string>(cfg, "test"));
    const auto ref = load_curve(require<std::string>(cfg, "reference"));
    const double band = get_or<double>(cfg, "band", 3.0);
    if (test.cls.empty() || ref.cls.empty()) throw UsageError("symmetry class missing from metadata");
    if (test.cls != ref.cls) throw UsageError("class mismatch: " + test.cls + " vs " + ref.cls);
    if (!test.epsilon || !ref.epsilon) throw UsageError("epsilon missing from metadata");
    const double de = std::abs(*test.epsilon - *ref.epsilon);
    if (de > 1e-9 * std::max(1.0, std::abs(*ref.epsilon)))
        throw UsageError("epsilon mismatch: " + format_double(*test.epsilon) + " vs " + format_double(*ref.epsilon));
    const double t_hi = get_or<double>(cfg, "t_max", ref.t.back());
    std::optional<double> sigma_fixed;
    if (cfg.contains("sigma")) sigma_fixed = cfg["sigma"].get<double>();
    else if (test.sigma_total) sigma_fixed = *test.sigma_total;
    cfg["band"] = band;

    struct Point {
        double t, f, f_ref, sigma, residual;
    };
    std::vector<Point> pts;
    for (std::size_t k = 0; k < test.t.size(); ++k) {
        const double t = test.t[k];
        if (t < ref.t.front() - 1e-12 || t > std::min(t_hi, ref.t.back()) + 1e-12) continue;
        const double fr = interpolate(ref.t, ref.f, t);
        double sigma = 0.0;
        if (sigma_fixed) {
            sigma = *sigma_fixed;
        } else {
            const double se_ref = interpolate(ref.t, ref.stderr_, t);
            sigma = std::sqrt(test.stderr_[k] * test.stderr_[k] + se_ref * se_ref);
        }
        pts.push_back({t, test.f[k], fr, sigma, test.f[k] - fr});
    }
    if (pts.empty()) throw UsageError("time axes do not overlap");
    std::size_t within = 0;
    double mean_res = 0.0;
    for (const auto& p : pts) {
        const bool in = p.sigma > 0.0 ? std::abs(p.residual) <= band * p.sigma : std::abs(p.residual) <= 1e-12;
        within += in ? 1 : 0;
        mean_res += p.residual;
    }
    mean_res /= static_cast<double>(pts.size());
    // systematic deviation: the mean residual over some window of width
    // `window` (Heisenberg units) exceeds the pointwise sigma there; noise
    // averages down over a window, a persistent offset does not
    const double window = get_or<double>(cfg, "window", 0.25);
    if (!(window > 0.0)) throw UsageError("window must be > 0");
    cfg["window"] = window;
    std::vector<double> pre_r(pts.size() + 1, 0.0), pre_s(pts.size() + 1, 0.0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        pre_r[i + 1] = pre_r[i] + pts[i].residual;
        pre_s[i + 1] = pre_s[i] + pts[i].sigma;
    }
    const double span = pts.back().t - pts.front().t;
    const double w_eff = std::min(window, span);
    double worst = 0.0, worst_t = pts.front().t;
    bool systematic = false;
    for (std::size_t i = 0, j = 0; i < pts.size(); ++i) {
        j = std::max(j, i);
        while (j + 1 < pts.size() && pts[j].t - pts[i].t < w_eff - 1e-12) ++j;
        if (pts[j].t - pts[i].t < w_eff - 1e-12) break;
        const double n = static_cast<double>(j - i + 1);
        const double mean = (pre_r[j + 1] - pre_r[i]) / n;
        const double sig = (pre_s[j + 1] - pre_s[i]) / n;
        const double excess = sig > 0.0 ? std::abs(mean) / sig : (std::abs(mean) > 1e-12 ? 1e300 : 0.0);
        if (excess > 1.0 && std::abs(mean) > std::abs(worst)) {
            systematic = true;
            worst = mean;
            worst_t = pts[i].t;
        }
    }
    const std::string direction = !systematic ? "none" : (worst > 0.0 ? "reference below test" : "reference above test");
    const double fraction = static_cast<double>(within) / static_cast<double>(pts.size());
    const json report{{"points", pts.size()},
                      {"fraction_within_band", fraction},
                      {"band_sigmas", band},
                      {"mean_residual", mean_res},
                      {"systematic_deviation", systematic},
                      {"direction", direction},
                      {"window", window},
                      {"max_window_mean_residual", worst},
                      {"max_window_start", worst_t}};
    Metadata meta = base_metadata("compare", cfg);
    meta.emplace_back("report", report.dump());
    with_output(cfg, out, [&](std::ostream& os) {
        CsvWriter w(os, meta, {"t", "f", "f_ref", "sigma", "residual"});
        for (const auto& p : pts) w.row({p.t, p.f, p.f_ref, p.sigma, p.residual});
    });
    auto& s = summary_stream(cfg, out, err);
    s << "points " << pts.size() << "\n";
    s << "fraction_within_band " << format_double(fraction) << "\n";
    s << "mean_residual " << format_double(mean_res) << "\n";
    s << "systematic_deviation " << (systematic ? "yes" : "no") << " (" << direction << ")";
    if (systematic) s << " window mean residual " << format_double(worst) << " from t = " << format_double(worst_t);
    s << "\n";
    return kOk;
}

// --- entry point ------------------------------------------------------------------------

/// Flags shared by the chain-based commands.
struct ChainFlags {
    std::optional<std::string> L, preset, cls, kicks, output, sectors;
    std::optional<double> J, delta, epsilon, sigma_int, max_memory_mb;
    std::optional<int> m, t_max, stride, cutoff, calib_m, calib_cutoff, threads;
    std::optional<std::uint64_t> seed;

    void add(CLI::App* app) {
        app->add_option("--L", L, "chain length (spectrum/formfactor accept a list, e.g. 12,13,14)");
        app->add_option("--preset", preset, "gue | goe");
        app->add_option("--class", cls, "tri | non_tri");
        app->add_option("--kicks", kicks, "kick fields 'bx,by,bz;bx,by,bz'");
        app->add_option("--J", J, "Ising coupling");
        app->add_option("--seed", seed, "master seed");
        app->add_option("--threads", threads, "worker threads (overrides ECHOCHAIN_THREADS)");
        app->add_option("-o,--output", output, "output CSV path ('-' for stdout)");
        app->add_option("--max-memory-mb", max_memory_mb, "memory guard");
    }

    void apply(json& cfg) const {
        if (L) {
            const auto v = to_ints(parse_number_list(*L));
            if (v.size() == 1)
                cfg["L"] = v[0];
            else
                cfg["L"] = v;
        }
        override_key(cfg, "preset", preset);
        override_key(cfg, "class", cls);
        if (kicks) {
            cfg["kicks"] = parse_kicks(*kicks);
            if (!preset) cfg.erase("preset");
        }
        override_key(cfg, "J", J);
        override_key(cfg, "seed", seed);
        override_key(cfg, "threads", threads);
        override_key(cfg, "output", output);
        override_key(cfg, "max_memory_mb", max_memory_mb);
        override_key(cfg, "delta", delta);
        override_key(cfg, "epsilon", epsilon);
        override_key(cfg, "sigma_int", sigma_int);
        override_key(cfg, "m", m);
        override_key(cfg, "t_max", t_max);
        override_key(cfg, "stride", stride);
        override_key(cfg, "cutoff", cutoff);
        override_key(cfg, "calib_m", calib_m);
        override_key(cfg, "calib_cutoff", calib_cutoff);
        if (sectors) cfg["sectors"] = to_ints(parse_number_list(*sectors));
        // a flag given for one of delta / epsilon replaces the other from the file
        if (delta && !epsilon) cfg.erase("epsilon");
        if (epsilon && !delta) cfg.erase("delta");
    }
};

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Fidelity decay in the multiply kicked Ising chain"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kVersion));
    std::string config_path;
    app.add_option("-c,--config", config_path, "JSON config file")->check(CLI::ExistingFile);

    ChainFlags cf;
    std::optional<double> beta_eps, dt, tau_max, window, s_max, t_max_real, band, sigma_band;
    std::optional<int> beta, n_mat, realizations, bins, mc_ref, mc_n;
    std::optional<std::size_t> max_dense_dim;
    std::optional<std::string> method, late_branch, test_path, ref_path, phases_out, basis_out;
    bool parity = false;

    auto* fid = app.add_subcommand("fidelity", "trace-estimated fidelity amplitude f(t)");
    cf.add(fid);
    fid->add_option("--delta", cf.delta, "perturbation kick angle");
    fid->add_option("--epsilon", cf.epsilon, "perturbation strength in RMT units");
    fid->add_option("--sigma-int", cf.sigma_int, "integrated correlation (skips calibration)");
    fid->add_option("--m", cf.m, "number of random initial states");
    fid->add_option("--t-max", cf.t_max, "last time step");
    fid->add_option("--stride", cf.stride, "sample every stride steps");
    fid->add_option("--cutoff", cf.cutoff, "transient cutoff for the error budget (steps)");
    fid->add_option("--calib-m", cf.calib_m, "states used for calibration");
    fid->add_option("--calib-cutoff", cf.calib_cutoff, "calibration window (steps)");

    auto* cal = app.add_subcommand("calibrate", "correlation function C(t) and sigma");
    cf.add(cal);
    cal->add_option("--m", cf.m, "number of random states");
    cal->add_option("--t-max", cf.t_max, "last lag");
    cal->add_option("--cutoff", cf.cutoff, "summation window (steps)");

    auto add_spectral = [&](CLI::App* a) {
        cf.add(a);
        a->add_option("--sectors", cf.sectors, "momentum sectors, e.g. 1,2,3");
        a->add_flag("--parity", parity, "split self-paired sectors by reflection parity");
        a->add_option("--max-dense-dim", max_dense_dim, "largest sector diagonalized densely");
        a->add_option("--phases-output", phases_out, "also write eigenphases to this CSV");
        a->add_option("--basis-output", basis_out, "also write sector bases (representative, orbit size)");
    };
    auto* spec = app.add_subcommand("spectrum", "nearest-neighbour spacing density and <r>");
    add_spectral(spec);
    spec->add_option("--bins", bins, "histogram bins");
    spec->add_option("--s-max", s_max, "histogram range");
    spec->add_option("--mc-ref", mc_ref, "circular-ensemble realizations for reference columns");
    spec->add_option("--mc-n", mc_n, "circular-ensemble matrix size");

    auto* ff = app.add_subcommand("formfactor", "smoothed spectral form factor K(tau)");
    add_spectral(ff);
    ff->add_option("--tau-max", tau_max, "last tau");
    ff->add_option("--window", window, "boxcar width in tau");

    auto* rmt = app.add_subcommand("rmt", "closed-form RMT fidelity curves");
    rmt->add_option("--beta", beta, "1 (GOE) or 2 (GUE)");
    rmt->add_option("--epsilon", beta_eps, "perturbation strength");
    rmt->add_option("--t-max", t_max_real, "last t (Heisenberg units)");
    rmt->add_option("--dt", dt, "grid step");
    rmt->add_option("--method", method, "exact | lr | elr");
    rmt->add_option("--late-branch", late_branch, "continuous | printed (t > 1 of the exact curve)");
    rmt->add_option("-o,--output", cf.output, "output CSV path");

    auto* mc = app.add_subcommand("mc-rmt", "Monte Carlo random-matrix fidelity");
    mc->add_option("--beta", beta, "1 (GOE) or 2 (GUE)");
    mc->add_option("--epsilon", beta_eps, "perturbation strength");
    mc->add_option("--t-max", t_max_real, "last t (Heisenberg units)");
    mc->add_option("--dt", dt, "grid step");
    mc->add_option("--N", n_mat, "matrix dimension");
    mc->add_option("--realizations", realizations, "ensemble size");
    mc->add_option("--seed", cf.seed, "master seed");
    mc->add_option("--threads", cf.threads, "worker threads");
    mc->add_option("--max-memory-mb", cf.max_memory_mb, "memory guard");
    mc->add_option("-o,--output", cf.output, "output CSV path");

    auto* cmp = app.add_subcommand("compare", "residuals of a curve against a reference");
    cmp->add_option("--test", test_path, "fidelity or RMT CSV");
    cmp->add_option("--reference", ref_path, "RMT CSV");
    cmp->add_option("--band", band, "band half-width in sigmas");
    cmp->add_option("--sigma", sigma_band, "override sigma");
    cmp->add_option("--t-max", t_max_real, "compare up to this t (Heisenberg units)");
    cmp->add_option("--window", window, "width of the systematic-deviation window (Heisenberg units)");
    cmp->add_option("-o,--output", cf.output, "residual CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForVersion&) {
        out << kVersion << "\n";
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    }

    try {
        json cfg = load_config(config_path);
        cf.apply(cfg);
        override_key(cfg, "epsilon", beta_eps);
        override_key(cfg, "beta", beta);
        override_key(cfg, "dt", dt);
        override_key(cfg, "tau_max", tau_max);
        override_key(cfg, "window", window);
        override_key(cfg, "s_max", s_max);
        override_key(cfg, "bins", bins);
        override_key(cfg, "mc_ref", mc_ref);
        override_key(cfg, "mc_n", mc_n);
        override_key(cfg, "N", n_mat);
        override_key(cfg, "realizations", realizations);
        override_key(cfg, "max_dense_dim", max_dense_dim);
        override_key(cfg, "method", method);
        override_key(cfg, "late_branch", late_branch);
        override_key(cfg, "test", test_path);
        override_key(cfg, "reference", ref_path);
        override_key(cfg, "band", band);
        override_key(cfg, "sigma", sigma_band);
        override_key(cfg, "phases_output", phases_out);
        override_key(cfg, "basis_output", basis_out);
        if (parity) cfg["parity"] = true;
        if (t_max_real) cfg["t_max"] = *t_max_real;

        if (fid->parsed()) return cmd_fidelity(cfg, out, err);
        if (cal->parsed()) return cmd_calibrate(cfg, out, err);
        if (spec->parsed()) return cmd_spectrum(cfg, out, err);
        if (ff->parsed()) return cmd_formfactor(cfg, out, err);
        if (rmt->parsed()) return cmd_rmt(cfg, out, err);
        if (mc->parsed()) return cmd_mc_rmt(cfg, out, err);
        if (cmp->parsed()) return cmd_compare(cfg, out, err);
        return kUsage;
    } catch (const ResourceError& e) {
        err << "resource guard: " << e.what() << "\n";
        return kResource;
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << "\n";
        return kNumeric;
    } catch (const ValidationError& e) {
        err << "numeric failure: " << e.what() << "\n";
        return kNumeric;
    } catch (const json::exception& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        err << "numeric failure: " << e.what() << "\n";
        return kNumeric;
    }
}

} // namespace echochain::cli
