#include "fracouple/config.hpp"

#include <cctype>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "fracouple/kernels.hpp"
#include "fracouple/rng.hpp"

namespace fracouple {

namespace {

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

double to_num(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing characters");
        return x;
    } catch (const std::exception&) {
        throw std::invalid_argument("key '" + key + "' is not a number: " + v);
    }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        unsigned long long x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing characters");
        return x;
    } catch (const std::exception&) {
        throw std::invalid_argument("key '" + key +
                                    "' is not a nonnegative integer: " + v);
    }
}

Vec to_vec(const std::string& key, const std::string& v) {
    Vec out;
    std::stringstream ss(v);
    std::string part;
    while (std::getline(ss, part, ','))
        out.push_back(to_num(key, trim(part)));
    return out;
}

std::string now_stamp() {
    std::time_t t = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

std::string join_path(const std::string& dir, const std::string& name) {
    if (dir.empty() || dir == ".") return name;
    return dir + "/" + name;
}

} // namespace

std::string content_digest(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(h));
    return buf;
}

std::string file_digest(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open file: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return content_digest(ss.str());
}

bool ConfigDoc::has(const std::string& key) const {
    if (kv.count(key)) return true;
    for (const auto& [k, v] : kv) {
        std::size_t dot = k.rfind('.');
        if (dot != std::string::npos && k.substr(dot + 1) == key) return true;
    }
    return false;
}

std::string ConfigDoc::get(const std::string& key) const {
    auto it = kv.find(key);
    if (it != kv.end()) return it->second;
    for (const auto& [k, v] : kv) {
        std::size_t dot = k.rfind('.');
        if (dot != std::string::npos && k.substr(dot + 1) == key) return v;
    }
    throw std::invalid_argument("missing required key: " + key);
}

std::string ConfigDoc::get_or(const std::string& key,
                              const std::string& dflt) const {
    return has(key) ? get(key) : dflt;
}

ConfigDoc parse_config_text(const std::string& text) {
    ConfigDoc doc;
    doc.digest = content_digest(text);
    std::stringstream ss(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::invalid_argument("malformed section header at line " +
                                            std::to_string(lineno));
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("malformed line " +
                                        std::to_string(lineno) +
                                        " (expected key = value)");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key.empty())
            throw std::invalid_argument("empty key at line " +
                                        std::to_string(lineno));
        if (!section.empty()) key = section + "." + key;
        doc.kv[key] = val;
    }
    return doc;
}

ConfigDoc read_config_doc(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open config file: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str());
}

ExperimentConfig config_from_doc(ConfigDoc doc) {
    static const char* required[] = {"model", "H",        "theta", "alpha",
                                     "K",     "c3",       "beta",  "varsigma",
                                     "dt",    "T_hist",   "n_replicas",
                                     "t_max", "seed"};
    for (const char* k : required)
        if (!doc.has(k)) throw std::invalid_argument(std::string("missing required key: ") + k);

    ExperimentConfig ec;
    ec.model_id = doc.get("model");
    ec.model_dim = static_cast<std::size_t>(
        to_u64("dim", doc.get_or("dim", "1")));
    ModelSpec model = make_model(ec.model_id, ec.model_dim);

    CouplingConfig cc;
    cc.H = to_num("H", doc.get("H"));
    cc.theta = to_num("theta", doc.get("theta"));
    cc.alpha = to_num("alpha", doc.get("alpha"));
    cc.K = to_num("K", doc.get("K"));
    cc.c3 = to_num("c3", doc.get("c3"));
    cc.beta = to_num("beta", doc.get("beta"));
    cc.varsigma = to_num("varsigma", doc.get("varsigma"));
    cc.dt = to_num("dt", doc.get("dt"));
    cc.T_hist = to_num("T_hist", doc.get("T_hist"));
    cc.delta1 = to_num("delta1", doc.get_or("delta1", "0.9"));
    cc.c2 = to_num("c2", doc.get_or("c2", "1"));
    cc.C_K = to_num("C_K", doc.get_or("C_K", "1"));
    cc.kappa1 = to_num("kappa1", doc.get_or("kappa1", "0"));
    cc.kappa2 = to_num("kappa2", doc.get_or("kappa2", "0"));
    cc.M = to_num("M", doc.get_or("M", "0"));
    cc.a_loc = to_num("a_loc", doc.get_or("a_loc", "0"));
    cc.Cbar = to_num("Cbar", doc.get_or("Cbar", "0"));
    cc.rho_hat = to_num("rho_hat", doc.get_or("rho_hat", "0.5"));
    cc.eps_horizon = to_num("eps_horizon", doc.get_or("eps_horizon", "1e-3"));
    cc.tol_stick_rel =
        to_num("tol_stick", doc.get_or("tol_stick", "1e-8"));
    cc.ell_max = static_cast<std::size_t>(
        to_u64("ell_max", doc.get_or("ell_max", "0")));

    // arithmetic constraints first (errors cite the constraint), then the
    // derived quantities
    {
        CouplingConfig probe = cc;
        probe.c3 = std::max(probe.c3, 2.0 * probe.c2); // checked after snap
        probe.ell_max = probe.ell_max ? probe.ell_max : 1;
        validate_coupling_config(probe);
    }
    if (!(cc.c3 >= 2.0 * cc.c2 - 1e-12))
        throw std::invalid_argument("c3 must be at least 2*c2");
    ec.coupling = complete_coupling_config(model, cc);

    // calibration constants generated by `calibrate`, never recomputed here
    if (doc.has("constants")) {
        CalibrationConstants cal = read_constants(doc.get("constants"));
        ec.coupling.C_K = cal.C_K;
        ec.coupling.c2 = cal.c2;
        ec.coupling.c3 = std::max(ec.coupling.c3, 2.0 * cal.c2);
        validate_coupling_config(ec.coupling);
    }

    ec.n_replicas = static_cast<std::size_t>(
        to_u64("n_replicas", doc.get("n_replicas")));
    ec.t_max = to_num("t_max", doc.get("t_max"));
    ec.master_seed = to_u64("seed", doc.get("seed"));
    ec.n_workers = static_cast<std::size_t>(
        to_u64("n_workers", doc.get_or("n_workers", "1")));
    if (const char* env = std::getenv("FRACOUPLE_WORKERS"))
        ec.n_workers = static_cast<std::size_t>(to_u64("FRACOUPLE_WORKERS", env));
    if (doc.has("x1")) ec.x1 = to_vec("x1", doc.get("x1"));
    if (doc.has("x2")) ec.x2 = to_vec("x2", doc.get("x2"));
    ec.output_dir = doc.get_or("output_dir", ".");
    validate_experiment_config(ec);
    return ec;
}

ExperimentConfig parse_config(const std::string& path,
                              const std::vector<std::string>& overrides) {
    ConfigDoc doc = read_config_doc(path);
    for (const std::string& ov : overrides) {
        std::string body = ov;
        if (body.rfind("--", 0) == 0) body = body.substr(2);
        std::size_t eq = body.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("malformed override (expected --key=value): " + ov);
        doc.kv[trim(body.substr(0, eq))] = trim(body.substr(eq + 1));
        // overrides are part of the effective config identity
        doc.digest = content_digest(doc.digest + "|" + body);
    }
    return config_from_doc(doc);
}

void write_manifest(const RunManifest& m, const std::string& path) {
    std::ostringstream body;
    body << "config_digest=" << m.config_digest << '\n';
    if (!m.constants_digest.empty())
        body << "constants_digest=" << m.constants_digest << '\n';
    body << "version=" << m.version << '\n';
    body << "master_seed=" << m.master_seed << '\n';
    body << "started=" << m.started << '\n';
    body << "finished=" << m.finished << '\n';
    for (const auto& o : m.outputs) body << "output=" << o << '\n';
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write manifest: " + path);
    std::string s = body.str();
    os << s << "digest=" << content_digest(s) << '\n';
}

void write_constants(const CalibrationConstants& c, const std::string& path) {
    std::ostringstream body;
    body << "alpha_H=" << fmt17(c.alpha_H) << '\n'
         << "inversion_C=" << fmt17(c.inversion_C) << '\n'
         << "C_K=" << fmt17(c.C_K) << '\n'
         << "c2=" << fmt17(c.c2) << '\n'
         << "source_config=" << c.source_config_digest << '\n';
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write constants file: " + path);
    std::string s = body.str();
    os << s << "digest=" << content_digest(s) << '\n';
}

CalibrationConstants read_constants(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open constants file: " + path);
    std::string line, body, stored;
    std::map<std::string, std::string> kv;
    while (std::getline(is, line)) {
        std::size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key == "digest") {
            stored = val;
        } else {
            kv[key] = val;
            body += line + "\n";
        }
    }
    if (stored.empty() || content_digest(body) != stored)
        throw std::runtime_error(
            "constants file digest mismatch (tampered or truncated): " + path);
    CalibrationConstants c;
    c.alpha_H = to_num("alpha_H", kv.at("alpha_H"));
    c.inversion_C = to_num("inversion_C", kv.at("inversion_C"));
    c.C_K = to_num("C_K", kv.at("C_K"));
    c.c2 = to_num("c2", kv.at("c2"));
    c.source_config_digest = kv.count("source_config") ? kv.at("source_config") : "";
    return c;
}

// ---------------------------------------------------------------------------
// subcommands

namespace {

void write_trajectory_csv(const Trajectory& t, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write trajectory: " + path);
    os << "t";
    for (std::size_t c = 0; c < t.d; ++c) os << ",coord_" << c;
    os << '\n';
    for (std::size_t i = 0; i <= t.grid.n; ++i) {
        os << fmt17(t.grid.node(i));
        for (std::size_t c = 0; c < t.d; ++c) os << ',' << fmt17(t.states[i][c]);
        os << '\n';
    }
}

int dispatch(const std::string& cmd, const std::string& cfg_path,
             const std::vector<std::string>& overrides) {
    ExperimentConfig cfg = parse_config(cfg_path, overrides);
    ConfigDoc doc = read_config_doc(cfg_path);
    // effective config identity: file digest chained with the overrides,
    // exactly as parse_config sees it
    std::string eff_digest = doc.digest;
    for (const std::string& ov : overrides) {
        std::string body = ov;
        if (body.rfind("--", 0) == 0) body = body.substr(2);
        eff_digest = content_digest(eff_digest + "|" + body);
    }
    for (const std::string& ov : overrides) {
        std::string body = ov.rfind("--", 0) == 0 ? ov.substr(2) : ov;
        std::size_t eq = body.find('=');
        if (eq != std::string::npos)
            doc.kv[trim(body.substr(0, eq))] = trim(body.substr(eq + 1));
    }
    ModelSpec model = make_model(cfg.model_id, cfg.model_dim);

    RunManifest man;
    man.config_digest = eff_digest;
    man.master_seed = cfg.master_seed;
    man.started = now_stamp();
    if (doc.has("constants"))
        man.constants_digest = file_digest(doc.get("constants"));
    auto out = [&](const std::string& name) {
        std::string p = join_path(cfg.output_dir, name);
        man.outputs.push_back(p);
        return p;
    };
    int code = 0;

    if (cmd == "fbm") {
        std::size_t n = static_cast<std::size_t>(
            std::llround(std::ceil(cfg.t_max / cfg.coupling.dt)));
        UniformGrid g(0.0, cfg.coupling.dt, n);
        RngStream rng(cfg.master_seed, 0);
        FbmPath b = sample_fgn(cfg.coupling.kernels, g, model.d, rng);
        write_path_csv(b, out("fbm.csv"));
    } else if (cmd == "integrate") {
        std::size_t n = static_cast<std::size_t>(
            std::llround(std::ceil(cfg.t_max / cfg.coupling.dt)));
        UniformGrid g(0.0, cfg.coupling.dt, n);
        RngStream rng(cfg.master_seed, 0);
        FbmPath b = sample_fgn(cfg.coupling.kernels, g, model.d, rng);
        Vec x0 = cfg.x1.empty() ? Vec(model.d, 0.0) : cfg.x1;
        write_trajectory_csv(integrate(model, x0, b), out("trajectory.csv"));
    } else if (cmd == "couple") {
        RngStream rng(cfg.master_seed, 0);
        Vec x1 = cfg.x1.empty() ? Vec(model.d, 0.0) : cfg.x1;
        Vec x2 = cfg.x2.empty() ? Vec(model.d, 0.0) : cfg.x2;
        CouplingResult res =
            run_coupling(model, x1, x2, cfg.coupling, cfg.t_max, rng);
        write_trial_log(res.trials, out("trial_log.csv"));
        std::cout << "coupled=" << (res.coupled ? 1 : 0)
                  << " tau0=" << fmt17(res.tau0) << " tau_infty="
                  << (res.coupled ? fmt17(res.tau_infty) : "inf") << '\n';
    } else if (cmd == "tail") {
        TailEstimate tail = estimate_coupling_tail(cfg);
        write_survival_csv(tail, out("survival.csv"));
        RateFit fit = rate_fit(tail);
        std::cout << "n_coupled=" << tail.n_coupled
                  << " n_censored=" << tail.n_censored
                  << " slope=" << fmt17(tail.slope)
                  << " reliable=" << (tail.slope_reliable ? 1 : 0)
                  << " consistent=" << (fit.consistent ? 1 : 0) << '\n';
    } else if (cmd == "validate") {
        auto items = validate_suite(cfg);
        write_validation_report(items, out("report.txt"));
        for (const auto& it : items) {
            std::cout << it.item << ',' << (it.pass ? "pass" : "fail") << ','
                      << fmt17(it.value) << ',' << fmt17(it.threshold) << '\n';
            if (!it.pass) code = 2;
        }
    } else if (cmd == "calibrate") {
        CouplingConfig cc = cfg.coupling;
        RngStream rng(cfg.master_seed, 0);
        std::size_t runs = static_cast<std::size_t>(to_u64(
            "calibration_runs", doc.get_or("calibration_runs", "32")));
        double ck = measure_CK(cc, model, runs, rng);
        CalibrationConstants cal;
        cal.alpha_H = cc.kernels.alpha_H;
        cal.inversion_C = cc.kernels.inv_C;
        cal.C_K = ck;
        cal.c2 = cc.c2;
        cal.source_config_digest = eff_digest;
        write_constants(cal, out("constants.txt"));
        std::cout << "C_K=" << fmt17(ck) << " c2=" << fmt17(cc.c2) << '\n';
    } else {
        throw std::invalid_argument("unknown subcommand: " + cmd);
    }

    man.finished = now_stamp();
    write_manifest(man, join_path(cfg.output_dir, "manifest.txt"));
    return code;
}

} // namespace

int cli_run(const std::vector<std::string>& args) {
    try {
        if (args.size() < 2)
            throw std::invalid_argument(
                "usage: fracouple <fbm|integrate|couple|tail|validate|calibrate> "
                "<config> [--key=value ...]");
        std::vector<std::string> overrides(args.begin() + 2, args.end());
        return dispatch(args[0], args[1], overrides);
    } catch (const std::exception& e) {
        std::cerr << "fracouple:error:" << e.what() << '\n';
        return 1;
    }
}

} // namespace fracouple
