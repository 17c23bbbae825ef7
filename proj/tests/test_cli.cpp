#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "fracouple/config.hpp"

using namespace fracouple;
namespace fs = std::filesystem;

namespace {

const char* kMinimalConfig =
    "model = additive_baseline\n"
    "H = 0.7\n"
    "theta = 0.55\n"
    "alpha = 0.25\n"
    "K = 10\n"
    "c3 = 2\n"
    "beta = 3\n"
    "varsigma = 1.5\n"
    "dt = 0.03125\n"
    "T_hist = 4\n"
    "n_replicas = 2\n"
    "t_max = 8\n"
    "seed = 3\n"
    "x1 = 0.3\n"
    "x2 = -0.2\n";

fs::path scratch_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("fracouple_cli_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string write_file(const fs::path& dir, const std::string& name,
                       const std::string& text) {
    fs::path p = dir / name;
    std::ofstream os(p);
    os << text;
    return p.string();
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("config text parsing: comments, sections, bare-key fallback") {
    ConfigDoc doc = parse_config_text(
        "# leading comment\n"
        "top = 1\n"
        "[run]\n"
        "seed = 7   # trailing comment\n"
        "t_max = 12.5\n"
        "[model]\n"
        "model = linear\n");
    CHECK(doc.kv.at("top") == "1");
    CHECK(doc.kv.at("run.seed") == "7");
    CHECK(doc.kv.at("model.model") == "linear");
    // bare-key lookups fall back across sections
    CHECK(doc.has("seed"));
    CHECK(doc.get("seed") == "7");
    CHECK(doc.get("t_max") == "12.5");
    CHECK(doc.get_or("absent", "dflt") == "dflt");
    CHECK_THROWS_WITH_AS(doc.get("absent"), "missing required key: absent",
                         std::invalid_argument);

    CHECK_THROWS_AS(parse_config_text("[broken\nk = v\n"),
                    std::invalid_argument);
    CHECK_THROWS_AS(parse_config_text("no equals sign here\n"),
                    std::invalid_argument);
    CHECK_THROWS_AS(parse_config_text("= value-without-key\n"),
                    std::invalid_argument);
}

TEST_CASE("content digest is stable and content-sensitive") {
    std::string a = content_digest("hello");
    CHECK(a == content_digest("hello"));
    CHECK(a.size() == 16);
    CHECK(a != content_digest("hello!"));
    CHECK(content_digest("") != content_digest("\n"));
    CHECK(parse_config_text("k = 1\n").digest == content_digest("k = 1\n"));
}

TEST_CASE("minimal config builds a valid experiment with documented defaults") {
    ExperimentConfig ec = config_from_doc(parse_config_text(kMinimalConfig));
    CHECK(ec.model_id == "additive_baseline");
    CHECK(ec.model_dim == 1);
    CHECK(ec.n_replicas == 2);
    CHECK(ec.t_max == doctest::Approx(8.0));
    CHECK(ec.master_seed == 3);
    CHECK(ec.n_workers == 1);
    CHECK(ec.x1 == Vec{0.3});
    CHECK(ec.x2 == Vec{-0.2});

    const CouplingConfig& cc = ec.coupling;
    CHECK(cc.delta1 == doctest::Approx(0.9));
    CHECK(cc.tol_stick_rel == doctest::Approx(1e-8));
    CHECK(cc.ell_max > 0);          // derived from the horizon tolerance
    CHECK(cc.kappa2 > 0.0);         // derived from the localized drift bound
    CHECK(cc.c3 >= 2.0 * cc.c2);
    CHECK(cc.kernels.alpha_H > 0.0);
}

TEST_CASE("config errors cite the missing key or violated constraint") {
    auto drop = [](const std::string& key) {
        std::stringstream ss(kMinimalConfig);
        std::string line, out;
        while (std::getline(ss, line))
            if (line.rfind(key + " ", 0) != 0) out += line + "\n";
        return out;
    };
    CHECK_THROWS_WITH_AS(config_from_doc(parse_config_text(drop("seed"))),
                         "missing required key: seed", std::invalid_argument);
    CHECK_THROWS_WITH_AS(config_from_doc(parse_config_text(drop("varsigma"))),
                         "missing required key: varsigma",
                         std::invalid_argument);

    auto with = [](const std::string& extra) {
        return config_from_doc(parse_config_text(kMinimalConfig + extra));
    };
    CHECK_THROWS_WITH_AS(with("alpha = 0.6\n"),
                         "alpha must lie in (0, 1/2)", std::invalid_argument);
    CHECK_THROWS_WITH_AS(with("beta = 1.2\n"),
                         "beta must exceed 1/(1-2*alpha) per schedule condition",
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(with("theta = 0.8\n"),
                         "theta must lie in (1/2, H)", std::invalid_argument);
    CHECK_THROWS_WITH_AS(with("K = -1\n"), "K must be positive",
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(with("dt = 0.3\n"),
                         "dt must divide the unit window (1/dt integer)",
                         std::invalid_argument);
    CHECK_THROWS_AS(with("H = 0.4\n"), std::invalid_argument);
    CHECK_THROWS_AS(with("t_max = oops\n"), std::invalid_argument);
}

TEST_CASE("overrides rewrite keys and extend the effective digest") {
    fs::path dir = scratch_dir("ovr");
    std::string cfg = write_file(dir, "a.cfg", kMinimalConfig);

    ExperimentConfig base = parse_config(cfg);
    ExperimentConfig bumped = parse_config(cfg, {"--t_max=16", "--seed=9"});
    CHECK(base.t_max == doctest::Approx(8.0));
    CHECK(bumped.t_max == doctest::Approx(16.0));
    CHECK(bumped.master_seed == 9);

    CHECK_THROWS_AS(parse_config(cfg, {"--no-equals"}), std::invalid_argument);
    fs::remove_all(dir);
}

TEST_CASE("constants file round-trips and detects tampering") {
    fs::path dir = scratch_dir("const");
    CalibrationConstants c;
    c.alpha_H = 1.2345678901234567;
    c.inversion_C = 0.5;
    c.C_K = 2.25;
    c.c2 = 1.5;
    c.source_config_digest = "deadbeefdeadbeef";
    std::string path = (dir / "constants.txt").string();
    write_constants(c, path);

    CalibrationConstants r = read_constants(path);
    CHECK(r.alpha_H == c.alpha_H);
    CHECK(r.inversion_C == c.inversion_C);
    CHECK(r.C_K == c.C_K);
    CHECK(r.c2 == c.c2);
    CHECK(r.source_config_digest == c.source_config_digest);

    // flip one digit of C_K: the self-digest no longer matches
    std::string text = slurp(path);
    std::size_t pos = text.find("C_K=2.25");
    REQUIRE(pos != std::string::npos);
    text[pos + 4] = '3';
    write_file(dir, "constants.txt", text);
    CHECK_THROWS_AS(read_constants(path), std::runtime_error);
    fs::remove_all(dir);
}

TEST_CASE("manifest carries a verifiable self-digest") {
    fs::path dir = scratch_dir("man");
    RunManifest m;
    m.config_digest = "0123456789abcdef";
    m.master_seed = 42;
    m.started = "2026-01-01T00:00:00Z";
    m.finished = "2026-01-01T00:00:01Z";
    m.outputs = {"out/a.csv", "out/b.csv"};
    std::string path = (dir / "manifest.txt").string();
    write_manifest(m, path);

    std::string text = slurp(path);
    CHECK(text.find("config_digest=0123456789abcdef\n") != std::string::npos);
    CHECK(text.find("version=" + std::string(kVersion) + "\n") !=
          std::string::npos);
    CHECK(text.find("master_seed=42\n") != std::string::npos);
    CHECK(text.find("output=out/a.csv\n") != std::string::npos);

    std::size_t dpos = text.rfind("digest=");
    REQUIRE(dpos != std::string::npos);
    std::string body = text.substr(0, dpos);
    std::string stored = text.substr(dpos + 7);
    if (!stored.empty() && stored.back() == '\n') stored.pop_back();
    CHECK(content_digest(body) == stored);
    fs::remove_all(dir);
}

TEST_CASE("cli_run exit codes: usage, unknown subcommand, config errors") {
    fs::path dir = scratch_dir("exit");
    std::string cfg = write_file(dir, "a.cfg", kMinimalConfig);

    CHECK(cli_run({}) == 1);
    CHECK(cli_run({"couple"}) == 1);
    CHECK(cli_run({"frobnicate", cfg}) == 1);
    CHECK(cli_run({"couple", (dir / "missing.cfg").string()}) == 1);
    CHECK(cli_run({"tail", cfg, "--output_dir=" + dir.string(),
                   "--n_replicas=0"}) == 1);
    CHECK(cli_run({"couple", cfg, "--alpha=0.6"}) == 1);
    fs::remove_all(dir);
}

TEST_CASE("cli couple is deterministic and writes log plus manifest") {
    fs::path d1 = scratch_dir("cpl1");
    fs::path d2 = scratch_dir("cpl2");
    std::string cfg = write_file(d1, "a.cfg", kMinimalConfig);

    CHECK(cli_run({"couple", cfg, "--output_dir=" + d1.string()}) == 0);
    CHECK(cli_run({"couple", cfg, "--output_dir=" + d2.string()}) == 0);

    std::string log1 = slurp((d1 / "trial_log.csv").string());
    std::string log2 = slurp((d2 / "trial_log.csv").string());
    CHECK(log1 == log2);
    CHECK(log1.rfind("k,attempted,step1_success,ell_star,", 0) == 0);

    // the manifest digest reflects the overrides, so the two runs differ
    std::string man1 = slurp((d1 / "manifest.txt").string());
    std::string man2 = slurp((d2 / "manifest.txt").string());
    auto digest_line = [](const std::string& text) {
        std::size_t p = text.find("config_digest=");
        return text.substr(p, text.find('\n', p) - p);
    };
    CHECK(digest_line(man1) != digest_line(man2));
    CHECK(man1.find("output=" + (d1 / "trial_log.csv").string()) !=
          std::string::npos);
    fs::remove_all(d1);
    fs::remove_all(d2);
}

TEST_CASE("cli validate exits 0 on a passing suite and writes the report") {
    fs::path dir = scratch_dir("val");
    std::string cfg = write_file(dir, "a.cfg", kMinimalConfig);
    CHECK(cli_run({"validate", cfg, "--output_dir=" + dir.string()}) == 0);

    std::string report = slurp((dir / "report.txt").string());
    CHECK(report.find("fgn_covariance,pass,") != std::string::npos);
    CHECK(report.find(",fail,") == std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("cli calibrate emits constants consumable by a scientific run") {
    fs::path dir = scratch_dir("cal");
    std::string cfg = write_file(dir, "a.cfg", kMinimalConfig);
    CHECK(cli_run({"calibrate", cfg, "--output_dir=" + dir.string(),
                   "--calibration_runs=4"}) == 0);

    std::string cpath = (dir / "constants.txt").string();
    CalibrationConstants cal = read_constants(cpath);
    CHECK(cal.C_K >= 1.0);
    CHECK(cal.c2 > 0.0);
    CHECK(cal.alpha_H > 0.0);
    CHECK(!cal.source_config_digest.empty());

    // a config referencing the constants file parses and applies them
    std::string cfg2 = write_file(
        dir, "b.cfg", std::string(kMinimalConfig) + "constants = " + cpath + "\n");
    ExperimentConfig ec = parse_config(cfg2);
    CHECK(ec.coupling.C_K == cal.C_K);
    CHECK(ec.coupling.c2 == cal.c2);
    fs::remove_all(dir);
}

TEST_CASE("FRACOUPLE_WORKERS overrides the configured worker count") {
    setenv("FRACOUPLE_WORKERS", "3", 1);
    ExperimentConfig ec = config_from_doc(parse_config_text(kMinimalConfig));
    CHECK(ec.n_workers == 3);
    unsetenv("FRACOUPLE_WORKERS");
    ExperimentConfig ec2 = config_from_doc(parse_config_text(kMinimalConfig));
    CHECK(ec2.n_workers == 1);
}
