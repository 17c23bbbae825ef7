#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "fracouple/experiments.hpp"
#include "fracouple/rng.hpp"

using namespace fracouple;

namespace {

ExperimentConfig small_config() {
    ExperimentConfig cfg;
    cfg.model_id = "additive_baseline";
    cfg.model_dim = 1;
    ModelSpec m = make_model(cfg.model_id, cfg.model_dim);
    cfg.coupling = make_coupling_config(m, 0.7, 0.55, 1.0 / 32.0, 4.0);
    cfg.coupling.kappa1 = 1.5;
    cfg.coupling.kappa2 = 3.0;
    cfg.n_replicas = 8;
    cfg.t_max = 12.0;
    cfg.master_seed = 5;
    cfg.x1 = Vec{0.4};
    cfg.x2 = Vec{0.4};
    return cfg;
}

std::vector<TauSample> pareto_samples(std::size_t n, double t_max,
                                      unsigned seed) {
    // survival S(t) = t^{-1/8} for t >= 1: tau = U^{-8}
    RngStream rng(seed, 0);
    std::vector<TauSample> s;
    s.reserve(n);
    for (std::size_t r = 0; r < n; ++r) {
        double tau = std::pow(rng.u01(), -8.0);
        if (tau <= t_max)
            s.push_back({true, tau});
        else
            s.push_back({false, t_max});
    }
    return s;
}

} // namespace

TEST_CASE("survival estimator: monotone, unit start, CI contains the point") {
    auto s = pareto_samples(2000, 1e8, 3);
    TailEstimate est = estimate_tail_from_samples(s, 1e8);
    REQUIRE(!est.t.empty());
    CHECK(est.t.front() == 0.0);
    CHECK(est.survival.front() == 1.0);
    for (std::size_t i = 1; i < est.t.size(); ++i) {
        CHECK(est.t[i] > est.t[i - 1]);
        CHECK(est.survival[i] <= est.survival[i - 1]);
    }
    for (std::size_t i = 0; i < est.t.size(); ++i) {
        CHECK(est.ci_lo[i] <= est.survival[i]);
        CHECK(est.ci_hi[i] >= est.survival[i]);
    }
    CHECK(est.n_coupled + est.n_censored == 2000);
}

TEST_CASE("survival estimator: Pareto t^{-1/8} synthetic recovers the slope") {
    auto s = pareto_samples(10000, 1e12, 7);
    TailEstimate est = estimate_tail_from_samples(s, 1e12);
    REQUIRE(est.slope_reliable);
    CHECK(est.slope == doctest::Approx(-0.125).epsilon(0.16));
    CHECK(std::abs(est.slope + 0.125) < 0.02);
    RateFit fit = rate_fit(est);
    CHECK(fit.reliable);
    CHECK_FALSE(fit.undetermined);
    CHECK(fit.slope_abs == doctest::Approx(0.125).epsilon(0.16));
    CHECK(fit.consistent);
}

TEST_CASE("survival estimator: degenerate extremes") {
    // everyone couples by t1
    std::vector<TauSample> all;
    for (int i = 0; i < 50; ++i) all.push_back({true, 1.0 + 0.01 * i});
    TailEstimate a = estimate_tail_from_samples(all, 100.0);
    CHECK(a.survival.back() == 0.0);
    CHECK(a.n_censored == 0);

    // nobody couples
    std::vector<TauSample> none(50, {false, 100.0});
    TailEstimate b = estimate_tail_from_samples(none, 100.0);
    for (double s : b.survival) CHECK(s == 1.0);
    CHECK_FALSE(b.slope_reliable);
    RateFit fit = rate_fit(b);
    CHECK(fit.undetermined);
    CHECK_FALSE(fit.consistent);
}

TEST_CASE("rate_fit: exponential decay is consistent with the envelope") {
    RngStream rng(9, 0);
    std::vector<TauSample> s;
    for (int i = 0; i < 4000; ++i)
        s.push_back({true, 1.0 - std::log(rng.u01())});
    TailEstimate est = estimate_tail_from_samples(s, 1e6);
    REQUIRE(est.slope_reliable);
    RateFit fit = rate_fit(est);
    CHECK(fit.slope_abs > 0.125); // much faster than any small polynomial
    CHECK(fit.consistent);
}

TEST_CASE("censoring: truncating the horizon only removes late nodes") {
    auto s_long = pareto_samples(4000, 1e6, 11);
    std::vector<TauSample> s_short;
    for (auto& p : s_long) {
        if (p.first && p.second <= 1e3)
            s_short.push_back(p);
        else
            s_short.push_back({false, 1e3});
    }
    TailEstimate lo = estimate_tail_from_samples(s_short, 1e3);
    TailEstimate hi = estimate_tail_from_samples(s_long, 1e6);
    // identical survival values at shared nodes below the short horizon
    for (std::size_t i = 0; i < lo.t.size(); ++i) {
        if (lo.t[i] >= 1e3) break;
        auto it = std::lower_bound(hi.t.begin(), hi.t.end(), lo.t[i]);
        REQUIRE(it != hi.t.end());
        REQUIRE(*it == lo.t[i]);
        CHECK(hi.survival[static_cast<std::size_t>(it - hi.t.begin())] ==
              lo.survival[i]);
    }
}

TEST_CASE("estimate_tv_bound: step interpolation matches the survival curve") {
    auto s = pareto_samples(1000, 1e6, 13);
    TailEstimate est = estimate_tail_from_samples(s, 1e6);
    TvBoundCurve curve = estimate_tv_bound(est, est.t);
    REQUIRE(curve.t.size() == est.t.size());
    for (std::size_t i = 0; i < est.t.size(); ++i) {
        CHECK(curve.bound[i] == est.survival[i]);
        CHECK(curve.bound_hi[i] >= curve.bound[i]);
        if (i > 0) CHECK(curve.bound[i] <= curve.bound[i - 1]);
    }
}

TEST_CASE("run_replicas: deterministic across reruns and worker counts") {
    ExperimentConfig cfg = small_config();
    auto a = run_replicas(cfg);
    auto b = run_replicas(cfg);
    ExperimentConfig cfg2 = cfg;
    cfg2.n_workers = 3;
    auto c = run_replicas(cfg2);
    REQUIRE(a.size() == cfg.n_replicas);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first == b[i].first);
        CHECK(a[i].second == b[i].second);
        CHECK(a[i].first == c[i].first);
        CHECK(a[i].second == c[i].second);
    }
    // degenerate start: every replica couples
    for (const auto& p : a) CHECK(p.first);
}

TEST_CASE("estimate_coupling_tail: end-to-end on a tiny experiment") {
    ExperimentConfig cfg = small_config();
    cfg.x1 = Vec{0.3};
    cfg.x2 = Vec{-0.2};
    cfg.n_replicas = 12;
    cfg.t_max = 300.0;
    cfg.master_seed = 2;
    TailEstimate est = estimate_coupling_tail(cfg);
    CHECK(est.n_replicas == 12);
    CHECK(est.n_coupled > 0);
    for (std::size_t i = 1; i < est.survival.size(); ++i)
        CHECK(est.survival[i] <= est.survival[i - 1]);
}

TEST_CASE("experiment config validation") {
    ExperimentConfig cfg = small_config();
    cfg.n_replicas = 0;
    CHECK_THROWS_AS(validate_experiment_config(cfg), std::invalid_argument);
    cfg = small_config();
    cfg.t_max = -1.0;
    CHECK_THROWS_AS(validate_experiment_config(cfg), std::invalid_argument);
    cfg = small_config();
    cfg.x1 = Vec{1.0, 2.0};
    CHECK_THROWS_AS(validate_experiment_config(cfg), std::invalid_argument);
}

TEST_CASE("survival CSV shape") {
    auto s = pareto_samples(100, 1e4, 17);
    TailEstimate est = estimate_tail_from_samples(s, 1e4);
    const std::string path = "survival_test.csv";
    write_survival_csv(est, path);
    std::ifstream is(path);
    std::string header;
    std::getline(is, header);
    CHECK(header == "t,survival,ci_lo,ci_hi,n_at_risk");
    std::size_t rows = 0;
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) ++rows;
    CHECK(rows == est.t.size());
    std::remove(path.c_str());
}

TEST_CASE("validate_suite: baseline config passes every item") {
    ExperimentConfig cfg = small_config();
    auto items = validate_suite(cfg);
    REQUIRE(items.size() == 11);
    for (const auto& it : items) {
        INFO(it.item, " value=", it.value, " threshold=", it.threshold);
        CHECK(it.pass);
    }
    const std::string path = "report_test.txt";
    write_validation_report(items, path);
    std::ifstream is(path);
    std::string line;
    std::size_t rows = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        CHECK(line.find(",pass,") != std::string::npos);
        ++rows;
    }
    CHECK(rows == items.size());
    std::remove(path.c_str());
}
