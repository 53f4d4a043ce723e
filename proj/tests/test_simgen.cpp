#include "fqif/simgen.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <numbers>

using namespace fqif;

TEST_CASE("Brownian-motion eigenpairs") {
    const double pi = std::numbers::pi;
    REQUIRE_THAT(bm_eigen(1).lambda, Catch::Matchers::WithinRel(4.0 / (pi * pi), 1e-14));
    REQUIRE_THAT(bm_eigen(2).lambda, Catch::Matchers::WithinRel(4.0 / (9.0 * pi * pi), 1e-14));
    REQUIRE_THAT(bm_eigen(1).phi(1.0), Catch::Matchers::WithinRel(std::numbers::sqrt2, 1e-12));
    REQUIRE(bm_eigen(1).phi(0.0) == 0.0);
    REQUIRE_THROWS(bm_eigen(0));
}

TEST_CASE("linear-process eigenpairs") {
    REQUIRE(linear_process_eigen(1, 1).lambda == 1.0);
    REQUIRE_THAT(linear_process_eigen(2, 1).lambda, Catch::Matchers::WithinRel(0.25, 1e-14));
    REQUIRE_THAT(linear_process_eigen(2, 2).lambda, Catch::Matchers::WithinRel(1.0 / 16.0, 1e-14));
    REQUIRE_THAT(linear_process_eigen(1, 1).phi(0.0), Catch::Matchers::WithinRel(std::numbers::sqrt2, 1e-12));
    REQUIRE_THAT(linear_process_eigen(1, 1).phi(1.0), Catch::Matchers::WithinRel(-std::numbers::sqrt2, 1e-12));
}

TEST_CASE("Ornstein-Uhlenbeck transcendental roots and eigenvalues") {
    const auto r1 = ou_roots(1.0, 3);
    REQUIRE_THAT(r1[0], Catch::Matchers::WithinAbs(1.3065423, 1e-6));
    const auto r3 = ou_roots(3.0, 1);
    REQUIRE_THAT(r3[0], Catch::Matchers::WithinAbs(1.9764814, 1e-6));

    REQUIRE_THAT(ou_eigen(1, 1.0).lambda, Catch::Matchers::WithinAbs(0.7388112, 1e-6));
    REQUIRE_THAT(ou_eigen(1, 3.0).lambda, Catch::Matchers::WithinAbs(0.4648831, 1e-6));

    // roots interlace with the poles at multiples of pi
    const double pi = std::numbers::pi;
    for (int j = 0; j < 3; ++j) {
        REQUIRE(r1[j] > j * pi);
        REQUIRE(r1[j] < (j + 1) * pi);
    }
    REQUIRE_THROWS(ou_roots(0.0, 1));
}

TEST_CASE("OU eigenfunctions satisfy the integral eigen-equation") {
    const double mu0 = 1.0;
    const auto pair = ou_eigen(1, mu0);
    const int steps = 2001;
    auto kernel = [mu0](double s, double t) { return std::exp(-mu0 * std::abs(s - t)); };
    double max_resid = 0.0;
    for (double s : {0.1, 0.5, 0.9}) {
        double integral = 0.0;
        for (int j = 0; j < steps; ++j) {
            const double t = (j + 0.5) / steps;
            integral += kernel(s, t) * pair.phi(t) / steps;
        }
        max_resid = std::max(max_resid, std::abs(integral - pair.lambda * pair.phi(s)));
    }
    REQUIRE(max_resid < 1e-4);
}

TEST_CASE("stationary kernels evaluate as specified") {
    Scenario pe;
    pe.kind = ScenarioKind::PowerExponential;
    pe.b0 = 2.0;
    const auto grid = TimeGrid(std::vector<double>{0.0, 0.5, 1.0});
    const auto cov_pe = cov_matrix(pe, grid);
    REQUIRE(cov_pe(0, 0) == 1.0);
    REQUIRE_THAT(cov_pe(0, 1), Catch::Matchers::WithinRel(std::exp(-0.25), 1e-14));
    REQUIRE_THAT(cov_pe(0, 2), Catch::Matchers::WithinRel(std::exp(-1.0), 1e-14));
    REQUIRE((cov_pe - cov_pe.transpose()).cwiseAbs().maxCoeff() == 0.0);

    Scenario rq;
    rq.kind = ScenarioKind::RationalQuadratic;
    rq.b0 = 2.0;
    const auto cov_rq = cov_matrix(rq, grid);
    REQUIRE(cov_rq(0, 0) == 1.0);
    REQUIRE_THAT(cov_rq(0, 1), Catch::Matchers::WithinRel(std::pow(1.25, -2.0), 1e-14));
    REQUIRE_THAT(cov_rq(0, 2), Catch::Matchers::WithinRel(std::pow(2.0, -2.0), 1e-14));
}

TEST_CASE("KL-truncated covariance matches the eigen expansion") {
    Scenario lp;
    lp.kind = ScenarioKind::LinearProcess;
    lp.l0 = 1;
    const auto grid = TimeGrid::uniform(5);
    const auto cov = cov_matrix(lp, grid);
    double expect = 0.0;
    for (int k = 1; k <= 3; ++k) {
        const auto pair = linear_process_eigen(k, 1);
        expect += pair.lambda * pair.phi(grid.points[1]) * pair.phi(grid.points[3]);
    }
    REQUIRE_THAT(cov(1, 3), Catch::Matchers::WithinAbs(expect, 1e-13));
}

TEST_CASE("covariate coefficient scales") {
    REQUIRE(CovariateModel::sigma1(1) == 1.0);
    REQUIRE_THAT(CovariateModel::sigma1(2), Catch::Matchers::WithinRel(std::pow(2.0, -0.5), 1e-14));
    REQUIRE_THAT(CovariateModel::sigma2(1), Catch::Matchers::WithinRel(0.85, 1e-14));
    REQUIRE_THAT(CovariateModel::sigma3(1), Catch::Matchers::WithinRel(0.7, 1e-14));
}

TEST_CASE("scenario validation and label parsing") {
    REQUIRE(parse_scenario("bm").kind == ScenarioKind::BrownianMotion);
    REQUIRE(parse_scenario("lp2").l0 == 2);
    REQUIRE(parse_scenario("ou3").mu0 == 3.0);
    REQUIRE(parse_scenario("pe5").b0 == 5.0);
    REQUIRE(parse_scenario("rq1").kind == ScenarioKind::RationalQuadratic);
    REQUIRE_THROWS(parse_scenario("lp4"));
    REQUIRE_THROWS(parse_scenario("ou2"));
    REQUIRE_THROWS(parse_scenario("pe3"));
    REQUIRE_THROWS(parse_scenario("xyz"));

    Scenario s;
    s.kind = ScenarioKind::OrnsteinUhlenbeck;
    s.mu0 = 2.0;
    REQUIRE_THROWS(s.validate());
    REQUIRE_NOTHROW(s.validate(/*unsafe_params=*/true));
}

TEST_CASE("dataset generation is deterministic and stream-stable") {
    VectorXd beta(2);
    beta << 1.0, 0.5;
    const Scenario bm;

    const auto a = gen_dataset(bm, 6, 8, beta, 77, 1).first;
    const auto b = gen_dataset(bm, 6, 8, beta, 77, 1).first;
    for (int i = 0; i < 6; ++i) {
        REQUIRE(a.samples[i].y == b.samples[i].y);
        REQUIRE(a.samples[i].x == b.samples[i].x);
    }

    // a different replication index gives different draws
    const auto c = gen_dataset(bm, 6, 8, beta, 77, 2).first;
    REQUIRE(a.samples[0].y != c.samples[0].y);

    // per-subject streams: subject i is unchanged when n grows
    const auto big = gen_dataset(bm, 12, 8, beta, 77, 1).first;
    for (int i = 0; i < 6; ++i) {
        REQUIRE(big.samples[i].y == a.samples[i].y);
        REQUIRE(big.samples[i].x == a.samples[i].x);
    }
}

TEST_CASE("generated responses decompose as X beta plus the error process") {
    VectorXd b1(2), b2(2);
    b1 << 1.0, 0.5;
    b2 << -2.0, 3.0;
    const Scenario bm;
    const auto d1 = gen_dataset(bm, 4, 10, b1, 55, 3).first;
    const auto d2 = gen_dataset(bm, 4, 10, b2, 55, 3).first;
    for (int i = 0; i < 4; ++i) {
        const VectorXd e1 = d1.samples[i].y - d1.samples[i].x * b1;
        const VectorXd e2 = d2.samples[i].y - d2.samples[i].x * b2;
        REQUIRE((e1 - e2).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("generated design is equidistant on the unit interval") {
    VectorXd beta(1);
    beta << 1.0;
    const auto d = gen_dataset(Scenario{}, 2, 5, beta, 1).first;
    for (int j = 0; j < 5; ++j)
        REQUIRE_THAT(d.samples[0].times[j], Catch::Matchers::WithinAbs(j / 4.0, 1e-15));
    REQUIRE_THROWS(gen_dataset(Scenario{}, 0, 5, beta, 1));
    REQUIRE_THROWS(gen_dataset(Scenario{}, 2, 1, beta, 1));
}

TEST_CASE("MVN scenarios produce errors with roughly the right marginal variance") {
    Scenario pe;
    pe.kind = ScenarioKind::PowerExponential;
    pe.b0 = 1.0;
    VectorXd beta(1);
    beta << 0.0;
    const auto d = gen_dataset(pe, 400, 6, beta, 7).first;
    double var = 0.0;
    for (const auto& s : d.samples) var += s.y[2] * s.y[2];
    var /= d.num_subjects();
    REQUIRE(var > 0.75);  // marginal variance is 1
    REQUIRE(var < 1.3);
}
