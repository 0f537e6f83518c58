#include <catch_amalgamated.hpp>

#include <cmath>

#include "tdks/grid.hpp"

using namespace tdks;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("build_grid derives spacing and step") {
    const GridSpec a = build_grid(-80.0, 40.0, 1200, 1.0, 10);
    CHECK_THAT(a.dx, WithinRel(0.1, 1e-12));
    const GridSpec b = build_grid(-80.0, 40.0, 600, 1.0, 10);
    CHECK_THAT(b.dx, WithinRel(0.2, 1e-12));
    const GridSpec c = build_grid(0.0, 1.0, 4, 1.0, 1);
    CHECK(c.dx == 0.25);
    CHECK(c.dt == 1.0);

    CHECK_THAT(a.J * a.dx, WithinRel(a.l_max - a.l_min, 1e-12));
    CHECK_THAT(a.K * a.dt, WithinRel(a.T, 1e-12));
    CHECK(a.x(0) == -80.0);
    CHECK_THAT(a.x(a.J), WithinAbs(40.0, 1e-12));
}

TEST_CASE("build_grid rejects invalid extents") {
    CHECK_THROWS_WITH(build_grid(0.0, 1.0, 5, 1.0, 1), ContainsSubstring("Simpson"));
    CHECK_THROWS(build_grid(1.0, 1.0, 4, 1.0, 1));
    CHECK_THROWS(build_grid(0.0, 1.0, 2, 1.0, 1));
    CHECK_THROWS(build_grid(0.0, 1.0, 4, 0.0, 1));
    CHECK_THROWS(build_grid(0.0, 1.0, 4, 1.0, 0));
}

TEST_CASE("external potential is the soft-Coulomb well at x = -10") {
    const GridSpec g = build_grid(-80.0, 40.0, 1200, 1.0, 1);
    const RealVector v = external_potential(g);
    Eigen::Index jmin;
    v.minCoeff(&jmin);
    CHECK_THAT(g.x(static_cast<int>(jmin)), WithinAbs(-10.0, 1e-9));
    CHECK_THAT(v[jmin], WithinAbs(-1.0, 1e-12));
    CHECK_THAT(v[800], WithinRel(-1.0 / std::sqrt(101.0), 1e-12));
}

TEST_CASE("laplacian4 bands and boundary truncation") {
    const GridSpec g = build_grid(0.0, 1.0, 10, 1.0, 1);
    const Eigen::MatrixXd L = laplacian4(g).dense();
    const double s = 1.0 / (12.0 * g.dx * g.dx);
    CHECK(L(0, 0) == -30.0 * s);
    CHECK(L(0, 1) == 16.0 * s);
    CHECK(L(0, 2) == -1.0 * s);
    CHECK(L(0, 3) == 0.0);
    CHECK(L(5, 3) == -1.0 * s);
    CHECK(L(5, 7) == -1.0 * s);
    CHECK(L(5, 8) == 0.0);
    CHECK((L - L.transpose()).cwiseAbs().maxCoeff() == 0.0);

    CHECK_THROWS(BandedLaplacian(GridSpec{0.0, 1.0, 2, 0.5, 1.0, 1, 1.0}));
}

TEST_CASE("laplacian4 matches the dense matrix and is exact on quadratics") {
    const GridSpec g = build_grid(-5.0, 5.0, 100, 1.0, 1);
    const BandedLaplacian lap = laplacian4(g);
    RealVector f(g.points());
    for (int j = 0; j <= g.J; ++j) f[j] = g.x(j) * g.x(j);
    const RealVector a = lap.apply(f);
    const RealVector b = lap.dense() * f;
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-9);
    for (int j = 2; j <= g.J - 2; ++j) CHECK_THAT(a[j], WithinAbs(2.0, 1e-10));
}

TEST_CASE("laplacian4 interior error is fourth order") {
    auto interior_error = [](int J) {
        const GridSpec g = build_grid(0.0, 2.0 * M_PI, J, 1.0, 1);
        RealVector f(g.points());
        for (int j = 0; j <= J; ++j) f[j] = std::sin(g.x(j));
        const RealVector d = laplacian4(g).apply(f);
        double err = 0.0;
        for (int j = 2; j <= J - 2; ++j) err = std::max(err, std::abs(d[j] + f[j]));
        return err;
    };
    const double e1 = interior_error(32);
    const double e2 = interior_error(64);
    CHECK(std::log2(e1 / e2) >= 3.7);
    CHECK_THAT(e1 / e2, WithinRel(16.0, 0.05));
}

TEST_CASE("simpson weights and exactness") {
    const GridSpec unit = build_grid(0.0, 4.0, 4, 1.0, 1);
    const RealVector w = simpson_weights(unit);
    const double pattern[] = {1, 4, 2, 4, 1};
    for (int j = 0; j < 5; ++j) CHECK_THAT(w[j], WithinRel(pattern[j] / 3.0, 1e-15));

    const GridSpec g = build_grid(0.0, 2.0, 4, 1.0, 1);
    RealVector cube(5);
    for (int j = 0; j < 5; ++j) cube[j] = std::pow(g.x(j), 3);
    CHECK_THAT(integrate(g, cube), WithinAbs(4.0, 1e-14));

    const GridSpec big = build_grid(-80.0, 40.0, 1200, 1.0, 1);
    CHECK_THAT(simpson_weights(big).sum(), WithinRel(120.0, 1e-12));

    CHECK_THROWS(simpson_weights(GridSpec{0.0, 1.0, 5, 0.2, 1.0, 1, 1.0}));
}

TEST_CASE("simpson integrates random cubics exactly") {
    const GridSpec g = build_grid(-3.0, 1.5, 18, 1.0, 1);
    const double coeffs[][4] = {{1, -2, 0.5, 3}, {-0.7, 0.1, 2.0, -1.3}, {4, 0, 0, 1}};
    for (const auto& c : coeffs) {
        RealVector f(g.points());
        for (int j = 0; j <= g.J; ++j) {
            const double x = g.x(j);
            f[j] = c[0] + c[1] * x + c[2] * x * x + c[3] * x * x * x;
        }
        auto antideriv = [&](double x) {
            return c[0] * x + c[1] * x * x / 2 + c[2] * x * x * x / 3 + c[3] * x * x * x * x / 4;
        };
        const double exact = antideriv(g.l_max) - antideriv(g.l_min);
        CHECK_THAT(integrate(g, f), WithinRel(exact, 1e-12));
    }
}

TEST_CASE("interaction matrix") {
    const GridSpec g = build_grid(-80.0, 40.0, 600, 1.0, 1);
    const Eigen::MatrixXd W = interaction_matrix(g);
    for (int j = 0; j <= g.J; j += 37) CHECK(W(j, j) == g.dx);
    CHECK_THAT(W(0, g.J), WithinRel(g.dx / std::sqrt(120.0 * 120.0 + 1.0), 1e-12));
    CHECK((W - W.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(W.minCoeff() > 0.0);
    CHECK(W.maxCoeff() <= g.dx);
}

TEST_CASE("first derivative stencil is fourth order") {
    auto err = [](int J) {
        const GridSpec g = build_grid(0.0, 2.0 * M_PI, J, 1.0, 1);
        std::vector<double> f(g.points()), d(g.points());
        for (int j = 0; j <= J; ++j) f[j] = std::sin(g.x(j));
        first_derivative4<double>(f, d, g.dx);
        double e = 0.0;
        for (int j = 2; j <= J - 2; ++j) e = std::max(e, std::abs(d[j] - std::cos(g.x(j))));
        return e;
    };
    CHECK(std::log2(err(32) / err(64)) >= 3.7);
}

TEST_CASE("time unit conversion") {
    CHECK_THAT(fs_to_au(0.02418884254), WithinRel(1.0, 1e-15));
    CHECK_THAT(au_to_fs(fs_to_au(0.72)), WithinRel(0.72, 1e-15));
    CHECK_THAT(fs_to_au(2.4e-5), WithinRel(9.92193e-4, 1e-5));
}
