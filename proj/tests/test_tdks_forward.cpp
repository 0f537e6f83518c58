#include <catch_amalgamated.hpp>

#include <cmath>

#include "tdks/gradcheck.hpp"
#include "tdks/tdks_forward.hpp"

using namespace tdks;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

GridSpec grid_with_dt(double dt, int K = 1) { return build_grid(-20.0, 20.0, 80, dt * K, K); }

ComplexVector smooth_state(const GridSpec& g, double center = -5.0, double p = 0.7) {
    ComplexVector phi(g.points());
    for (int j = 0; j <= g.J; ++j) {
        const double x = g.x(j) - center;
        phi[j] = std::exp(-x * x / 4.0) * std::polar(1.0, p * g.x(j));
    }
    return phi / ks_norm(phi, g);
}

double euclid(const ComplexVector& v) { return v.norm(); }

}  // namespace

TEST_CASE("kinetic propagator is unitary and symmetric") {
    const PropagatorCache cache(grid_with_dt(0.05));
    const Eigen::MatrixXcd& P = cache.half_kinetic();
    const Eigen::Index n = P.rows();
    CHECK((P.adjoint() * P - Eigen::MatrixXcd::Identity(n, n)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((P - P.transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("two half-step propagators make one full step") {
    const GridSpec g = grid_with_dt(0.05);
    const PropagatorCache cache(g);
    const Eigen::MatrixXd& S = cache.kinetic_eigenvectors();
    const RealVector& d = cache.kinetic_eigenvalues();
    Eigen::VectorXcd ph(d.size());
    for (Eigen::Index i = 0; i < d.size(); ++i) ph[i] = std::polar(1.0, -d[i] * g.dt);
    const Eigen::MatrixXcd full = S.cast<std::complex<double>>() * ph.asDiagonal() *
                                  S.transpose().cast<std::complex<double>>();
    const Eigen::MatrixXcd& P = cache.half_kinetic();
    CHECK((P * P - full).cwiseAbs().maxCoeff() < 1e-11);
}

TEST_CASE("half-step propagator matches an independently built exponential") {
    const GridSpec g = build_grid(-4.0, 4.0, 16, 0.3, 1);
    const int n = g.points();
    const double s = 1.0 / (12.0 * g.dx * g.dx);
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        K(i, i) = 15.0 * s;
        if (i + 1 < n) K(i, i + 1) = K(i + 1, i) = -8.0 * s;
        if (i + 2 < n) K(i, i + 2) = K(i + 2, i) = 0.5 * s;
    }
    // Scaling and squaring on a Taylor polynomial, independent of any eigensolver.
    const Eigen::MatrixXcd A = std::complex<double>(0.0, -0.5 * g.dt) * K.cast<std::complex<double>>();
    const int squarings = 12;
    const Eigen::MatrixXcd B = A / std::pow(2.0, squarings);
    Eigen::MatrixXcd E = Eigen::MatrixXcd::Identity(n, n), term = E;
    for (int m = 1; m <= 20; ++m) {
        term = (term * B / static_cast<double>(m)).eval();
        E += term;
    }
    for (int i = 0; i < squarings; ++i) E = (E * E).eval();
    CHECK((PropagatorCache(g).half_kinetic() - E).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("small time step gives a propagator close to the identity") {
    const GridSpec g = grid_with_dt(1e-6);
    const PropagatorCache cache(g);
    const Eigen::Index n = g.points();
    const double bound = cache.kinetic_eigenvalues().cwiseAbs().maxCoeff() * g.dt / 2.0;
    CHECK((cache.half_kinetic() - Eigen::MatrixXcd::Identity(n, n)).operatorNorm() <= bound * (1 + 1e-9));
}

TEST_CASE("potential vector") {
    const GridSpec g = grid_with_dt(0.05);
    const PropagatorCache cache(g);
    const RealVector zero = RealVector::Zero(g.points());
    CHECK(potential_vector(ComplexVector::Zero(g.points()), zero, cache) == external_potential(g));

    const ComplexVector phi = smooth_state(g);
    const RealVector vc = RealVector::LinSpaced(g.points(), -0.3, 0.2);
    const RealVector base = potential_vector(phi, vc, cache);
    const RealVector shifted = potential_vector(phi, (vc.array() + 0.75).matrix(), cache);
    CHECK(((shifted - base).array() - 0.75).abs().maxCoeff() < 1e-14);
}

TEST_CASE("Hartree term of the initial state peaks near the atom") {
    const GridSpec g = build_grid(-30.0, 30.0, 120, 0.1, 1);
    const PropagatorCache cache(g);
    // Atom at -10, packet at +10.
    ComplexVector phi(g.points());
    for (int j = 0; j <= g.J; ++j) {
        const double a = g.x(j) + 10.0, b = g.x(j) - 10.0;
        phi[j] = std::exp(-std::abs(a)) + std::exp(-b * b / 4.0) * std::polar(1.0, -1.5 * g.x(j));
    }
    phi /= ks_norm(phi, g);
    const RealVector zero = RealVector::Zero(g.points());
    const RealVector hartree = potential_vector(phi, zero, cache) - cache.external();
    CHECK(hartree.minCoeff() > 0.0);
    const int atom = 40;
    REQUIRE(g.x(atom) == -10.0);
    for (int j = atom; j > 0; --j) CHECK(hartree[j - 1] < hartree[j]);
}

TEST_CASE("step with no kinetic term and zero potential is the identity") {
    const GridSpec g = grid_with_dt(0.05);
    const PropagatorCache cache = PropagatorCache::without_kinetic(g);
    const ComplexVector phi = smooth_state(g);
    const RealVector cancel = -potential_vector(phi, RealVector::Zero(g.points()), cache);
    const ComplexVector out = step(phi, cancel, cache);
    CHECK((out - phi).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("step preserves the norm") {
    const GridSpec g = grid_with_dt(0.05);
    const PropagatorCache cache(g);
    ComplexVector phi = smooth_state(g);
    const RealVector vc = RealVector::LinSpaced(g.points(), -1.0, 1.0);
    for (int k = 0; k < 50; ++k) {
        const ComplexVector next = step(phi, vc, cache);
        CHECK(std::abs(euclid(next) - euclid(phi)) < 1e-12);
        phi = next;
    }
}

TEST_CASE("constant shift of the correlation potential is a global phase") {
    const GridSpec g = grid_with_dt(0.05);
    const PropagatorCache cache(g);
    const ComplexVector phi = smooth_state(g);
    const RealVector vc = RealVector::LinSpaced(g.points(), -0.2, 0.4);
    const double c = 0.37;
    const ComplexVector a = step(phi, vc, cache);
    const ComplexVector b = step(phi, (vc.array() + c).matrix(), cache);
    const std::complex<double> phase = std::polar(1.0, -c * g.dt);
    CHECK((b - phase * a).cwiseAbs().maxCoeff() < 1e-13);
    CHECK((b.cwiseAbs2() - a.cwiseAbs2()).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("split-step order under a fixed potential") {
    const GridSpec base = grid_with_dt(1.0);
    const ComplexVector phi = smooth_state(base);
    const PropagatorCache ref_cache(base);
    const RealVector v = potential_vector(phi, RealVector::Zero(base.points()), ref_cache);

    double prev = 0.0;
    for (double dt : {0.2, 0.1, 0.05}) {
        const PropagatorCache c1(grid_with_dt(dt)), c2(grid_with_dt(dt / 2));
        const ComplexVector one = split_step(phi, v, c1);
        const ComplexVector two = split_step(split_step(phi, v, c2), v, c2);
        const double err = (one - two).cwiseAbs().maxCoeff();
        if (prev > 0.0) CHECK(std::log2(prev / err) >= 2.7);
        prev = err;
    }
}

TEST_CASE("self-consistent step: potential taken at the start of the step") {
    // The Hartree term is evaluated at phi_k, so one step against two half steps
    // differs at second order in dt.
    const GridSpec base = grid_with_dt(1.0);
    const ComplexVector phi = smooth_state(base);
    const RealVector zero = RealVector::Zero(base.points());
    double prev = 0.0;
    for (double dt : {0.1, 0.05, 0.025}) {
        const PropagatorCache c1(grid_with_dt(dt)), c2(grid_with_dt(dt / 2));
        const double err =
            (step(phi, zero, c1) - step(step(phi, zero, c2), zero, c2)).cwiseAbs().maxCoeff();
        if (prev > 0.0) CHECK_THAT(std::log2(prev / err), WithinAbs(2.0, 0.1));
        prev = err;
    }
}

TEST_CASE("step agrees with split_step at the self-consistent potential") {
    const GridSpec g = grid_with_dt(0.05);
    const PropagatorCache cache(g);
    const ComplexVector phi = smooth_state(g);
    const RealVector vc = RealVector::LinSpaced(g.points(), -0.2, 0.4);
    const ComplexVector a = step(phi, vc, cache);
    const ComplexVector b = split_step(phi, potential_vector(phi, vc, cache), cache);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("pointwise propagation is deterministic and norm preserving") {
    const GridSpec g = grid_with_dt(0.05, 200);
    const PropagatorCache cache(g);
    const ComplexVector phi0 = smooth_state(g);
    const CorrelationGrid vc = CorrelationGrid::Zero(201, g.points());
    const TdksTrajectory a = propagate_pointwise(phi0, vc, cache);
    const TdksTrajectory b = propagate_pointwise(phi0, vc, cache);
    CHECK(a.states == b.states);
    CHECK(a.provenance == b.provenance);
    const double n0 = euclid(phi0);
    for (int k = 0; k < a.frames(); ++k) CHECK(std::abs(euclid(a.state(k)) - n0) < 1e-9);
}

TEST_CASE("non-finite potential aborts with the step index") {
    const GridSpec g = grid_with_dt(0.05, 3);
    const PropagatorCache cache(g);
    CorrelationGrid vc = CorrelationGrid::Zero(4, g.points());
    vc(2, 7) = std::numeric_limits<double>::quiet_NaN();
    try {
        propagate_pointwise(smooth_state(g), vc, cache);
        FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& e) {
        CHECK(e.step() == 2);
        CHECK(e.index() == 7);
    }
}

TEST_CASE("zero-output network matches propagation without correlation") {
    const GridSpec g = grid_with_dt(0.05, 20);
    const PropagatorCache cache(g);
    const ComplexVector phi0 = smooth_state(g);
    const ComplexVector phi1 = step(phi0, RealVector::Zero(g.points()), cache);
    MlpShape shape{ModelKind::PhiMemory, g.points(), 8, 3, true};
    MlpParameters theta = init_params(3, 0.1, shape);
    const int last = theta.layer_count() - 1;
    theta.weight(last).setZero();
    theta.bias(last).setZero();

    const TdksTrajectory f = propagate_functional(phi0, phi1, theta, 20, cache);
    const TdksTrajectory p = propagate_pointwise(phi1, CorrelationGrid::Zero(20, g.points()), cache);
    for (int k = 1; k <= 20; ++k) CHECK(f.state(k) == p.state(k - 1));
    CHECK(f.states.rows() == 21);
    for (int k = 0; k <= 20; ++k) CHECK(std::abs(euclid(f.state(k)) - euclid(phi0)) < 1e-9);

    const TdksTrajectory again = propagate_functional(phi0, phi1, theta, 20, cache);
    CHECK(again.states == f.states);
}

TEST_CASE("density loss and MSE") {
    const GridSpec g = grid_with_dt(0.05, 4);
    const PropagatorCache cache(g);
    const TdksTrajectory traj =
        propagate_pointwise(smooth_state(g), CorrelationGrid::Zero(5, g.points()), cache);
    RowMatrix ref = densities(traj);
    CHECK(density_loss(traj, ref) == 0.0);
    ref(3, 11) += 0.25;
    CHECK_THAT(density_loss(traj, ref), WithinRel(0.25 * 0.25 / 2.0, 1e-12));
    CHECK_THAT(density_mse(traj, ref), WithinRel(0.25 * 0.25 / (5.0 * g.points()), 1e-12));
    CHECK_THROWS(density_loss(traj, ref.topRows(4)));
}

TEST_CASE("smoothness penalty values") {
    const GridSpec g = build_grid(-2.0, 2.0, 8, 1.0, 3);
    CorrelationGrid flat = CorrelationGrid::Constant(4, 9, 0.3);
    CHECK(smoothness_penalty(flat, 1.0, g).value == 0.0);
    CorrelationGrid ramp(4, 9);
    for (int k = 0; k < 4; ++k) {
        for (int j = 0; j < 9; ++j) ramp(k, j) = g.x(j);
    }
    const double mu = 1e-5;
    CHECK_THAT(smoothness_penalty(ramp, mu, g).value, WithinRel(mu * 4 * 8, 1e-12));
}

TEST_CASE("smoothness penalty gradient matches central differences") {
    const GridSpec g = build_grid(-2.0, 2.0, 8, 1.0, 3);
    CorrelationGrid vc(4, 9);
    for (int i = 0; i < vc.size(); ++i) vc.data()[i] = counter_normal(5, 1, i);
    const double mu = 0.7;
    const Penalty p = smoothness_penalty(vc, mu, g);
    double worst = 0.0;
    for (int i = 0; i < vc.size(); ++i) {
        const double h = 1e-5;
        CorrelationGrid a = vc, b = vc;
        a.data()[i] += h;
        b.data()[i] -= h;
        const double fd = (smoothness_penalty(a, mu, g).value - smoothness_penalty(b, mu, g).value) / (2 * h);
        worst = std::max(worst, std::abs(fd - p.gradient.data()[i]) /
                                    std::max(std::abs(fd), 1e-3 * p.gradient.cwiseAbs().maxCoeff()));
    }
    CHECK(worst < 1e-8);
}
