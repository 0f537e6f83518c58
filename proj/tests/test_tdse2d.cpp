#include <catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "tdks/tdse2d.hpp"

using namespace tdks;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;
using cplx = std::complex<double>;

namespace {

GridSpec small_fine(double dt = 0.01, int steps = 1) {
    return build_grid(-20.0, 20.0, 80, dt * steps, steps);
}

// Dense 1D Hamiltonian assembled from the stencil coefficients.
Eigen::MatrixXd dense_hamiltonian(const GridSpec& g) {
    const int n = g.points();
    const double s = 1.0 / (12.0 * g.dx * g.dx);
    const double band[] = {-30.0 * s, 16.0 * s, -1.0 * s};
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        for (int d = -2; d <= 2; ++d) {
            if (i + d >= 0 && i + d < n) h(i, i + d) = -0.5 * band[std::abs(d)];
        }
        const double x = g.x(i) + 10.0;
        h(i, i) += -1.0 / std::sqrt(x * x + 1.0);
    }
    return h;
}

}  // namespace

TEST_CASE("hydrogen ground state") {
    const GridSpec g = build_grid(-30.0, 30.0, 300, 1.0, 1);
    const HydrogenGroundState gs = hydrogen_ground_state(g);

    CHECK(gs.phi.minCoeff() >= 0.0);
    Eigen::Index peak;
    gs.phi.maxCoeff(&peak);
    CHECK_THAT(g.x(static_cast<int>(peak)), WithinAbs(-10.0, 1e-9));

    const Eigen::MatrixXd h = dense_hamiltonian(g);
    const RealVector unit = gs.phi / gs.phi.norm();
    CHECK((h * unit - gs.energy * unit).norm() < 1e-10);
    CHECK(gs.residual < 1e-10);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
    CHECK_THAT(gs.energy, WithinRel(es.eigenvalues()[0], 1e-10));

    CHECK_THAT(integrate(g, gs.phi.cwiseAbs2()), WithinAbs(1.0, 1e-8));
}

TEST_CASE("initial wavefunction symmetry, norm and density") {
    const GridSpec g = small_fine();
    const TwoBodyWavefunction psi = initial_wavefunction(g, PacketSpec{10.0, -1.5, 1.0});
    CHECK(exchange_asymmetry(psi) == 0.0);
    CHECK_THAT(norm2(psi), WithinAbs(1.0, 1e-10));
    const RealVector n = one_electron_density(psi);
    CHECK(n.minCoeff() >= 0.0);
    CHECK_THAT(integrate(g, n), WithinAbs(2.0, 1e-8));
}

TEST_CASE("separable product density") {
    const GridSpec g = small_fine();
    const RealVector phi = hydrogen_ground_state(g).phi;
    const int m = g.points();
    TwoBodyWavefunction psi{g, ComplexVector(m * m)};
    for (int a = 0; a < m; ++a) {
        for (int b = 0; b < m; ++b) psi(a, b) = phi[a] * phi[b];
    }
    const RealVector n = one_electron_density(psi);
    CHECK((n - 2.0 * phi.cwiseAbs2()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("real stationary state carries no current") {
    const GridSpec g = small_fine();
    const RealVector phi = hydrogen_ground_state(g).phi;
    const int m = g.points();
    TwoBodyWavefunction psi{g, ComplexVector(m * m)};
    for (int a = 0; a < m; ++a) {
        for (int b = 0; b < m; ++b) psi(a, b) = phi[a] * phi[b];
    }
    CHECK(current_density(psi).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("integrated current equals the spectral momentum expectation") {
    const GridSpec g = build_grid(-20.0, 20.0, 400, 1.0, 1);
    const double p = -1.5;
    const TwoBodyWavefunction psi = initial_wavefunction(g, PacketSpec{10.0, p, 1.0});
    const int m = g.points();

    // <p_1> through FFT derivatives along x1.
    Eigen::FFT<double> fft;
    std::vector<cplx> col(m), spec(m), deriv(m);
    double num = 0.0, den = 0.0;
    const double L = m * g.dx;
    for (int b = 0; b < m; ++b) {
        for (int a = 0; a < m; ++a) col[a] = psi(a, b);
        fft.fwd(spec, col);
        for (int k = 0; k < m; ++k) {
            const int kk = k <= m / 2 ? k : k - m;
            spec[k] *= cplx(0.0, 2.0 * M_PI * kk / L);
        }
        fft.inv(deriv, spec);
        for (int a = 0; a < m; ++a) {
            num += std::real(std::conj(col[a]) * cplx(0.0, -1.0) * deriv[a]);
            den += std::norm(col[a]);
        }
    }
    const double p1 = num / den;
    const double total = integrate(g, current_density(psi));
    CHECK_THAT(total, WithinRel(2.0 * p1, 1e-4));
    CHECK_THAT(total, WithinRel(p, 1e-4));
}

TEST_CASE("zero steps leave the state unchanged") {
    const GridSpec g = small_fine();
    TwoBodyWavefunction psi = initial_wavefunction(g, PacketSpec{});
    const ComplexVector before = psi.values;
    int calls = 0;
    propagate_tdse(psi, 0, 1, [&](int, const TwoBodyWavefunction&) { ++calls; });
    CHECK(psi.values == before);
    CHECK(calls == 1);
}

TEST_CASE("propagation keeps norm, symmetry and energy") {
    const GridSpec g = small_fine(0.01, 1000);
    TwoBodyWavefunction psi = initial_wavefunction(g, PacketSpec{10.0, -1.5, 1.0});
    const Tdse2dPropagator prop(g);
    const double e0 = prop.energy(psi);
    std::vector<double> row_errors, sums;
    const TdseRunSummary s = propagate_tdse(psi, 1000, 100, [&](int, const TwoBodyWavefunction& st) {
        const RealVector n = one_electron_density(st);
        row_errors.push_back(std::abs(integrate(g, n) - 2.0));
        sums.push_back(discrete_norm2(st));
    });
    CHECK(s.max_relative_norm_drift < 1e-6);
    CHECK(exchange_asymmetry(psi) < 1e-10);
    // Strang splitting conserves a modified energy; the drift is O(dt^2).
    CHECK(std::abs(prop.energy(psi) - e0) / std::abs(e0) < 1e-3);
    CHECK(row_errors.size() == 11);
    // The propagator conserves dx^2 sum |psi|^2; the Simpson row integral moves at quadrature level.
    for (double e : row_errors) CHECK(e < 1e-3);
    for (double v : sums) CHECK(std::abs(v - sums[0]) / sums[0] < 1e-6);
}

TEST_CASE("norm drift beyond tolerance aborts") {
    // A step far outside the series' stability region.
    const GridSpec g = small_fine(2.0, 10);
    TwoBodyWavefunction psi = initial_wavefunction(g, PacketSpec{});
    CHECK_THROWS_AS(propagate_tdse(psi, 10, 1, {}), std::runtime_error);
}

TEST_CASE("discrete continuity between adjacent saved frames") {
    const double dt = 0.005;
    const GridSpec g = build_grid(-20.0, 20.0, 160, dt * 4, 4);
    TwoBodyWavefunction psi = initial_wavefunction(g, PacketSpec{10.0, -1.5, 1.0});
    std::vector<RealVector> n, j;
    propagate_tdse(psi, 4, 4, [&](int, const TwoBodyWavefunction& st) {
        n.push_back(one_electron_density(st));
        j.push_back(current_density(st));
    });
    REQUIRE(n.size() == 2);
    const double h = 4 * dt;
    const int m = g.points();
    const RealVector jm = 0.5 * (j[0] + j[1]);
    std::vector<double> jin(jm.data(), jm.data() + m), djx(m);
    first_derivative4<double>(jin, djx, g.dx);
    double max_dn = 0.0, max_res = 0.0;
    for (int a = 2; a < m - 2; ++a) {
        const double dn = (n[1][a] - n[0][a]) / h;
        max_dn = std::max(max_dn, std::abs(dn));
        max_res = std::max(max_res, std::abs(dn + djx[a]));
    }
    CHECK(max_res < 5e-3 * max_dn);
}

TEST_CASE("exact KS state reproduces the density bit for bit") {
    const GridSpec g = build_grid(-10.0, 10.0, 40, 1.0, 1);
    RealVector n(g.points()), j(g.points());
    for (int a = 0; a <= g.J; ++a) {
        const double x = g.x(a);
        n[a] = 2.0 * std::exp(-x * x / 3.0) / std::sqrt(3.0 * M_PI) + 1e-3 * std::sin(3.0 * x) * std::sin(3.0 * x);
        j[a] = 0.3 * x * std::exp(-x * x / 3.0);
    }
    const KsInversion inv = exact_ks_state(n, j, g);
    for (int a = 0; a <= g.J; ++a) {
        const double re = inv.phi[a].real(), im = inv.phi[a].imag();
        CHECK(2.0 * (re * re + im * im) == n[a]);
    }
    CHECK(std::abs(inv.phi[0].imag()) == 0.0);

    const KsInversion still = exact_ks_state(n, RealVector::Zero(g.points()), g);
    for (int a = 0; a <= g.J; ++a) {
        // Exact-modulus snapping may add a minor component of order sqrt(eps).
        CHECK(std::abs(still.phi[a].imag()) <= 1e-7 * std::abs(still.phi[a]));
        CHECK(still.phi[a].real() >= 0.0);
    }
}

TEST_CASE("KS inversion closure on the initial frame") {
    // Spacing matches the coarse TDKS grid of the full-size setup.
    const GridSpec fine = build_grid(-30.0, 30.0, 600, 1.0, 1);
    const TwoBodyWavefunction psi = initial_wavefunction(fine, PacketSpec{10.0, -1.5, 1.0});
    const GridSpec coarse = coarsen(fine, 2);
    const RealVector n = subsample(one_electron_density(psi), 2);
    const RealVector j = subsample(current_density(psi), 2);
    const KsInversion inv = exact_ks_state(n, j, coarse);
    const RealVector back = orbital_current(inv.phi, coarse);
    CHECK((back - j).norm() / j.norm() < 1e-3);
}

TEST_CASE("reference trajectory rows and KS pair") {
    const GridSpec fine = small_fine(0.01, 60);
    ReferenceOptions opt;
    opt.steps = 60;
    opt.save_stride = 6;
    opt.subsample = 2;
    TdseRunSummary summary;
    const DensityTrajectory ref = reference_trajectory(fine, PacketSpec{}, opt, &summary);
    CHECK(ref.frames() == 11);
    CHECK(ref.grid.J == 40);
    CHECK_THAT(ref.grid.dt, WithinRel(0.06, 1e-12));
    CHECK(ref.density.minCoeff() >= 0.0);
    for (int k = 0; k < ref.frames(); ++k) {
        CHECK_THAT(integrate(ref.grid, ref.density.row(k).transpose()), WithinAbs(2.0, 1e-6));
    }
    CHECK(summary.max_relative_norm_drift < 1e-6);

    const KsInitialPair pair = ks_initial_pair(ref, 5);
    CHECK_THAT(pair.dt_used, WithinRel(0.3, 1e-12));
    const RealVector n0 = ref.density.row(0).transpose();
    const RealVector n1 = ref.density.row(5).transpose();
    CHECK((2.0 * pair.phi0.cwiseAbs2() - n0).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((2.0 * pair.phi1.cwiseAbs2() - n1).cwiseAbs().maxCoeff() < 1e-8);
    CHECK_THAT(integrate(ref.grid, pair.phi0.cwiseAbs2()), WithinAbs(1.0, 1e-8));

    const DensityTrajectory every5 = resample_frames(ref, 5, 3);
    CHECK(every5.frames() == 3);
    CHECK(every5.density.row(2) == ref.density.row(10));
    CHECK_THROWS(resample_frames(ref, 5, 4));
    CHECK_THROWS(ks_initial_pair(ref, 11));
    CHECK(ref.head(4).grid.K == 3);
}

TEST_CASE("subsample and coarsen") {
    RealVector f(9);
    for (int a = 0; a < 9; ++a) f[a] = a;
    const RealVector s = subsample(f, 2);
    CHECK(s.size() == 5);
    CHECK(s[4] == 8.0);
    CHECK_THROWS(subsample(f, 3));
    const GridSpec g = build_grid(-4.0, 4.0, 8, 1.0, 1);
    CHECK(coarsen(g, 2).J == 4);
    CHECK_THROWS(coarsen(g, 3));
}
