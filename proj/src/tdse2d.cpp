#include "tdks/tdse2d.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>
#include <fmt/format.h>

namespace tdks {

namespace {

using cplx = std::complex<double>;

Eigen::SparseMatrix<double> hamiltonian_1d(const GridSpec& grid, double shift) {
    const BandedLaplacian lap(grid);
    const RealVector v = external_potential(grid);
    const int n = grid.points();
    std::vector<Eigen::Triplet<double>> entries;
    entries.reserve(5 * n);
    for (int i = 0; i < n; ++i) {
        for (int j = std::max(0, i - 2); j <= std::min(n - 1, i + 2); ++j) {
            double value = -0.5 * lap.coefficient(i, j);
            if (i == j) value += v[i] - shift;
            entries.emplace_back(i, j, value);
        }
    }
    Eigen::SparseMatrix<double> h(n, n);
    h.setFromTriplets(entries.begin(), entries.end());
    return h;
}

// -i * z
inline cplx times_minus_i(cplx z) { return {z.imag(), -z.real()}; }

}  // namespace

HydrogenGroundState hydrogen_ground_state(const GridSpec& grid) {
    const int n = grid.points();
    const Eigen::SparseMatrix<double> h = hamiltonian_1d(grid, 0.0);
    const RealVector v = external_potential(grid);

    // -Lap/2 is positive semidefinite, so H - sigma is SPD for sigma below min(v).
    const double sigma = v.minCoeff() - 0.1;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(hamiltonian_1d(grid, sigma));
    if (ldlt.info() != Eigen::Success) {
        throw std::runtime_error("hydrogen_ground_state: factorization of shifted operator failed");
    }

    RealVector x(n);
    for (int j = 0; j < n; ++j) {
        const double s = grid.x(j) + 10.0;
        x[j] = std::exp(-0.5 * s * s);
    }
    x.normalize();

    double energy = x.dot(h * x);
    for (int it = 0; it < 2000; ++it) {
        RealVector y = ldlt.solve(x);
        y.normalize();
        const double e_new = y.dot(h * y);
        const double change = std::abs(e_new - energy);
        x = std::move(y);
        energy = e_new;
        if (change < 1e-15 * std::max(1.0, std::abs(energy)) && it > 5) break;
    }

    // Rayleigh-quotient polish.
    for (int it = 0; it < 3; ++it) {
        const double residual = (h * x - energy * x).norm();
        if (residual < 1e-12) break;
        Eigen::SparseMatrix<double> shifted = hamiltonian_1d(grid, energy);
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(shifted);
        if (lu.info() != Eigen::Success) break;
        RealVector y = lu.solve(x);
        if (!y.allFinite()) break;
        y.normalize();
        x = std::move(y);
        energy = x.dot(h * x);
    }

    HydrogenGroundState out;
    out.energy = energy;
    out.residual = (h * x - energy * x).norm();
    if (out.residual > 1e-8) {
        throw std::runtime_error(fmt::format(
            "hydrogen_ground_state: eigensolver did not converge (residual {:.3e})", out.residual));
    }
    if (x.sum() < 0.0) x = -x;
    const RealVector w = simpson_weights(grid);
    const double norm = std::sqrt(w.dot(x.cwiseAbs2()));
    out.phi = x / norm;
    return out;
}

TwoBodyWavefunction initial_wavefunction(const GridSpec& grid, const PacketSpec& packet,
                                         const RealVector& phi_h) {
    if (!(packet.width > 0.0)) throw std::invalid_argument("packet width must be positive");
    const int n = grid.points();
    ComplexVector g(n);
    for (int j = 0; j < n; ++j) {
        const double x = grid.x(j);
        const double d = x - packet.center;
        g[j] = std::exp(cplx(-d * d / (4.0 * packet.width * packet.width), packet.momentum * x));
    }
    TwoBodyWavefunction psi{grid, ComplexVector(static_cast<Eigen::Index>(n) * n)};
    for (int j1 = 0; j1 < n; ++j1) {
        for (int j2 = 0; j2 < n; ++j2) {
            psi(j1, j2) = phi_h[j1] * g[j2] + g[j1] * phi_h[j2];
        }
    }
    psi.values /= std::sqrt(norm2(psi));
    return psi;
}

TwoBodyWavefunction initial_wavefunction(const GridSpec& grid, const PacketSpec& packet) {
    return initial_wavefunction(grid, packet, hydrogen_ground_state(grid).phi);
}

double norm2(const TwoBodyWavefunction& psi) {
    const RealVector w = simpson_weights(psi.grid);
    const int n = psi.side();
    double total = 0.0;
    for (int j1 = 0; j1 < n; ++j1) {
        double row = 0.0;
        for (int j2 = 0; j2 < n; ++j2) row += std::norm(psi(j1, j2)) * w[j2];
        total += row * w[j1];
    }
    return total;
}

double discrete_norm2(const TwoBodyWavefunction& psi) {
    return psi.values.squaredNorm() * psi.grid.dx * psi.grid.dx;
}

double exchange_asymmetry(const TwoBodyWavefunction& psi) {
    const int n = psi.side();
    double worst = 0.0;
    for (int j1 = 0; j1 < n; ++j1) {
        for (int j2 = j1 + 1; j2 < n; ++j2) {
            worst = std::max(worst, std::abs(psi(j1, j2) - psi(j2, j1)));
        }
    }
    return worst;
}

RealVector one_electron_density(const TwoBodyWavefunction& psi) {
    const RealVector w = simpson_weights(psi.grid);
    const int n = psi.side();
    RealVector dens(n);
    for (int j1 = 0; j1 < n; ++j1) {
        double row = 0.0;
        for (int j2 = 0; j2 < n; ++j2) row += std::norm(psi(j1, j2)) * w[j2];
        dens[j1] = 2.0 * row;
    }
    return dens;
}

RealVector current_density(const TwoBodyWavefunction& psi) {
    const RealVector w = simpson_weights(psi.grid);
    const int n = psi.side();
    const double s = 1.0 / (12.0 * psi.grid.dx);
    RealVector cur(n);
    for (int j1 = 0; j1 < n; ++j1) {
        double row = 0.0;
        for (int j2 = 0; j2 < n; ++j2) {
            cplx d{};
            if (j1 >= 2) d += psi(j1 - 2, j2);
            if (j1 >= 1) d -= 8.0 * psi(j1 - 1, j2);
            if (j1 + 1 < n) d += 8.0 * psi(j1 + 1, j2);
            if (j1 + 2 < n) d -= psi(j1 + 2, j2);
            row += std::imag(std::conj(psi(j1, j2)) * (s * d)) * w[j2];
        }
        cur[j1] = 2.0 * row;
    }
    return cur;
}

Tdse2dPropagator::Tdse2dPropagator(const GridSpec& grid) : grid_(grid), lap_(grid) {
    const int n = grid.points();
    const RealVector v = external_potential(grid);
    const Eigen::Index total = static_cast<Eigen::Index>(n) * n;
    potential_.resize(total);
    phase_.resize(total);
    for (int j1 = 0; j1 < n; ++j1) {
        for (int j2 = 0; j2 < n; ++j2) {
            const double d = (j1 - j2) * grid.dx;
            const double value = v[j1] + v[j2] + 1.0 / std::sqrt(d * d + 1.0);
            const Eigen::Index idx = static_cast<Eigen::Index>(j1) * n + j2;
            potential_[idx] = value;
            phase_[idx] = cplx(std::cos(-value * grid.dt), std::sin(-value * grid.dt));
        }
    }
    work_.resize(total);
    acc_.resize(total);
}

void Tdse2dPropagator::apply_kinetic(const ComplexVector& in, ComplexVector& out) const {
    const int n = grid_.points();
    const double c0 = lap_.diagonal();
    const double c1 = lap_.first_band();
    const double c2 = lap_.second_band();
    const cplx* p = in.data();
    cplx* q = out.data();
    const cplx zero{};

#pragma omp parallel for schedule(static)
    for (int j1 = 0; j1 < n; ++j1) {
        const cplx* row = p + static_cast<std::ptrdiff_t>(j1) * n;
        const cplx* up1 = j1 >= 1 ? row - n : nullptr;
        const cplx* up2 = j1 >= 2 ? row - 2 * n : nullptr;
        const cplx* dn1 = j1 + 1 < n ? row + n : nullptr;
        const cplx* dn2 = j1 + 2 < n ? row + 2 * n : nullptr;
        cplx* dst = q + static_cast<std::ptrdiff_t>(j1) * n;
        for (int j2 = 0; j2 < n; ++j2) {
            // Axis sums are formed identically for both axes so that the
            // operator commutes exactly with the exchange of x1 and x2.
            const cplx a1 = (up1 ? up1[j2] : zero) + (dn1 ? dn1[j2] : zero);
            const cplx a2 = (up2 ? up2[j2] : zero) + (dn2 ? dn2[j2] : zero);
            const cplx s1 = c0 * row[j2] + c1 * a1 + c2 * a2;
            const cplx b1 = (j2 >= 1 ? row[j2 - 1] : zero) + (j2 + 1 < n ? row[j2 + 1] : zero);
            const cplx b2 = (j2 >= 2 ? row[j2 - 2] : zero) + (j2 + 2 < n ? row[j2 + 2] : zero);
            const cplx s2 = c0 * row[j2] + c1 * b1 + c2 * b2;
            dst[j2] = -0.5 * (s1 + s2);
        }
    }
}

void Tdse2dPropagator::apply_half_kinetic(ComplexVector& psi) const {
    // Horner form of sum_{m=0}^{4} (-i K h)^m / m!, h = dt/2.
    const double h = 0.5 * grid_.dt;
    const Eigen::Index total = psi.size();
    acc_ = psi;
    for (int m = 4; m >= 1; --m) {
        apply_kinetic(acc_, work_);
        const double c = h / m;
#pragma omp parallel for schedule(static)
        for (Eigen::Index i = 0; i < total; ++i) {
            acc_[i] = psi[i] + c * times_minus_i(work_[i]);
        }
    }
    psi.swap(acc_);
}

void Tdse2dPropagator::step(TwoBodyWavefunction& psi) const {
    apply_half_kinetic(psi.values);
    psi.values.array() *= phase_.array();
    apply_half_kinetic(psi.values);
}

double Tdse2dPropagator::energy(const TwoBodyWavefunction& psi) const {
    ComplexVector kpsi(psi.values.size());
    apply_kinetic(psi.values, kpsi);
    const RealVector w = simpson_weights(grid_);
    const int n = grid_.points();
    double num = 0.0;
    for (int j1 = 0; j1 < n; ++j1) {
        double row = 0.0;
        for (int j2 = 0; j2 < n; ++j2) {
            const Eigen::Index idx = static_cast<Eigen::Index>(j1) * n + j2;
            const cplx hpsi = kpsi[idx] + potential_[idx] * psi.values[idx];
            row += std::real(std::conj(psi.values[idx]) * hpsi) * w[j2];
        }
        num += row * w[j1];
    }
    return num / norm2(psi);
}

TdseRunSummary propagate_tdse(TwoBodyWavefunction& psi, int steps, int save_stride,
                              const FrameCallback& on_frame, double norm_tolerance) {
    if (steps < 0) throw std::invalid_argument("propagate_tdse: negative step count");
    if (save_stride < 1) throw std::invalid_argument("propagate_tdse: save_stride must be >= 1");
    const Tdse2dPropagator prop(psi.grid);

    TdseRunSummary summary;
    summary.initial_norm = discrete_norm2(psi);
    summary.final_norm = summary.initial_norm;
    const double quadrature0 = norm2(psi);
    if (on_frame) on_frame(0, psi);

    auto check = [&](int k) {
        const double nrm = discrete_norm2(psi);
        const double drift = std::abs(nrm - summary.initial_norm) / summary.initial_norm;
        summary.final_norm = nrm;
        summary.max_relative_norm_drift = std::max(summary.max_relative_norm_drift, drift);
        summary.max_relative_quadrature_drift =
            std::max(summary.max_relative_quadrature_drift,
                     std::abs(norm2(psi) - quadrature0) / quadrature0);
        if (!(drift <= norm_tolerance)) {
            throw std::runtime_error(fmt::format(
                "propagate_tdse: relative norm drift {:.3e} at step {} exceeds {:.1e}; "
                "the time step is too large for the series propagator",
                drift, k, norm_tolerance));
        }
    };

    for (int k = 1; k <= steps; ++k) {
        prop.step(psi);
        if (k % save_stride == 0) {
            check(k);
            if (on_frame) on_frame(k, psi);
        }
    }
    if (steps % save_stride != 0) check(steps);
    return summary;
}

namespace {

double step_ulps(double v, int n) {
    for (int s = 0; s < std::abs(n); ++s) v = std::nextafter(v, n > 0 ? INFINITY : -INFINITY);
    return v;
}

// Adjusts (re, im) so that re*re + im*im rounds to target. The larger
// component moves by a few ulps; the smaller one is recomputed from the
// remainder, which also covers im == 0 where squares alone skip values.
void snap_modulus(double& re, double& im, double target) {
    if (re * re + im * im == target) return;
    const bool re_major = std::abs(re) >= std::abs(im);
    const double major = re_major ? re : im;
    const double minor = re_major ? im : re;
    for (int d = 0; d <= 16; ++d) {
        for (int sign : {1, -1}) {
            if (d == 0 && sign < 0) continue;
            const double a = step_ulps(major, sign * d);
            const double rem = std::fma(-a, a, target);
            if (rem < 0.0) continue;
            const double b0 = std::copysign(std::sqrt(rem), minor);
            for (int e : {0, 1, -1, 2, -2, 3, -3}) {
                const double b = step_ulps(b0, e);
                if (a * a + b * b == target) {
                    re = re_major ? a : b;
                    im = re_major ? b : a;
                    return;
                }
            }
        }
    }
}

}  // namespace

KsInversion exact_ks_state(const RealVector& n, const RealVector& j, const GridSpec& grid) {
    const int np = grid.points();
    if (n.size() != np || j.size() != np) {
        throw std::invalid_argument("exact_ks_state: density/current length does not match grid");
    }
    KsInversion out;

    RealVector velocity(np);
    const double jmax = j.cwiseAbs().maxCoeff();
    int first_bad = -1, last_bad = -1;
    for (int i = 0; i < np; ++i) {
        velocity[i] = j[i] / std::max(n[i], kDensityClamp);
        if (n[i] < kDensityClamp && std::abs(j[i]) > 1e-6 * jmax && jmax > 0.0) {
            if (first_bad < 0) first_bad = i;
            last_bad = i;
        }
    }
    if (first_bad >= 0) {
        out.warnings.push_back(fmt::format(
            "density below clamp {:.0e} carries current on [{:.4g}, {:.4g}]", kDensityClamp,
            grid.x(first_bad), grid.x(last_bad)));
    }

    // Cumulative integral of the velocity field, fourth order in the interior.
    RealVector phase(np);
    phase[0] = 0.0;
    for (int i = 0; i + 1 < np; ++i) {
        double piece;
        if (i >= 1 && i + 2 < np) {
            piece = grid.dx / 24.0 *
                    (-velocity[i - 1] + 13.0 * velocity[i] + 13.0 * velocity[i + 1] - velocity[i + 2]);
        } else {
            piece = 0.5 * grid.dx * (velocity[i] + velocity[i + 1]);
        }
        phase[i + 1] = phase[i] + piece;
    }

    out.phi.resize(np);
    for (int i = 0; i < np; ++i) {
        const double half = 0.5 * n[i];
        const double amp = std::sqrt(std::max(half, 0.0));
        double re = amp * std::cos(phase[i]);
        double im = amp * std::sin(phase[i]);
        if (half > 0.0) snap_modulus(re, im, half);
        out.phi[i] = cplx(re, im);
    }
    return out;
}

RealVector orbital_current(const ComplexVector& phi, const GridSpec& grid) {
    const int np = grid.points();
    ComplexVector d(np);
    first_derivative4<cplx>(std::span<const cplx>(phi.data(), np), std::span<cplx>(d.data(), np),
                            grid.dx);
    RealVector cur(np);
    for (int i = 0; i < np; ++i) cur[i] = 2.0 * std::imag(std::conj(phi[i]) * d[i]);
    return cur;
}

RealVector subsample(const RealVector& fine, int factor) {
    if (factor < 1 || (fine.size() - 1) % factor != 0) {
        throw std::invalid_argument("subsample: factor must divide the interval count");
    }
    const Eigen::Index m = (fine.size() - 1) / factor + 1;
    RealVector out(m);
    for (Eigen::Index i = 0; i < m; ++i) out[i] = fine[i * factor];
    return out;
}

GridSpec coarsen(const GridSpec& fine, int factor) {
    if (factor < 1 || fine.J % factor != 0) {
        throw std::invalid_argument("coarsen: factor must divide J");
    }
    return build_grid(fine.l_min, fine.l_max, fine.J / factor, fine.T, fine.K);
}

DensityTrajectory DensityTrajectory::head(int count) const {
    if (count < 1 || count > frames()) {
        throw std::invalid_argument(fmt::format(
            "density trajectory has {} frames; {} requested", frames(), count));
    }
    DensityTrajectory out = *this;
    out.density = density.topRows(count);
    if (current.rows() > 0) out.current = current.topRows(count);
    out.grid.K = count - 1;
    out.grid.T = out.grid.K * grid.dt;
    return out;
}

DensityTrajectory reference_trajectory(const GridSpec& fine, const PacketSpec& packet,
                                       const ReferenceOptions& options,
                                       TdseRunSummary* summary) {
    if (options.save_stride < 1 || options.steps < 0 || options.steps % options.save_stride != 0) {
        throw std::invalid_argument("reference_trajectory: steps must be a multiple of save_stride");
    }
    const GridSpec coarse = coarsen(fine, options.subsample);
    const int frames = options.steps / options.save_stride + 1;

    DensityTrajectory ref;
    ref.grid = coarse;
    ref.grid.dt = fine.dt * options.save_stride;
    ref.grid.K = frames - 1;
    ref.grid.T = ref.grid.K * ref.grid.dt;
    ref.stride = options.save_stride;
    ref.momentum = packet.momentum;
    ref.packet_width = packet.width;
    ref.density.resize(frames, coarse.points());
    ref.current.resize(frames, coarse.points());

    const RealVector w = simpson_weights(coarse);
    TwoBodyWavefunction psi = initial_wavefunction(fine, packet);
    const TdseRunSummary run = propagate_tdse(
        psi, options.steps, options.save_stride,
        [&](int k, const TwoBodyWavefunction& state) {
            const int row = k / options.save_stride;
            RealVector n = subsample(one_electron_density(state), options.subsample);
            RealVector j = subsample(current_density(state), options.subsample);
            const double scale = 2.0 / w.dot(n);
            ref.density.row(row) = (scale * n).transpose();
            ref.current.row(row) = (scale * j).transpose();
        },
        options.norm_tolerance);
    if (summary) *summary = run;
    return ref;
}

KsInitialPair ks_initial_pair(const DensityTrajectory& ref, int frame_stride,
                              std::vector<std::string>* warnings) {
    if (ref.current.rows() != ref.density.rows()) {
        throw std::invalid_argument("ks_initial_pair: reference has no current density");
    }
    if (frame_stride < 1 || frame_stride >= ref.frames()) {
        throw std::invalid_argument(fmt::format(
            "ks_initial_pair: frame stride {} is outside the {} saved frames", frame_stride,
            ref.frames()));
    }
    auto invert = [&](int row) {
        KsInversion inv = exact_ks_state(ref.density.row(row).transpose(),
                                         ref.current.row(row).transpose(), ref.grid);
        if (warnings) {
            for (auto& msg : inv.warnings) warnings->push_back(fmt::format("frame {}: {}", row, msg));
        }
        return inv.phi;
    };
    KsInitialPair pair;
    pair.phi0 = invert(0);
    pair.phi1 = invert(frame_stride);
    pair.dt_used = ref.grid.dt * frame_stride;
    pair.momentum = ref.momentum;
    return pair;
}

DensityTrajectory resample_frames(const DensityTrajectory& ref, int frame_stride, int frames) {
    if (frame_stride < 1 || frames < 1 || (frames - 1) * frame_stride >= ref.frames()) {
        throw std::invalid_argument(fmt::format(
            "resample_frames: {} frames at stride {} need {} saved frames; the reference has {}",
            frames, frame_stride, (frames - 1) * frame_stride + 1, ref.frames()));
    }
    DensityTrajectory out;
    out.grid = ref.grid;
    out.grid.dt = ref.grid.dt * frame_stride;
    out.grid.K = frames - 1;
    out.grid.T = out.grid.K * out.grid.dt;
    out.stride = ref.stride * frame_stride;
    out.momentum = ref.momentum;
    out.packet_width = ref.packet_width;
    out.density.resize(frames, ref.density.cols());
    const bool with_current = ref.current.rows() == ref.density.rows();
    if (with_current) out.current.resize(frames, ref.current.cols());
    for (int k = 0; k < frames; ++k) {
        out.density.row(k) = ref.density.row(k * frame_stride);
        if (with_current) out.current.row(k) = ref.current.row(k * frame_stride);
    }
    return out;
}

}  // namespace tdks
