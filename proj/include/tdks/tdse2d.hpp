#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tdks/grid.hpp"

namespace tdks {

/**
 * Two-electron wavefunction Psi(x1, x2) sampled on grid x grid, flattened
 * row-major: index j1 * (J+1) + j2.
 */
struct TwoBodyWavefunction {
    GridSpec grid;
    ComplexVector values;

    int side() const { return grid.points(); }
    std::complex<double>& operator()(int j1, int j2) { return values[j1 * side() + j2]; }
    const std::complex<double>& operator()(int j1, int j2) const {
        return values[j1 * side() + j2];
    }
};

/// Incoming electron: exp(-(x - center)^2 / (4 width^2) + i p x).
struct PacketSpec {
    double center = 10.0;
    double momentum = -1.5;
    double width = 1.0;
};

struct HydrogenGroundState {
    RealVector phi;    ///< Simpson-normalized, positive.
    double energy = 0.0;
    double residual = 0.0;  ///< ||H phi - E phi||_2
};

/// Lowest eigenpair of -(1/2) Laplacian + v_ext on the 1D grid.
HydrogenGroundState hydrogen_ground_state(const GridSpec& grid);

/// N [phi_H(x1) g(x2) + g(x1) phi_H(x2)], normalized under 2D Simpson.
TwoBodyWavefunction initial_wavefunction(const GridSpec& grid, const PacketSpec& packet,
                                         const RealVector& phi_h);
TwoBodyWavefunction initial_wavefunction(const GridSpec& grid, const PacketSpec& packet);

/// Sum |Psi|^2 w_{j1} w_{j2}.
double norm2(const TwoBodyWavefunction& psi);

/// dx^2 sum |Psi|^2, the quantity the split-step propagator conserves up to series error.
double discrete_norm2(const TwoBodyWavefunction& psi);

/// max |Psi(x1,x2) - Psi(x2,x1)|
double exchange_asymmetry(const TwoBodyWavefunction& psi);

/// n(x1) = 2 sum_{j2} |Psi(x1, x2)|^2 w_{j2}
RealVector one_electron_density(const TwoBodyWavefunction& psi);

/// j(x1) = 2 sum_{j2} Im[conj(Psi) D1 Psi](x1, x2) w_{j2}, D1 acting on x1.
RealVector current_density(const TwoBodyWavefunction& psi);

/**
 * Split-operator propagator for the two-electron Schrodinger equation:
 * psi <- P_K P_V P_K psi with P_K the degree-4 Taylor polynomial of
 * exp(-i K dt/2), K = -(1/2)(Lap x I + I x Lap), applied matrix-free.
 */
class Tdse2dPropagator {
public:
    explicit Tdse2dPropagator(const GridSpec& grid);

    const GridSpec& grid() const { return grid_; }

    void step(TwoBodyWavefunction& psi) const;

    /// K psi, exposed for energy evaluation and tests.
    void apply_kinetic(const ComplexVector& in, ComplexVector& out) const;

    /// <psi|H|psi> under 2D Simpson quadrature.
    double energy(const TwoBodyWavefunction& psi) const;

    const RealVector& potential() const { return potential_; }

private:
    void apply_half_kinetic(ComplexVector& psi) const;

    GridSpec grid_;
    BandedLaplacian lap_;
    RealVector potential_;
    ComplexVector phase_;
    mutable ComplexVector work_, acc_;
};

/// Called with (step index, state) for k = 0, stride, 2*stride, ...
using FrameCallback = std::function<void(int, const TwoBodyWavefunction&)>;

/// Norms are discrete_norm2; the quadrature drift tracks the Simpson norm2 alongside.
struct TdseRunSummary {
    double initial_norm = 0.0;
    double final_norm = 0.0;
    double max_relative_norm_drift = 0.0;
    double max_relative_quadrature_drift = 0.0;
};

/**
 * Advances psi in place by `steps` steps. Throws std::runtime_error when the
 * relative drift of discrete_norm2 at a saved frame exceeds `norm_tolerance`.
 */
TdseRunSummary propagate_tdse(TwoBodyWavefunction& psi, int steps, int save_stride,
                              const FrameCallback& on_frame, double norm_tolerance = 1e-6);

inline constexpr double kDensityClamp = 1e-12;

struct KsInversion {
    ComplexVector phi;
    std::vector<std::string> warnings;
};

/**
 * Single doubly-occupied orbital reproducing (n, j): phi = sqrt(n/2) e^{iS}
 * with dS/dx = j/n and S(l_min) = 0. The density is reproduced exactly in
 * floating point: 2 (Re^2 + Im^2) == n for every entry it can be achieved for.
 */
KsInversion exact_ks_state(const RealVector& n, const RealVector& j, const GridSpec& grid);

/// Single-orbital current 2 Im[conj(phi) D1 phi].
RealVector orbital_current(const ComplexVector& phi, const GridSpec& grid);

/// Reference densities n(x_j, t_k); one row per saved frame.
struct DensityTrajectory {
    GridSpec grid;      ///< Spatial grid plus the time axis of the saved frames.
    RowMatrix density;  ///< frames x points
    RowMatrix current;  ///< same shape as density, or empty
    int stride = 1;     ///< Propagator steps between saved frames.
    double momentum = 0.0;
    double packet_width = 0.0;

    int frames() const { return static_cast<int>(density.rows()); }
    /// First `frames` rows, with the grid time axis adjusted to match.
    DensityTrajectory head(int frames) const;
};

/// Exact Kohn-Sham states at the first two frames of a coarse time axis.
struct KsInitialPair {
    ComplexVector phi0;
    ComplexVector phi1;
    double dt_used = 0.0;
    double momentum = 0.0;
};

struct ReferenceOptions {
    int steps = 0;           ///< TDSE steps on the fine grid
    int save_stride = 1;     ///< steps between saved frames
    int subsample = 1;       ///< keep every `subsample`-th grid point
    double norm_tolerance = 1e-6;
};

/**
 * Runs the TDSE from the configured initial state and records density and
 * current on the coarse grid. Each coarse density row is rescaled to
 * integrate to 2 under coarse Simpson; the current gets the same factor.
 * The returned grid carries the saved-frame time axis.
 */
DensityTrajectory reference_trajectory(const GridSpec& fine, const PacketSpec& packet,
                                       const ReferenceOptions& options,
                                       TdseRunSummary* summary = nullptr);

/// Exact KS states at frames 0 and `frame_stride` of a reference with currents.
KsInitialPair ks_initial_pair(const DensityTrajectory& ref, int frame_stride,
                              std::vector<std::string>* warnings = nullptr);

/// Every `frame_stride`-th frame, for `frames` frames.
DensityTrajectory resample_frames(const DensityTrajectory& ref, int frame_stride, int frames);

/// Every `factor`-th point of a vector sampled on a fine grid.
RealVector subsample(const RealVector& fine, int factor);

/// Coarse grid obtained by keeping every `factor`-th point. Throws unless J divides evenly.
GridSpec coarsen(const GridSpec& fine, int factor);

}  // namespace tdks
