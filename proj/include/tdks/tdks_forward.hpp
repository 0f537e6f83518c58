#pragma once

#include <stdexcept>
#include <string>

#include "tdks/grid.hpp"
#include "tdks/mlp.hpp"
#include "tdks/tdse2d.hpp"

namespace tdks {

using ComplexRowMatrix =
    Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Raised when a potential or propagated state stops being finite.
class NonFiniteError : public std::runtime_error {
public:
    NonFiniteError(const std::string& what, int step, int index)
        : std::runtime_error(what), step_(step), index_(index) {}
    int step() const { return step_; }
    int index() const { return index_; }

private:
    int step_;
    int index_;
};

/**
 * Everything a TDKS step needs that does not depend on the state: the
 * half-step kinetic propagator P_K = S exp(-i D dt/2) S^T of K = -(1/2) Lap,
 * the external potential, the interaction matrix and quadrature weights.
 * Immutable after construction.
 */
class PropagatorCache {
public:
    explicit PropagatorCache(const GridSpec& grid);

    /// Test hook: same potentials, P_K = I.
    static PropagatorCache without_kinetic(const GridSpec& grid);

    const GridSpec& grid() const { return grid_; }
    const Eigen::MatrixXcd& half_kinetic() const { return pk_; }
    const RealVector& kinetic_eigenvalues() const { return eigenvalues_; }
    const Eigen::MatrixXd& kinetic_eigenvectors() const { return eigenvectors_; }
    const RealVector& external() const { return v_ext_; }
    const Eigen::MatrixXd& interaction() const { return W_; }
    const RealVector& weights() const { return w_; }
    /// Simpson pattern [1,4,2,...,4,1]/3; W already carries the dx.
    const RealVector& hartree_weights() const { return hw_; }

    ComplexVector apply_half_kinetic(const ComplexVector& phi) const { return pk_ * phi; }
    ComplexVector apply_half_kinetic_adjoint(const ComplexVector& phi) const {
        return pk_.adjoint() * phi;
    }

private:
    PropagatorCache() = default;

    GridSpec grid_;
    Eigen::MatrixXcd pk_;
    RealVector eigenvalues_;
    Eigen::MatrixXd eigenvectors_;
    RealVector v_ext_;
    Eigen::MatrixXd W_;
    RealVector w_;
    RealVector hw_;
};

PropagatorCache build_cache(const GridSpec& grid);

/// sqrt(sum |phi|^2 w)
double ks_norm(const ComplexVector& phi, const GridSpec& grid);

/// 2 |phi|^2
RealVector ks_density(const ComplexVector& phi);

/// v_ext + W(|phi|^2 o hw) + vc
RealVector potential_vector(const ComplexVector& phi, const RealVector& vc,
                            const PropagatorCache& cache);

/// Intermediates of one step phi -> P_K(e o u): u = P_K phi, e = exp(-i v dt).
struct StepLinearization {
    ComplexVector phi;
    ComplexVector u;
    ComplexVector e;
    RealVector v;
};

StepLinearization linearize_step(const ComplexVector& phi, const RealVector& vc,
                                 const PropagatorCache& cache, int step_index = -1);

ComplexVector step(const ComplexVector& phi, const RealVector& vc, const PropagatorCache& cache,
                   int step_index = -1);

/// P_K (exp(-i v dt) o P_K phi) for a given total potential v.
ComplexVector split_step(const ComplexVector& phi, const RealVector& v,
                         const PropagatorCache& cache);

/// Row (k, j) holds v^C(x_j, t_k); K+1 rows.
using CorrelationGrid = RowMatrix;

struct TdksTrajectory {
    GridSpec grid;
    ComplexRowMatrix states;  ///< (K+1) x (J+1)
    /// Correlation potential that drove each step; row K is unused.
    RowMatrix correlation;
    std::string provenance;

    int frames() const { return static_cast<int>(states.rows()); }
    ComplexVector state(int k) const { return states.row(k).transpose(); }
};

/// (K+1) x (J+1) densities 2|phi_k|^2.
RowMatrix densities(const TdksTrajectory& traj);

std::string pointwise_provenance(const CorrelationGrid& vc, const ComplexVector& phi0);
std::string functional_provenance(const MlpParameters& theta, const ComplexVector& phi0,
                                  const ComplexVector& phi1);

/// K = vc.rows() - 1 steps; row k drives the step k -> k+1.
TdksTrajectory propagate_pointwise(const ComplexVector& phi0, const CorrelationGrid& vc,
                                   const PropagatorCache& cache);

/// phi_{k+1} = F(phi_k, v^C(phi_k, phi_{k-1}; theta)) for k = 1..K-1.
TdksTrajectory propagate_functional(const ComplexVector& phi0, const ComplexVector& phi1,
                                    const MlpParameters& theta, int K,
                                    const PropagatorCache& cache);

/// (1/2) sum_k sum_j (2|phi_{k,j}|^2 - n_{k,j})^2
double density_loss(const TdksTrajectory& traj, const RowMatrix& reference);

/// 2 loss / ((K+1)(J+1))
double density_mse(const TdksTrajectory& traj, const RowMatrix& reference);
double mse_from_loss(double loss, const GridSpec& grid);

struct Penalty {
    double value = 0.0;
    RowMatrix gradient;
};

/// mu sum_k sum_{j<J} ((vc_{k,j+1} - vc_{k,j}) / dx)^2 and its exact gradient.
Penalty smoothness_penalty(const CorrelationGrid& vc, double mu, const GridSpec& grid);

}  // namespace tdks
