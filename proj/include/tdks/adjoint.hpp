#pragma once

#include "tdks/mlp.hpp"
#include "tdks/tdks_forward.hpp"

namespace tdks {

/**
 * Costates are complex vectors lambda = lambda^R + i lambda^I. A cotangent g
 * on a complex state z means dL = Re sum conj(g) dz, which is the same as
 * pairing [lambda^R; lambda^I] with [dz^R; dz^I].
 */
using AdjointState = ComplexVector;

/// 4 (2|phi|^2 - n) o phi, the derivative of the frame misfit.
AdjointState misfit_cotangent(const ComplexVector& phi, const RealVector& n);

/// lambda_K.
AdjointState final_condition(const ComplexVector& phi_K, const RealVector& n_K);

struct StepVjp {
    AdjointState state;    ///< cot pulled back to phi_k
    RealVector potential;  ///< cot pulled back to the potential vector (and hence v^C_k)
};

StepVjp vjp_step(const AdjointState& cot, const StepLinearization& lin,
                 const PropagatorCache& cache);

AdjointState vjp_step_state(const AdjointState& cot, const StepLinearization& lin,
                            const PropagatorCache& cache);

/// lambda_k = misfit_k + J_phi F(phi_k)^T lambda_{k+1}.
AdjointState backstep_pointwise(const AdjointState& lam_next, const ComplexVector& phi_k,
                                const RealVector& vc_k, const RealVector& n_k,
                                const PropagatorCache& cache);

/// Lambda (K+1) x (J+1); row 0 is unused and left at zero.
ComplexRowMatrix solve_adjoint_pointwise(const TdksTrajectory& traj, const RowMatrix& reference,
                                         const PropagatorCache& cache);

struct GradientReport {
    double objective = 0.0;
    double misfit = 0.0;
    double regularizer = 0.0;
    RowMatrix grad_vc;      ///< pointwise problem
    RealVector grad_theta;  ///< functional problem
    double max_abs_lambda = 0.0;
};

/// Gradient rows from a solved Lambda; row K gets only the regularizer part.
GradientReport gradient_vc(const TdksTrajectory& traj, const ComplexRowMatrix& lambda,
                           const RowMatrix& reference, const CorrelationGrid& vc, double mu,
                           const PropagatorCache& cache);

/// Objective and gradient in one backward sweep without storing Lambda.
GradientReport pointwise_gradient(const TdksTrajectory& traj, const RowMatrix& reference,
                                  const CorrelationGrid& vc, double mu,
                                  const PropagatorCache& cache);

/**
 * Delay adjoint for phi_{k+1} = F(phi_k, v^C(phi_k, phi_{k-1}; theta)).
 * Throws std::invalid_argument unless `traj` was produced from `theta`.
 * When `lambda_out` is given it receives Lambda (rows 0 and 1 unused).
 */
GradientReport solve_adjoint_functional(const TdksTrajectory& traj, const RowMatrix& reference,
                                        const MlpParameters& theta,
                                        const PropagatorCache& cache,
                                        ComplexRowMatrix* lambda_out = nullptr);

}  // namespace tdks
