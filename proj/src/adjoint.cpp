#include "tdks/adjoint.hpp"

#include <cmath>
#include <stdexcept>

namespace tdks {

namespace {

void check_reference(const TdksTrajectory& traj, const RowMatrix& reference) {
    if (reference.rows() != traj.states.rows() || reference.cols() != traj.states.cols()) {
        throw std::invalid_argument("adjoint: reference shape does not match trajectory");
    }
}

RealVector row(const RowMatrix& m, int k) { return m.row(k).transpose(); }

}  // namespace

AdjointState misfit_cotangent(const ComplexVector& phi, const RealVector& n) {
    AdjointState out(phi.size());
    for (Eigen::Index j = 0; j < phi.size(); ++j) {
        out[j] = 4.0 * (2.0 * std::norm(phi[j]) - n[j]) * phi[j];
    }
    return out;
}

AdjointState final_condition(const ComplexVector& phi_K, const RealVector& n_K) {
    return misfit_cotangent(phi_K, n_K);
}

StepVjp vjp_step(const AdjointState& cot, const StepLinearization& lin,
                 const PropagatorCache& cache) {
    const double dt = cache.grid().dt;
    const ComplexVector gz = cache.apply_half_kinetic_adjoint(cot);
    const Eigen::Index n = gz.size();
    StepVjp out;
    out.potential.resize(n);
    ComplexVector gu(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        out.potential[j] = dt * (std::conj(gz[j]) * lin.e[j] * lin.u[j]).imag();
        gu[j] = std::conj(lin.e[j]) * gz[j];
    }
    out.state = cache.apply_half_kinetic_adjoint(gu);
    const RealVector wg = cache.interaction() * out.potential;
    const RealVector& hw = cache.hartree_weights();
    for (Eigen::Index j = 0; j < n; ++j) out.state[j] += 2.0 * hw[j] * wg[j] * lin.phi[j];
    return out;
}

AdjointState vjp_step_state(const AdjointState& cot, const StepLinearization& lin,
                            const PropagatorCache& cache) {
    return vjp_step(cot, lin, cache).state;
}

AdjointState backstep_pointwise(const AdjointState& lam_next, const ComplexVector& phi_k,
                                const RealVector& vc_k, const RealVector& n_k,
                                const PropagatorCache& cache) {
    const StepLinearization lin = linearize_step(phi_k, vc_k, cache);
    return misfit_cotangent(phi_k, n_k) + vjp_step_state(lam_next, lin, cache);
}

ComplexRowMatrix solve_adjoint_pointwise(const TdksTrajectory& traj, const RowMatrix& reference,
                                         const PropagatorCache& cache) {
    check_reference(traj, reference);
    const int K = traj.frames() - 1;
    ComplexRowMatrix lambda = ComplexRowMatrix::Zero(K + 1, traj.states.cols());
    AdjointState lam = final_condition(traj.state(K), row(reference, K));
    lambda.row(K) = lam.transpose();
    for (int k = K - 1; k >= 1; --k) {
        lam = backstep_pointwise(lam, traj.state(k), row(traj.correlation, k), row(reference, k),
                                 cache);
        lambda.row(k) = lam.transpose();
    }
    return lambda;
}

GradientReport gradient_vc(const TdksTrajectory& traj, const ComplexRowMatrix& lambda,
                           const RowMatrix& reference, const CorrelationGrid& vc, double mu,
                           const PropagatorCache& cache) {
    check_reference(traj, reference);
    const int K = traj.frames() - 1;
    const Penalty penalty = smoothness_penalty(vc, mu, cache.grid());
    GradientReport report;
    report.misfit = density_loss(traj, reference);
    report.regularizer = penalty.value;
    report.objective = report.misfit + report.regularizer;
    report.grad_vc = penalty.gradient;
    report.max_abs_lambda = lambda.cwiseAbs().maxCoeff();
    for (int k = 0; k < K; ++k) {
        const StepLinearization lin = linearize_step(traj.state(k), row(vc, k), cache, k);
        const ComplexVector lam = lambda.row(k + 1).transpose();
        report.grad_vc.row(k) += vjp_step(lam, lin, cache).potential.transpose();
    }
    return report;
}

GradientReport pointwise_gradient(const TdksTrajectory& traj, const RowMatrix& reference,
                                  const CorrelationGrid& vc, double mu,
                                  const PropagatorCache& cache) {
    check_reference(traj, reference);
    const int K = traj.frames() - 1;
    const Penalty penalty = smoothness_penalty(vc, mu, cache.grid());
    GradientReport report;
    report.misfit = density_loss(traj, reference);
    report.regularizer = penalty.value;
    report.objective = report.misfit + report.regularizer;
    report.grad_vc = penalty.gradient;

    AdjointState lam = final_condition(traj.state(K), row(reference, K));
    double max_lambda = lam.cwiseAbs().maxCoeff();
    for (int k = K - 1; k >= 0; --k) {
        const ComplexVector phi = traj.state(k);
        const StepLinearization lin = linearize_step(phi, row(vc, k), cache, k);
        StepVjp vjp = vjp_step(lam, lin, cache);
        report.grad_vc.row(k) += vjp.potential.transpose();
        if (k >= 1) {
            lam = misfit_cotangent(phi, row(reference, k)) + vjp.state;
            max_lambda = std::max(max_lambda, lam.cwiseAbs().maxCoeff());
        }
    }
    report.max_abs_lambda = max_lambda;
    return report;
}

GradientReport solve_adjoint_functional(const TdksTrajectory& traj, const RowMatrix& reference,
                                        const MlpParameters& theta,
                                        const PropagatorCache& cache,
                                        ComplexRowMatrix* lambda_out) {
    check_reference(traj, reference);
    const int K = traj.frames() - 1;
    if (K < 2) throw std::invalid_argument("solve_adjoint_functional: need at least 3 frames");
    if (functional_provenance(theta, traj.state(0), traj.state(1)) != traj.provenance) {
        throw std::invalid_argument(
            "solve_adjoint_functional: trajectory was not produced by these parameters");
    }
    const Eigen::Index n = traj.states.cols();

    GradientReport report;
    report.misfit = density_loss(traj, reference);
    report.objective = report.misfit;
    report.grad_theta = RealVector::Zero(theta.size());
    if (lambda_out) *lambda_out = ComplexRowMatrix::Zero(K + 1, n);

    // acc[k] collects the Jacobian-transpose terms that reach phi_k from later steps.
    std::vector<ComplexVector> acc(K + 1, ComplexVector::Zero(n));
    double max_lambda = 0.0;
    for (int k = K - 1; k >= 1; --k) {
        const ComplexVector next = traj.state(k + 1);
        const AdjointState lam_next = misfit_cotangent(next, row(reference, k + 1)) + acc[k + 1];
        max_lambda = std::max(max_lambda, lam_next.cwiseAbs().maxCoeff());
        if (lambda_out) lambda_out->row(k + 1) = lam_next.transpose();

        const ComplexVector phi = traj.state(k);
        const ComplexVector prev = traj.state(k - 1);
        const StepLinearization lin = linearize_step(phi, row(traj.correlation, k), cache, k);
        const StepVjp vjp = vjp_step(lam_next, lin, cache);
        const StateCotangents model = mlp_vjp(theta, phi, prev, vjp.potential, report.grad_theta);
        acc[k] += vjp.state + model.current();
        if (k >= 2) acc[k - 1] += model.previous();
    }
    report.max_abs_lambda = max_lambda;
    return report;
}

}  // namespace tdks
