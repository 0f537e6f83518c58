#include "tdks/tdks_forward.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include "tdks/hashing.hpp"

namespace tdks {

PropagatorCache::PropagatorCache(const GridSpec& grid) : grid_(grid) {
    const int n = grid.points();
    const Eigen::MatrixXd kinetic = -0.5 * BandedLaplacian(grid).dense();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(kinetic);
    if (eig.info() != Eigen::Success) {
        const Eigen::JacobiSVD<Eigen::MatrixXd> svd(kinetic);
        const RealVector s = svd.singularValues();
        throw std::runtime_error(fmt::format(
            "build_cache: eigendecomposition of the kinetic operator failed (n = {}, "
            "largest singular value {:.6e}, smallest {:.6e}, condition {:.6e})",
            n, s[0], s[n - 1], s[n - 1] > 0 ? s[0] / s[n - 1] : INFINITY));
    }
    eigenvalues_ = eig.eigenvalues();
    eigenvectors_ = eig.eigenvectors();

    const double h = 0.5 * grid.dt;
    RealVector c(n), s(n);
    for (int i = 0; i < n; ++i) {
        c[i] = std::cos(eigenvalues_[i] * h);
        s[i] = -std::sin(eigenvalues_[i] * h);
    }
    const Eigen::MatrixXd& S = eigenvectors_;
    Eigen::MatrixXd re = S * c.asDiagonal() * S.transpose();
    Eigen::MatrixXd im = S * s.asDiagonal() * S.transpose();
    re = 0.5 * (re + re.transpose()).eval();
    im = 0.5 * (im + im.transpose()).eval();
    pk_.resize(n, n);
    pk_.real() = re;
    pk_.imag() = im;

    v_ext_ = external_potential(grid);
    W_ = interaction_matrix(grid);
    w_ = simpson_weights(grid);
    hw_ = w_ / grid.dx;
}

PropagatorCache PropagatorCache::without_kinetic(const GridSpec& grid) {
    PropagatorCache cache;
    const int n = grid.points();
    cache.grid_ = grid;
    cache.pk_ = Eigen::MatrixXcd::Identity(n, n);
    cache.eigenvalues_ = RealVector::Zero(n);
    cache.eigenvectors_ = Eigen::MatrixXd::Identity(n, n);
    cache.v_ext_ = external_potential(grid);
    cache.W_ = interaction_matrix(grid);
    cache.w_ = simpson_weights(grid);
    cache.hw_ = cache.w_ / grid.dx;
    return cache;
}

PropagatorCache build_cache(const GridSpec& grid) { return PropagatorCache(grid); }

double ks_norm(const ComplexVector& phi, const GridSpec& grid) {
    return std::sqrt(simpson_weights(grid).dot(phi.cwiseAbs2()));
}

RealVector ks_density(const ComplexVector& phi) { return 2.0 * phi.cwiseAbs2(); }

RealVector potential_vector(const ComplexVector& phi, const RealVector& vc,
                            const PropagatorCache& cache) {
    const Eigen::Index n = cache.grid().points();
    if (phi.size() != n || vc.size() != n) {
        throw std::invalid_argument("potential_vector: length mismatch");
    }
    const RealVector weighted = phi.cwiseAbs2().cwiseProduct(cache.hartree_weights());
    return cache.external() + cache.interaction() * weighted + vc;
}

StepLinearization linearize_step(const ComplexVector& phi, const RealVector& vc,
                                 const PropagatorCache& cache, int step_index) {
    StepLinearization lin;
    lin.phi = phi;
    lin.v = potential_vector(phi, vc, cache);
    const double dt = cache.grid().dt;
    lin.e.resize(lin.v.size());
    for (Eigen::Index j = 0; j < lin.v.size(); ++j) {
        const double v = lin.v[j];
        if (!std::isfinite(v)) {
            throw NonFiniteError(fmt::format("non-finite potential at step {}, grid index {}",
                                             step_index, j),
                                 step_index, static_cast<int>(j));
        }
        lin.e[j] = {std::cos(-v * dt), std::sin(-v * dt)};
    }
    lin.u = cache.apply_half_kinetic(phi);
    return lin;
}

ComplexVector step(const ComplexVector& phi, const RealVector& vc, const PropagatorCache& cache,
                   int step_index) {
    const StepLinearization lin = linearize_step(phi, vc, cache, step_index);
    return cache.apply_half_kinetic(lin.e.cwiseProduct(lin.u));
}

ComplexVector split_step(const ComplexVector& phi, const RealVector& v,
                         const PropagatorCache& cache) {
    const double dt = cache.grid().dt;
    ComplexVector u = cache.apply_half_kinetic(phi);
    for (Eigen::Index j = 0; j < u.size(); ++j) {
        u[j] *= std::complex<double>(std::cos(-v[j] * dt), std::sin(-v[j] * dt));
    }
    return cache.apply_half_kinetic(u);
}

RowMatrix densities(const TdksTrajectory& traj) {
    return 2.0 * traj.states.cwiseAbs2();
}

std::string pointwise_provenance(const CorrelationGrid& vc, const ComplexVector& phi0) {
    Hasher h;
    h.update("pointwise");
    h.update(vc);
    h.update(phi0);
    return "vc:" + h.short_digest();
}

std::string functional_provenance(const MlpParameters& theta, const ComplexVector& phi0,
                                  const ComplexVector& phi1) {
    Hasher h;
    h.update("functional:" + to_string(theta.shape().kind) + ":" +
             std::to_string(theta.shape().hidden_width) + ":" +
             std::to_string(theta.shape().hidden_layers) + ":" +
             (theta.shape().use_previous ? "memory" : "masked"));
    h.update(theta.flat());
    h.update(phi0);
    h.update(phi1);
    return "theta:" + h.short_digest();
}

namespace {

void check_state(const ComplexVector& phi, int k) {
    for (Eigen::Index j = 0; j < phi.size(); ++j) {
        if (!std::isfinite(phi[j].real()) || !std::isfinite(phi[j].imag())) {
            throw NonFiniteError(
                fmt::format("non-finite state at step {}, grid index {}", k, j), k,
                static_cast<int>(j));
        }
    }
}

}  // namespace

TdksTrajectory propagate_pointwise(const ComplexVector& phi0, const CorrelationGrid& vc,
                                   const PropagatorCache& cache) {
    const GridSpec& grid = cache.grid();
    if (vc.cols() != grid.points() || vc.rows() < 1) {
        throw std::invalid_argument("propagate_pointwise: correlation grid has wrong shape");
    }
    if (phi0.size() != grid.points()) {
        throw std::invalid_argument("propagate_pointwise: initial state has wrong length");
    }
    const int K = static_cast<int>(vc.rows()) - 1;
    TdksTrajectory traj;
    traj.grid = grid;
    traj.grid.K = K;
    traj.grid.T = K * grid.dt;
    traj.states.resize(K + 1, grid.points());
    traj.correlation = vc;
    traj.provenance = pointwise_provenance(vc, phi0);

    ComplexVector phi = phi0;
    traj.states.row(0) = phi.transpose();
    for (int k = 0; k < K; ++k) {
        phi = step(phi, vc.row(k).transpose(), cache, k);
        check_state(phi, k + 1);
        traj.states.row(k + 1) = phi.transpose();
    }
    return traj;
}

TdksTrajectory propagate_functional(const ComplexVector& phi0, const ComplexVector& phi1,
                                    const MlpParameters& theta, int K,
                                    const PropagatorCache& cache) {
    const GridSpec& grid = cache.grid();
    if (K < 1) throw std::invalid_argument("propagate_functional: K must be at least 1");
    if (phi0.size() != grid.points() || phi1.size() != grid.points()) {
        throw std::invalid_argument("propagate_functional: initial states have wrong length");
    }
    if (theta.shape().points != grid.points()) {
        throw std::invalid_argument("propagate_functional: model width does not match grid");
    }
    TdksTrajectory traj;
    traj.grid = grid;
    traj.grid.K = K;
    traj.grid.T = K * grid.dt;
    traj.states.resize(K + 1, grid.points());
    traj.correlation = RowMatrix::Zero(K + 1, grid.points());
    traj.provenance = functional_provenance(theta, phi0, phi1);

    traj.states.row(0) = phi0.transpose();
    traj.states.row(1) = phi1.transpose();
    ComplexVector prev = phi0;
    ComplexVector phi = phi1;
    for (int k = 1; k < K; ++k) {
        const RealVector vc = mlp_forward(theta, phi, prev);
        traj.correlation.row(k) = vc.transpose();
        ComplexVector next = step(phi, vc, cache, k);
        check_state(next, k + 1);
        traj.states.row(k + 1) = next.transpose();
        prev = std::move(phi);
        phi = std::move(next);
    }
    return traj;
}

double density_loss(const TdksTrajectory& traj, const RowMatrix& reference) {
    if (reference.rows() != traj.states.rows() || reference.cols() != traj.states.cols()) {
        throw std::invalid_argument(fmt::format(
            "density_loss: reference is {}x{} but trajectory is {}x{}", reference.rows(),
            reference.cols(), traj.states.rows(), traj.states.cols()));
    }
    return 0.5 * (densities(traj) - reference).squaredNorm();
}

double mse_from_loss(double loss, const GridSpec& grid) {
    return 2.0 * loss / (static_cast<double>(grid.K + 1) * grid.points());
}

double density_mse(const TdksTrajectory& traj, const RowMatrix& reference) {
    return mse_from_loss(density_loss(traj, reference), traj.grid);
}

Penalty smoothness_penalty(const CorrelationGrid& vc, double mu, const GridSpec& grid) {
    if (mu < 0.0) throw std::invalid_argument("smoothness_penalty: mu must be non-negative");
    Penalty p;
    p.gradient = RowMatrix::Zero(vc.rows(), vc.cols());
    if (mu == 0.0) return p;
    const double inv = 1.0 / grid.dx;
    double sum = 0.0;
    for (Eigen::Index k = 0; k < vc.rows(); ++k) {
        for (Eigen::Index j = 0; j + 1 < vc.cols(); ++j) {
            const double q = (vc(k, j + 1) - vc(k, j)) * inv;
            sum += q * q;
            const double g = 2.0 * mu * q * inv;
            p.gradient(k, j + 1) += g;
            p.gradient(k, j) -= g;
        }
    }
    p.value = mu * sum;
    return p;
}

}  // namespace tdks
