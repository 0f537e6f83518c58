#include "tdks/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace tdks {

FdReport compare_with_fd(const std::function<double(const RealVector&)>& f,
                         const RealVector& x, const RealVector& grad, const FdOptions& options) {
    FdReport report;
    report.entries = x.size();
    const double scale = grad.size() ? grad.cwiseAbs().maxCoeff() : 0.0;
    const double floor = std::max(options.floor_fraction * scale, 1e-300);
    RealVector xp = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        double best = INFINITY, best_fd = 0.0, best_h = 0.0;
        for (double h : options.steps) {
            xp[i] = x[i] + h;
            const double fp = f(xp);
            xp[i] = x[i] - h;
            const double fm = f(xp);
            xp[i] = x[i];
            const double fd = (fp - fm) / (2.0 * h);
            const double err = std::abs(fd - grad[i]) / std::max(std::abs(grad[i]), floor);
            if (err < best) {
                best = err;
                best_fd = fd;
                best_h = h;
            }
        }
        if (best > report.max_rel_error || report.worst < 0) {
            report.max_rel_error = best;
            report.worst = i;
            report.analytic_at_worst = grad[i];
            report.fd_at_worst = best_fd;
            report.best_step_at_worst = best_h;
        }
    }
    return report;
}

ComplexVector random_state(std::uint64_t seed, const GridSpec& grid) {
    ComplexVector phi(grid.points());
    for (int j = 0; j < grid.points(); ++j) {
        phi[j] = {counter_normal(seed, 1, 2 * j), counter_normal(seed, 1, 2 * j + 1)};
    }
    return phi / ks_norm(phi, grid);
}

namespace {

GridSpec small_grid(int J, int K) { return build_grid(-4.0, 4.0, J, 0.3 * K, K); }

RowMatrix random_density(std::uint64_t seed, std::uint64_t stream, int rows, int cols) {
    RowMatrix n(rows, cols);
    for (Eigen::Index i = 0; i < n.size(); ++i) n.data()[i] = std::abs(counter_normal(seed, stream, i));
    return n;
}

}  // namespace

PointwiseInstance random_pointwise_instance(std::uint64_t seed, int J, int K, double mu) {
    PointwiseInstance inst;
    auto& p = inst.problem;
    p.grid = small_grid(J, K);
    p.phi0 = random_state(seed, p.grid);
    p.reference = random_density(seed, 2, K + 1, J + 1);
    p.mu = mu;
    inst.vc.resize(K + 1, J + 1);
    for (Eigen::Index i = 0; i < inst.vc.size(); ++i) inst.vc.data()[i] = 0.3 * counter_normal(seed, 3, i);
    return inst;
}

FunctionalInstance random_functional_instance(std::uint64_t seed, ModelKind kind, int J, int K,
                                              int hidden, bool use_previous) {
    FunctionalProblem p;
    p.grid = small_grid(J, K);
    p.shape.kind = kind;
    p.shape.points = J + 1;
    p.shape.hidden_width = hidden;
    p.shape.hidden_layers = 3;
    p.shape.use_previous = use_previous;
    p.seed = seed;
    p.sigma = 0.3;
    const PropagatorCache cache(p.grid);
    FunctionalTrajectory t;
    t.momentum = 0.0;
    t.phi0 = random_state(seed, p.grid);
    t.phi1 = step(t.phi0, RealVector::Zero(J + 1), cache);
    t.reference = random_density(seed, 2, K + 1, J + 1);
    p.trajectories.push_back(std::move(t));
    MlpParameters theta = init_params(seed, p.sigma, p.shape);
    return {std::move(p), std::move(theta)};
}

FdReport check_pointwise_gradient(const PointwiseInstance& inst, const FdOptions& options) {
    const auto& p = inst.problem;
    const PropagatorCache cache(p.grid);
    RealVector g;
    const RealVector x = flatten_vc(inst.vc);
    pointwise_objective(p, cache, x, g);
    auto f = [&](const RealVector& xv) {
        const CorrelationGrid vc = unflatten_vc(xv, p.grid);
        const TdksTrajectory traj = propagate_pointwise(p.phi0, vc, cache);
        return density_loss(traj, p.reference) + smoothness_penalty(vc, p.mu, p.grid).value;
    };
    return compare_with_fd(f, x, g, options);
}

FdReport check_functional_gradient(const FunctionalInstance& inst, const FdOptions& options) {
    const auto& p = inst.problem;
    const PropagatorCache cache(p.grid);
    RealVector g;
    functional_objective(p, cache, inst.theta.flat(), g);
    auto f = [&](const RealVector& xv) {
        const MlpParameters theta(p.shape, xv);
        double total = 0.0;
        for (const auto& t : p.trajectories) {
            total += density_loss(propagate_functional(t.phi0, t.phi1, theta, p.grid.K, cache),
                                  t.reference);
        }
        return total;
    };
    return compare_with_fd(f, inst.theta.flat(), g, options);
}

std::vector<GradcheckLine> run_gradcheck_suite(std::uint64_t seed) {
    std::vector<GradcheckLine> lines;
    lines.push_back({"pointwise J=8 K=3",
                     check_pointwise_gradient(random_pointwise_instance(seed)), 1e-6});
    for (ModelKind kind : {ModelKind::PhiMemory, ModelKind::DensityMemory}) {
        for (bool prev : {true, false}) {
            lines.push_back({fmt::format("functional {} J=8 K=5 H=8{}", to_string(kind),
                                         prev ? "" : " (no previous state)"),
                             check_functional_gradient(
                                 random_functional_instance(seed, kind, 8, 5, 8, prev)),
                             1e-5});
        }
    }
    return lines;
}

}  // namespace tdks
