#include "tdks/trainer.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include <fmt/format.h>

namespace tdks {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_reference(const RowMatrix& ref, const GridSpec& grid, const char* what) {
    if (ref.rows() != grid.frames() || ref.cols() != grid.points()) {
        throw std::invalid_argument(fmt::format("{}: reference is {}x{}, expected {}x{}", what,
                                                ref.rows(), ref.cols(), grid.frames(),
                                                grid.points()));
    }
}

}  // namespace

void PointwiseProblem::validate() const {
    check_reference(reference, grid, "pointwise problem");
    if (phi0.size() != grid.points()) throw std::invalid_argument("pointwise problem: phi0 length");
    if (grid.K < 1) throw std::invalid_argument("pointwise problem: need K >= 1");
    if (mu < 0.0) throw std::invalid_argument("pointwise problem: mu must be non-negative");
}

void FunctionalProblem::validate() const {
    if (trajectories.empty()) throw std::invalid_argument("functional problem: no trajectories");
    if (grid.K < 2) throw std::invalid_argument("functional problem: need K >= 2");
    if (shape.points != grid.points()) {
        throw std::invalid_argument("functional problem: model width does not match the grid");
    }
    for (const auto& t : trajectories) {
        check_reference(t.reference, grid, "functional problem");
        if (t.phi0.size() != grid.points() || t.phi1.size() != grid.points()) {
            throw std::invalid_argument(
                fmt::format("functional problem: KS pair for p = {} has the wrong length",
                            t.momentum));
        }
    }
}

double EvalReport::split_mse(const std::string& split) const {
    double sum = 0.0;
    int n = 0;
    for (const auto& e : entries) {
        if (e.split == split) {
            sum += e.mse;
            ++n;
        }
    }
    return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& e : entries) {
        list.push_back({{"momentum", e.momentum},
                        {"split", e.split},
                        {"frames", e.frames},
                        {"loss", e.loss},
                        {"mse", e.mse}});
    }
    nlohmann::json j = {{"trajectories", list}, {"overall_mse", overall_mse}};
    for (const char* s : {"train", "test"}) {
        const double m = split_mse(s);
        if (!std::isnan(m)) j[std::string(s) + "_mse"] = m;
    }
    return j;
}

void add_score(EvalReport& report, double momentum, const std::string& split, double loss,
               const GridSpec& grid) {
    report.entries.push_back({momentum, split, grid.frames(), loss, mse_from_loss(loss, grid)});
    double sum = 0.0;
    for (const auto& e : report.entries) sum += e.mse;
    report.overall_mse = sum / report.entries.size();
}

CorrelationGrid unflatten_vc(const RealVector& x, const GridSpec& grid) {
    if (x.size() != static_cast<Eigen::Index>(grid.frames()) * grid.points()) {
        throw std::invalid_argument("unflatten_vc: length does not match the grid");
    }
    return Eigen::Map<const RowMatrix>(x.data(), grid.frames(), grid.points());
}

RealVector flatten_vc(const CorrelationGrid& vc) {
    return Eigen::Map<const RealVector>(vc.data(), vc.size());
}

double pointwise_objective(const PointwiseProblem& problem, const PropagatorCache& cache,
                           const RealVector& x, RealVector& g) {
    const CorrelationGrid vc = unflatten_vc(x, problem.grid);
    try {
        const TdksTrajectory traj = propagate_pointwise(problem.phi0, vc, cache);
        GradientReport rep = pointwise_gradient(traj, problem.reference, vc, problem.mu, cache);
        g = flatten_vc(rep.grad_vc);
        return rep.objective;
    } catch (const NonFiniteError&) {
        g.setZero(x.size());
        return kInf;
    }
}

double functional_objective(const FunctionalProblem& problem, const PropagatorCache& cache,
                            const RealVector& theta_flat, RealVector& g) {
    const MlpParameters theta(problem.shape, theta_flat);
    const int n = static_cast<int>(problem.trajectories.size());
    std::vector<double> losses(n, 0.0);
    std::vector<RealVector> grads(n);
    std::vector<char> failed(n, 0);

#pragma omp parallel for schedule(static) if (n > 1)
    for (int i = 0; i < n; ++i) {
        const auto& t = problem.trajectories[i];
        try {
            const TdksTrajectory traj =
                propagate_functional(t.phi0, t.phi1, theta, problem.grid.K, cache);
            GradientReport rep = solve_adjoint_functional(traj, t.reference, theta, cache);
            losses[i] = rep.objective;
            grads[i] = std::move(rep.grad_theta);
        } catch (const NonFiniteError&) {
            failed[i] = 1;
        }
    }

    g.setZero(theta_flat.size());
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        if (failed[i]) {
            g.setZero(theta_flat.size());
            return kInf;
        }
        total += losses[i];
        g += grads[i];
    }
    return total;
}

double zero_correlation_mse(const ComplexVector& phi0, const RowMatrix& reference,
                            const PropagatorCache& cache) {
    const CorrelationGrid zero = CorrelationGrid::Zero(reference.rows(), reference.cols());
    return density_mse(propagate_pointwise(phi0, zero, cache), reference);
}

PointwiseResult train_pointwise(const PointwiseProblem& problem, const TrainOptions& options) {
    problem.validate();
    const PropagatorCache cache(problem.grid);

    PointwiseResult result;
    result.baseline_mse = zero_correlation_mse(problem.phi0, problem.reference, cache);

    const Eigen::Index n = static_cast<Eigen::Index>(problem.grid.frames()) * problem.grid.points();
    const RealVector x0 = options.initial.size() ? options.initial : RealVector::Zero(n);
    if (x0.size() != n) throw std::invalid_argument("train_pointwise: initial point has the wrong length");
    auto objective = [&](const RealVector& x, RealVector& g) {
        const double f = pointwise_objective(problem, cache, x, g);
        if (options.on_evaluation) options.on_evaluation(f, g);
        return f;
    };
    result.optimization = minimize(objective, x0, options.lbfgs, options.observer, options.resume);
    result.vc = unflatten_vc(result.optimization.x(), problem.grid);

    const TdksTrajectory traj = propagate_pointwise(problem.phi0, result.vc, cache);
    add_score(result.report, problem.momentum, "train", density_loss(traj, problem.reference),
              problem.grid);
    return result;
}

FunctionalResult train_functional(const FunctionalProblem& problem, const TrainOptions& options) {
    problem.validate();
    const PropagatorCache cache(problem.grid);

    const MlpParameters zero = MlpParameters::zeros(problem.shape);
    const MlpParameters init = init_params(problem.seed, problem.sigma, problem.shape);

    double baseline = 0.0;
    for (const auto& t : problem.trajectories) {
        const TdksTrajectory traj = propagate_functional(t.phi0, t.phi1, zero, problem.grid.K, cache);
        baseline += density_mse(traj, t.reference);
    }

    auto objective = [&](const RealVector& x, RealVector& g) {
        const double f = functional_objective(problem, cache, x, g);
        if (options.on_evaluation) options.on_evaluation(f, g);
        return f;
    };
    if (options.initial.size() && options.initial.size() != init.size()) {
        throw std::invalid_argument("train_functional: initial point has the wrong length");
    }
    const RealVector& x0 = options.initial.size() ? options.initial : init.flat();
    LbfgsResult opt = minimize(objective, x0, options.lbfgs, options.observer,
                               options.resume);

    FunctionalResult result{MlpParameters(problem.shape, opt.x()), 0.0, {}, {}};
    result.baseline_mse = baseline / problem.trajectories.size();
    std::vector<ScoredTrajectory> set;
    for (const auto& t : problem.trajectories) set.push_back({"train", t});
    result.report = score_functional(result.theta, set, cache);
    result.optimization = std::move(opt);
    return result;
}

TdksTrajectory rollout_functional(const MlpParameters& theta, const ComplexVector& phi0,
                                  const ComplexVector& phi1, int K,
                                  const PropagatorCache& cache) {
    return propagate_functional(phi0, phi1, theta, K, cache);
}

TdksTrajectory continue_rollout(const MlpParameters& theta, const TdksTrajectory& traj,
                                int extra, const PropagatorCache& cache) {
    if (extra < 0) throw std::invalid_argument("continue_rollout: extra must be non-negative");
    const int K = traj.frames() - 1;
    if (K < 1) throw std::invalid_argument("continue_rollout: need at least two stored states");
    if (extra == 0) return traj;
    const TdksTrajectory tail =
        propagate_functional(traj.state(K - 1), traj.state(K), theta, extra + 1, cache);

    TdksTrajectory out;
    out.grid = traj.grid;
    out.grid.K = K + extra;
    out.grid.T = out.grid.K * out.grid.dt;
    out.states.resize(K + extra + 1, traj.states.cols());
    out.states.topRows(K + 1) = traj.states;
    out.states.bottomRows(extra) = tail.states.bottomRows(extra);
    out.correlation = RowMatrix::Zero(K + extra + 1, traj.states.cols());
    out.correlation.topRows(K) = traj.correlation.topRows(K);
    out.correlation.middleRows(K, extra) = tail.correlation.middleRows(1, extra);
    out.provenance = traj.provenance;
    return out;
}

EvalReport score_functional(const MlpParameters& theta,
                            const std::vector<ScoredTrajectory>& set,
                            const PropagatorCache& cache) {
    EvalReport report;
    for (const auto& item : set) {
        const auto& t = item.data;
        const int K = static_cast<int>(t.reference.rows()) - 1;
        const TdksTrajectory traj = rollout_functional(theta, t.phi0, t.phi1, K, cache);
        add_score(report, t.momentum, item.split, density_loss(traj, t.reference), traj.grid);
    }
    return report;
}

}  // namespace tdks
