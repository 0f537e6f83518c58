#pragma once

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tdks/adjoint.hpp"
#include "tdks/lbfgs.hpp"
#include "tdks/mlp.hpp"
#include "tdks/tdks_forward.hpp"

namespace tdks {

/// Fit V^C on every grid point and time step for one reference trajectory.
struct PointwiseProblem {
    GridSpec grid;        ///< coarse grid; grid.K + 1 frames
    RowMatrix reference;  ///< (K+1) x (J+1)
    ComplexVector phi0;
    double mu = 1e-5;
    double momentum = 0.0;

    void validate() const;
};

struct FunctionalTrajectory {
    double momentum = 0.0;
    ComplexVector phi0;
    ComplexVector phi1;
    RowMatrix reference;  ///< (K+1) x (J+1) on the problem grid
};

/// Fit theta on one or more trajectories that share a grid.
struct FunctionalProblem {
    GridSpec grid;
    std::vector<FunctionalTrajectory> trajectories;
    MlpShape shape;
    std::uint64_t seed = 0;
    double sigma = 0.01;

    void validate() const;
};

struct TrajectoryScore {
    double momentum = 0.0;
    std::string split;  ///< "train" or "test"
    int frames = 0;
    double loss = 0.0;
    double mse = 0.0;
};

struct EvalReport {
    std::vector<TrajectoryScore> entries;
    double overall_mse = 0.0;  ///< mean of entry MSEs

    /// Mean MSE over entries with the given split label; NaN when there are none.
    double split_mse(const std::string& split) const;
    nlohmann::json to_json() const;
};

/// Appends one entry, computing the MSE by the shared formula.
void add_score(EvalReport& report, double momentum, const std::string& split, double loss,
               const GridSpec& grid);

/// Loss plus penalty and its gradient for a flattened CorrelationGrid.
/// Returns +infinity when the propagation stops being finite.
double pointwise_objective(const PointwiseProblem& problem, const PropagatorCache& cache,
                           const RealVector& x, RealVector& g);

/// Sum of per-trajectory losses and gradients, reduced in trajectory order.
double functional_objective(const FunctionalProblem& problem, const PropagatorCache& cache,
                            const RealVector& theta, RealVector& g);

CorrelationGrid unflatten_vc(const RealVector& x, const GridSpec& grid);
RealVector flatten_vc(const CorrelationGrid& vc);

struct TrainOptions {
    LbfgsOptions lbfgs;
    Observer observer;                     ///< per accepted iteration
    const LbfgsState* resume = nullptr;    ///< continue an interrupted run
    RealVector initial;                    ///< warm start; empty for the default start
    /// Called after every objective evaluation with (f, gradient).
    std::function<void(double, const RealVector&)> on_evaluation;
};

struct PointwiseResult {
    CorrelationGrid vc;
    double baseline_mse = 0.0;  ///< V^C = 0
    EvalReport report;
    LbfgsResult optimization;
};

/// Starts from V^C = 0 unless resuming.
PointwiseResult train_pointwise(const PointwiseProblem& problem, const TrainOptions& options);

struct FunctionalResult {
    MlpParameters theta;
    double baseline_mse = 0.0;  ///< mean over trajectories with v^C = 0
    EvalReport report;
    LbfgsResult optimization;
};

/// Starts from init_params(seed, sigma, shape) unless resuming.
FunctionalResult train_functional(const FunctionalProblem& problem, const TrainOptions& options);

/// phi_0, phi_1 then the learned dynamics up to frame K.
TdksTrajectory rollout_functional(const MlpParameters& theta, const ComplexVector& phi0,
                                  const ComplexVector& phi1, int K,
                                  const PropagatorCache& cache);

/// Continues a rollout from its last two stored states for `extra` more steps.
TdksTrajectory continue_rollout(const MlpParameters& theta, const TdksTrajectory& traj,
                                int extra, const PropagatorCache& cache);

struct ScoredTrajectory {
    std::string split;
    FunctionalTrajectory data;  ///< reference rows must cover the rollout
};

/// Rollouts scored against their references over the full reference length.
EvalReport score_functional(const MlpParameters& theta,
                            const std::vector<ScoredTrajectory>& set,
                            const PropagatorCache& cache);

/// MSE of the V^C = 0 propagation against one reference, for baselines.
double zero_correlation_mse(const ComplexVector& phi0, const RowMatrix& reference,
                            const PropagatorCache& cache);

}  // namespace tdks
