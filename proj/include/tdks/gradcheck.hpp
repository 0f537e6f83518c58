#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tdks/mlp.hpp"
#include "tdks/trainer.hpp"

namespace tdks {

struct FdOptions {
    std::vector<double> steps{1e-4, 1e-5, 1e-6};
    /// Entries smaller than this fraction of ||grad||_inf are compared against it instead.
    double floor_fraction = 1e-3;
};

struct FdReport {
    Eigen::Index entries = 0;
    double max_rel_error = 0.0;
    Eigen::Index worst = -1;
    double analytic_at_worst = 0.0;
    double fd_at_worst = 0.0;
    double best_step_at_worst = 0.0;
};

/**
 * Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every entry and
 * every h; each entry keeps its smallest error over the h sweep.
 */
FdReport compare_with_fd(const std::function<double(const RealVector&)>& f,
                         const RealVector& x, const RealVector& grad, const FdOptions& options);

/// Small random pointwise problem with a random V^C at which to differentiate.
struct PointwiseInstance {
    PointwiseProblem problem;
    CorrelationGrid vc;
};

PointwiseInstance random_pointwise_instance(std::uint64_t seed, int J = 8, int K = 3,
                                            double mu = 1e-5);

struct FunctionalInstance {
    FunctionalProblem problem;
    MlpParameters theta;
};

FunctionalInstance random_functional_instance(std::uint64_t seed, ModelKind kind, int J = 8,
                                              int K = 5, int hidden = 8, bool use_previous = true);

/// Random normalized KS state whose density integrates to 2.
ComplexVector random_state(std::uint64_t seed, const GridSpec& grid);

FdReport check_pointwise_gradient(const PointwiseInstance& inst, const FdOptions& options = {});
FdReport check_functional_gradient(const FunctionalInstance& inst, const FdOptions& options = {});

struct GradcheckLine {
    std::string name;
    FdReport report;
    double tolerance = 0.0;
    bool pass() const { return report.max_rel_error < tolerance; }
};

/// The FD-oracle suites run by the `gradcheck` command.
std::vector<GradcheckLine> run_gradcheck_suite(std::uint64_t seed = 1);

}  // namespace tdks
