#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tdks/grid.hpp"

namespace tdks {

struct LbfgsOptions {
    int memory = 10;
    double grad_tol = 1e-6;  ///< on the max-norm of the gradient
    double rel_f_tol = 2.22e-9;
    int max_iter = 500;
    double c1 = 1e-4;
    double c2 = 0.9;
    int max_line_search_evals = 20;

    void validate() const;
};

struct IterationRecord {
    int iter = 0;
    double f = 0.0;
    double grad_inf = 0.0;
    double step = 0.0;
    int evals = 0;  ///< cumulative objective evaluations
};

struct OptimTrace {
    std::vector<IterationRecord> records;
};

enum class Termination {
    GradientTolerance,
    RelativeDecrease,
    MaxIterations,
    LineSearchFailure,
    NonFinite,
    Stopped,  ///< observer asked to stop
};

std::string to_string(Termination t);

/// Everything needed to continue a run exactly where it stopped.
struct LbfgsState {
    RealVector x;
    double f = 0.0;
    RealVector g;
    std::vector<RealVector> s;  ///< oldest first
    std::vector<RealVector> y;
    int iter = 0;
    int evals = 0;
};

/// f(x), writing the gradient into g. Non-finite values make a trial step fail.
using Objective = std::function<double(const RealVector& x, RealVector& g)>;

/// Called after every accepted iteration; returning false stops the run.
using Observer = std::function<bool(const LbfgsState&, const IterationRecord&)>;

struct LbfgsResult {
    LbfgsState state;
    OptimTrace trace;
    Termination reason = Termination::MaxIterations;
    std::string message;

    const RealVector& x() const { return state.x; }
    double f() const { return state.f; }
};

/**
 * Unconstrained L-BFGS with a strong-Wolfe line search. When `resume` is
 * given the run continues from that state without re-evaluating it;
 * options.max_iter counts total iterations including those already done.
 */
LbfgsResult minimize(const Objective& objective, const RealVector& x0,
                     const LbfgsOptions& options, const Observer& observer = {},
                     const LbfgsState* resume = nullptr);

}  // namespace tdks
