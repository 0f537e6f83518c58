#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "tdks/trainer.hpp"

using namespace tdks;

namespace {

GridSpec small_grid(int K = 10) { return build_grid(-8.0, 8.0, 16, 0.1 * K, K); }

ComplexVector packet(const GridSpec& g, double center, double p) {
    ComplexVector phi(g.points());
    for (int j = 0; j <= g.J; ++j) {
        const double x = g.x(j) - center;
        phi[j] = std::exp(-x * x / 3.0) * std::polar(1.0, p * g.x(j));
    }
    return phi / ks_norm(phi, g);
}

CorrelationGrid true_vc(const GridSpec& g) {
    CorrelationGrid vc(g.frames(), g.points());
    for (int k = 0; k < g.frames(); ++k) {
        for (int j = 0; j < g.points(); ++j) vc(k, j) = 0.4 * std::sin(0.3 * g.x(j) + 0.1 * k);
    }
    return vc;
}

PointwiseProblem pointwise_problem(double mu) {
    PointwiseProblem pb;
    pb.grid = small_grid();
    pb.phi0 = packet(pb.grid, -1.0, 0.5);
    pb.reference = densities(propagate_pointwise(pb.phi0, true_vc(pb.grid), PropagatorCache(pb.grid)));
    pb.mu = mu;
    pb.momentum = 0.5;
    return pb;
}

FunctionalTrajectory functional_data(const GridSpec& g, double center, double p) {
    const PropagatorCache cache(g);
    FunctionalTrajectory t;
    t.momentum = p;
    t.phi0 = packet(g, center, p);
    const TdksTrajectory traj = propagate_pointwise(t.phi0, true_vc(g), cache);
    t.phi1 = traj.state(1);
    t.reference = densities(traj);
    return t;
}

FunctionalProblem functional_problem(int n_traj) {
    FunctionalProblem pb;
    pb.grid = small_grid(8);
    pb.shape = MlpShape{ModelKind::DensityMemory, pb.grid.points(), 8, 2, true};
    pb.seed = 3;
    pb.sigma = 0.05;
    const double centers[] = {-1.0, 0.5, 1.5};
    const double momenta[] = {0.5, -0.4, 0.2};
    for (int i = 0; i < n_traj; ++i) pb.trajectories.push_back(functional_data(pb.grid, centers[i], momenta[i]));
    return pb;
}

bool monotone(const OptimTrace& t) {
    for (std::size_t i = 1; i < t.records.size(); ++i) {
        if (t.records[i].f > t.records[i - 1].f) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("pointwise training recovers the reference densities") {
    const PointwiseProblem pb = pointwise_problem(0.0);
    TrainOptions opt;
    opt.lbfgs.grad_tol = 1e-14;
    opt.lbfgs.max_iter = 200;
    const PointwiseResult r = train_pointwise(pb, opt);
    REQUIRE(r.report.entries.size() == 1);
    const double mse = r.report.entries[0].mse;
    CHECK(r.baseline_mse > 0.0);
    CHECK(mse < 1e-3 * r.baseline_mse);
    CHECK(monotone(r.optimization.trace));

    const PropagatorCache cache(pb.grid);
    const TdksTrajectory again = propagate_pointwise(pb.phi0, r.vc, cache);
    CHECK(density_mse(again, pb.reference) == mse);
    CHECK(r.report.overall_mse == mse);
    CHECK(r.report.split_mse("train") == mse);
    CHECK(std::isnan(r.report.split_mse("test")));
}

TEST_CASE("smoothness penalty gives a smoother fitted potential") {
    TrainOptions opt;
    opt.lbfgs.grad_tol = 1e-14;
    opt.lbfgs.max_iter = 60;
    const PointwiseProblem rough = pointwise_problem(0.0);
    const PointwiseProblem smooth = pointwise_problem(1e-3);
    const double e0 = smoothness_penalty(train_pointwise(rough, opt).vc, 1.0, rough.grid).value;
    const double e1 = smoothness_penalty(train_pointwise(smooth, opt).vc, 1.0, smooth.grid).value;
    CHECK(e1 < e0);
}

TEST_CASE("pointwise objective is infinite when propagation fails") {
    const PointwiseProblem pb = pointwise_problem(0.0);
    const PropagatorCache cache(pb.grid);
    RealVector x = RealVector::Zero(pb.grid.frames() * pb.grid.points());
    x[5] = std::numeric_limits<double>::quiet_NaN();
    RealVector g;
    CHECK(std::isinf(pointwise_objective(pb, cache, x, g)));
    CHECK(g.size() == x.size());
    CHECK(g.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("vc flattening round trip") {
    const GridSpec g = small_grid();
    const CorrelationGrid vc = true_vc(g);
    CHECK(unflatten_vc(flatten_vc(vc), g) == vc);
    CHECK(flatten_vc(vc)[g.points() + 2] == vc(1, 2));
    CHECK_THROWS(unflatten_vc(RealVector::Zero(3), g));
}

TEST_CASE("functional objective sums trajectories in order") {
    const FunctionalProblem both = functional_problem(2);
    const PropagatorCache cache(both.grid);
    const RealVector theta = init_params(both.seed, both.sigma, both.shape).flat();
    RealVector g, g0, g1;
    const double f = functional_objective(both, cache, theta, g);

    FunctionalProblem a = both, b = both;
    a.trajectories.resize(1);
    b.trajectories.erase(b.trajectories.begin());
    const double f0 = functional_objective(a, cache, theta, g0);
    const double f1 = functional_objective(b, cache, theta, g1);
    CHECK(f == f0 + f1);
    CHECK(g == g0 + g1);
}

TEST_CASE("functional training improves the fit and rollouts reproduce it") {
    const FunctionalProblem pb = functional_problem(2);
    TrainOptions opt;
    opt.lbfgs.grad_tol = 1e-14;
    opt.lbfgs.max_iter = 40;
    int evaluations = 0;
    opt.on_evaluation = [&](double, const RealVector&) { ++evaluations; };
    const FunctionalResult r = train_functional(pb, opt);
    CHECK(evaluations == r.optimization.state.evals);
    CHECK(monotone(r.optimization.trace));
    CHECK(r.report.overall_mse < r.baseline_mse);
    REQUIRE(r.report.entries.size() == 2);

    const PropagatorCache cache(pb.grid);
    for (int i = 0; i < 2; ++i) {
        const auto& t = pb.trajectories[i];
        const TdksTrajectory traj = rollout_functional(r.theta, t.phi0, t.phi1, pb.grid.K, cache);
        CHECK(density_mse(traj, t.reference) == r.report.entries[i].mse);
        CHECK(r.report.entries[i].split == "train");
        CHECK(r.report.entries[i].momentum == t.momentum);
    }

    // Resuming from a stopped run lands on the same parameters.
    TrainOptions stop = opt;
    stop.on_evaluation = nullptr;
    stop.observer = [](const LbfgsState& st, const IterationRecord&) { return st.iter < 5; };
    const FunctionalResult first = train_functional(pb, stop);
    REQUIRE(first.optimization.reason == Termination::Stopped);
    TrainOptions cont = opt;
    cont.on_evaluation = nullptr;
    cont.resume = &first.optimization.state;
    const FunctionalResult second = train_functional(pb, cont);
    CHECK(second.theta.flat() == r.theta.flat());
}

TEST_CASE("continuing a rollout equals a longer rollout") {
    const FunctionalProblem pb = functional_problem(1);
    const MlpParameters theta = init_params(9, 0.2, pb.shape);
    const PropagatorCache cache(pb.grid);
    const auto& t = pb.trajectories[0];
    const TdksTrajectory longer = rollout_functional(theta, t.phi0, t.phi1, 14, cache);
    const TdksTrajectory shorter = rollout_functional(theta, t.phi0, t.phi1, 8, cache);
    const TdksTrajectory joined = continue_rollout(theta, shorter, 6, cache);
    CHECK(joined.frames() == 15);
    CHECK(joined.states == longer.states);
    CHECK(joined.correlation == longer.correlation);
    CHECK(joined.grid.K == longer.grid.K);
    CHECK(continue_rollout(theta, shorter, 0, cache).states == shorter.states);
    CHECK_THROWS(continue_rollout(theta, shorter, -1, cache));
}

TEST_CASE("problem validation") {
    FunctionalProblem pb = functional_problem(1);
    pb.shape.points = 5;
    CHECK_THROWS(pb.validate());
    FunctionalProblem empty = functional_problem(1);
    empty.trajectories.clear();
    CHECK_THROWS(empty.validate());

    PointwiseProblem pw = pointwise_problem(0.0);
    pw.reference = pw.reference.topRows(3);
    CHECK_THROWS(pw.validate());
    PointwiseProblem neg = pointwise_problem(0.0);
    neg.mu = -1.0;
    CHECK_THROWS(neg.validate());
}

TEST_CASE("evaluation report") {
    const GridSpec g = small_grid();
    EvalReport rep;
    add_score(rep, -1.5, "train", 2.0, g);
    add_score(rep, -1.2, "test", 4.0, g);
    add_score(rep, -1.0, "test", 6.0, g);
    CHECK(rep.entries[1].mse == mse_from_loss(4.0, g));
    CHECK_THAT(rep.split_mse("test"), Catch::Matchers::WithinRel(mse_from_loss(5.0, g), 1e-15));
    CHECK_THAT(rep.overall_mse, Catch::Matchers::WithinRel(mse_from_loss(4.0, g), 1e-15));
    const auto j = rep.to_json();
    CHECK(j.at("trajectories").size() == 3);
    CHECK(j.contains("train_mse"));
    CHECK(j.contains("test_mse"));
}
