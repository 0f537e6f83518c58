#include "tdks/lbfgs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <fmt/format.h>

namespace tdks {

void LbfgsOptions::validate() const {
    if (memory < 1) throw std::invalid_argument("lbfgs: memory must be at least 1");
    if (!(c1 > 0.0 && c1 < c2 && c2 < 1.0)) {
        throw std::invalid_argument("lbfgs: need 0 < c1 < c2 < 1");
    }
    if (max_iter < 0) throw std::invalid_argument("lbfgs: max_iter must be non-negative");
    if (max_line_search_evals < 1) {
        throw std::invalid_argument("lbfgs: max_line_search_evals must be positive");
    }
}

std::string to_string(Termination t) {
    switch (t) {
        case Termination::GradientTolerance: return "gradient_tolerance";
        case Termination::RelativeDecrease: return "relative_decrease";
        case Termination::MaxIterations: return "max_iterations";
        case Termination::LineSearchFailure: return "line_search_failure";
        case Termination::NonFinite: return "non_finite";
        case Termination::Stopped: return "stopped";
    }
    return "unknown";
}

namespace {

double inf_norm(const RealVector& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

bool finite(double v) { return std::isfinite(v); }

bool all_finite(const RealVector& v) { return v.allFinite(); }

RealVector two_loop(const LbfgsState& st) {
    const std::size_t m = st.s.size();
    RealVector q = st.g;
    std::vector<double> alpha(m), rho(m);
    for (std::size_t i = m; i-- > 0;) {
        rho[i] = 1.0 / st.y[i].dot(st.s[i]);
        alpha[i] = rho[i] * st.s[i].dot(q);
        q -= alpha[i] * st.y[i];
    }
    if (m > 0) q *= st.s[m - 1].dot(st.y[m - 1]) / st.y[m - 1].squaredNorm();
    for (std::size_t i = 0; i < m; ++i) {
        const double beta = rho[i] * st.y[i].dot(q);
        q += (alpha[i] - beta) * st.s[i];
    }
    return -q;
}

// Minimizer of the cubic through (a, fa, ga), (b, fb, gb); NaN when it does not exist.
double cubic_min(double a, double fa, double ga, double b, double fb, double gb) {
    const double d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
    const double disc = d1 * d1 - ga * gb;
    if (!(disc >= 0.0)) return std::numeric_limits<double>::quiet_NaN();
    const double d2 = std::copysign(std::sqrt(disc), b - a);
    const double denom = gb - ga + 2.0 * d2;
    if (denom == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return b - (b - a) * (gb + d2 - d1) / denom;
}

struct Trial {
    double alpha = 0.0;
    double f = 0.0;
    double dphi = 0.0;
    RealVector g;
};

struct LineSearch {
    const Objective& objective;
    const LbfgsOptions& opt;
    const RealVector& x;
    const RealVector& d;
    double f0;
    double dphi0;
    int evals = 0;

    bool eval(double alpha, Trial& t) {
        ++evals;
        t.alpha = alpha;
        t.g.resize(x.size());
        const RealVector xt = x + alpha * d;
        t.f = objective(xt, t.g);
        if (!finite(t.f) || !all_finite(t.g)) {
            t.f = std::numeric_limits<double>::infinity();
            t.dphi = std::numeric_limits<double>::quiet_NaN();
            return false;
        }
        t.dphi = t.g.dot(d);
        return true;
    }

    bool armijo(const Trial& t) const { return t.f <= f0 + opt.c1 * t.alpha * dphi0; }
    bool curvature(const Trial& t) const { return std::abs(t.dphi) <= -opt.c2 * dphi0; }

    // Returns true with `out` set to an accepted point.
    bool zoom(Trial lo, Trial hi, Trial& out) {
        while (evals < opt.max_line_search_evals) {
            double a = std::numeric_limits<double>::quiet_NaN();
            if (finite(hi.f) && finite(hi.dphi)) {
                a = cubic_min(lo.alpha, lo.f, lo.dphi, hi.alpha, hi.f, hi.dphi);
            }
            const double width = hi.alpha - lo.alpha;
            const double low = lo.alpha + 0.1 * width;
            const double high = hi.alpha - 0.1 * width;
            const bool inside = width > 0 ? (a >= low && a <= high) : (a <= low && a >= high);
            if (!finite(a) || !inside) a = lo.alpha + 0.5 * width;

            Trial t;
            eval(a, t);
            if (!finite(t.f) || !armijo(t) || t.f >= lo.f) {
                hi = std::move(t);
            } else {
                if (curvature(t)) {
                    out = std::move(t);
                    return true;
                }
                if (t.dphi * (hi.alpha - lo.alpha) >= 0.0) hi = lo;
                lo = std::move(t);
            }
            if (std::abs(hi.alpha - lo.alpha) <= 1e-16 * std::max(1.0, std::abs(lo.alpha))) break;
        }
        // Budget spent: fall back to the best sufficient-decrease point, if any.
        if (lo.alpha > 0.0) {
            out = std::move(lo);
            return true;
        }
        return false;
    }

    bool run(double alpha0, Trial& out) {
        Trial prev;
        prev.alpha = 0.0;
        prev.f = f0;
        prev.dphi = dphi0;
        double alpha = alpha0;
        for (int i = 1; evals < opt.max_line_search_evals; ++i) {
            Trial t;
            if (!eval(alpha, t)) {
                // Diverged trial: shrink toward the last good point.
                alpha = prev.alpha + 0.5 * (alpha - prev.alpha);
                continue;
            }
            if (!armijo(t) || (i > 1 && t.f >= prev.f)) return zoom(std::move(prev), std::move(t), out);
            if (curvature(t)) {
                out = std::move(t);
                return true;
            }
            if (t.dphi >= 0.0) return zoom(std::move(t), std::move(prev), out);
            prev = std::move(t);
            alpha *= 2.0;
        }
        if (prev.alpha > 0.0) {
            out = std::move(prev);
            return true;
        }
        return false;
    }
};

}  // namespace

LbfgsResult minimize(const Objective& objective, const RealVector& x0,
                     const LbfgsOptions& options, const Observer& observer,
                     const LbfgsState* resume) {
    options.validate();
    LbfgsResult result;
    LbfgsState& st = result.state;
    if (resume) {
        st = *resume;
    } else {
        if (!all_finite(x0)) throw std::invalid_argument("lbfgs: x0 is not finite");
        st.x = x0;
        st.g.resize(x0.size());
        st.f = objective(st.x, st.g);
        st.evals = 1;
        st.iter = 0;
    }
    if (!finite(st.f) || !all_finite(st.g)) {
        result.reason = Termination::NonFinite;
        result.message = "objective or gradient is not finite at the starting point";
        return result;
    }
    result.trace.records.push_back({st.iter, st.f, inf_norm(st.g), 0.0, st.evals});

    if (inf_norm(st.g) <= options.grad_tol) {
        result.reason = Termination::GradientTolerance;
        result.message = "gradient below tolerance at the starting point";
        return result;
    }

    bool reset_once = false;
    while (true) {
        if (st.iter >= options.max_iter) {
            result.reason = Termination::MaxIterations;
            result.message = fmt::format("reached {} iterations", options.max_iter);
            return result;
        }
        RealVector d = two_loop(st);
        double dphi0 = st.g.dot(d);
        if (!(dphi0 < 0.0) || !all_finite(d)) {
            st.s.clear();
            st.y.clear();
            d = -st.g;
            dphi0 = st.g.dot(d);
        }
        const double alpha0 = st.s.empty() ? 1.0 / inf_norm(st.g) : 1.0;

        LineSearch ls{objective, options, st.x, d, st.f, dphi0};
        Trial accepted;
        const bool ok = ls.run(alpha0, accepted);
        st.evals += ls.evals;
        if (!ok) {
            if (!st.s.empty() && !reset_once) {
                st.s.clear();
                st.y.clear();
                reset_once = true;
                continue;
            }
            result.reason = Termination::LineSearchFailure;
            result.message = "line search found no acceptable step along steepest descent";
            return result;
        }
        reset_once = false;

        RealVector s = accepted.alpha * d;
        RealVector y = accepted.g - st.g;
        const double f_old = st.f;
        st.x += s;
        st.f = accepted.f;
        st.g = std::move(accepted.g);
        ++st.iter;
        const double sy = s.dot(y);
        if (sy > 1e-10 * s.norm() * y.norm()) {
            st.s.push_back(std::move(s));
            st.y.push_back(std::move(y));
            if (static_cast<int>(st.s.size()) > options.memory) {
                st.s.erase(st.s.begin());
                st.y.erase(st.y.begin());
            }
        }

        const IterationRecord rec{st.iter, st.f, inf_norm(st.g), accepted.alpha, st.evals};
        result.trace.records.push_back(rec);
        if (observer && !observer(st, rec)) {
            result.reason = Termination::Stopped;
            result.message = "stopped by observer";
            return result;
        }
        if (rec.grad_inf <= options.grad_tol) {
            result.reason = Termination::GradientTolerance;
            result.message = fmt::format("gradient max-norm {:.3e} <= {:.3e}", rec.grad_inf,
                                         options.grad_tol);
            return result;
        }
        const double scale = std::max({std::abs(f_old), std::abs(st.f), std::numeric_limits<double>::min()});
        if ((f_old - st.f) / scale <= options.rel_f_tol) {
            result.reason = Termination::RelativeDecrease;
            result.message = fmt::format("relative decrease {:.3e} <= {:.3e}",
                                         (f_old - st.f) / scale, options.rel_f_tol);
            return result;
        }
    }
}

}  // namespace tdks
