#include "tdks/grid.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace tdks {

RealVector GridSpec::positions() const {
    RealVector xs(points());
    for (int j = 0; j <= J; ++j) xs[j] = x(j);
    return xs;
}

GridSpec build_grid(double l_min, double l_max, int J, double T, int K) {
    if (!(l_max > l_min)) {
        throw std::invalid_argument("grid: l_max must exceed l_min");
    }
    if (J < 4) {
        throw std::invalid_argument("grid: J must be at least 4 for the five-point stencil");
    }
    if (J % 2 != 0) {
        throw std::invalid_argument("grid: J = " + std::to_string(J) +
                                    " is odd; composite Simpson quadrature needs an even "
                                    "number of intervals");
    }
    if (K < 1) throw std::invalid_argument("grid: K must be at least 1");
    if (!(T > 0.0)) throw std::invalid_argument("grid: T must be positive");

    GridSpec g;
    g.l_min = l_min;
    g.l_max = l_max;
    g.J = J;
    g.dx = (l_max - l_min) / J;
    g.T = T;
    g.K = K;
    g.dt = T / K;
    return g;
}

GridSpec with_time_axis(const GridSpec& grid, double dt, int K) {
    return build_grid(grid.l_min, grid.l_max, grid.J, dt * K, K);
}

RealVector external_potential(const GridSpec& grid) {
    RealVector v(grid.points());
    for (int j = 0; j <= grid.J; ++j) {
        const double s = grid.x(j) + 10.0;
        v[j] = -1.0 / std::sqrt(s * s + 1.0);
    }
    return v;
}

BandedLaplacian::BandedLaplacian(const GridSpec& grid) : n_(grid.points()) {
    if (grid.J < 4) throw std::invalid_argument("laplacian4: J must be at least 4");
    const double s = 1.0 / (12.0 * grid.dx * grid.dx);
    c0_ = -30.0 * s;
    c1_ = 16.0 * s;
    c2_ = -1.0 * s;
}

double BandedLaplacian::coefficient(int i, int j) const {
    switch (std::abs(i - j)) {
        case 0: return c0_;
        case 1: return c1_;
        case 2: return c2_;
        default: return 0.0;
    }
}

Eigen::MatrixXd BandedLaplacian::dense() const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n_, n_);
    for (int i = 0; i < n_; ++i) {
        for (int j = std::max(0, i - 2); j <= std::min(n_ - 1, i + 2); ++j) {
            m(i, j) = coefficient(i, j);
        }
    }
    return m;
}

RealVector BandedLaplacian::apply(const RealVector& f) const {
    RealVector out(n_);
    apply<double>(std::span<const double>(f.data(), n_), std::span<double>(out.data(), n_));
    return out;
}

ComplexVector BandedLaplacian::apply(const ComplexVector& f) const {
    ComplexVector out(n_);
    apply<std::complex<double>>(std::span<const std::complex<double>>(f.data(), n_),
                                std::span<std::complex<double>>(out.data(), n_));
    return out;
}

BandedLaplacian laplacian4(const GridSpec& grid) { return BandedLaplacian(grid); }

RealVector simpson_weights(const GridSpec& grid) {
    if (grid.J % 2 != 0 || grid.J < 2) {
        throw std::invalid_argument("simpson_weights: composite Simpson rule needs an even J");
    }
    RealVector w(grid.points());
    const double h = grid.dx / 3.0;
    for (int j = 0; j <= grid.J; ++j) {
        if (j == 0 || j == grid.J) {
            w[j] = h;
        } else {
            w[j] = (j % 2 == 1 ? 4.0 : 2.0) * h;
        }
    }
    return w;
}

Eigen::MatrixXd interaction_matrix(const GridSpec& grid) {
    const int n = grid.points();
    Eigen::MatrixXd W(n, n);
    for (int i = 0; i < n; ++i) {
        W(i, i) = grid.dx;
        for (int j = i + 1; j < n; ++j) {
            const double d = (j - i) * grid.dx;
            const double value = grid.dx / std::sqrt(d * d + 1.0);
            W(i, j) = value;
            W(j, i) = value;
        }
    }
    return W;
}

double integrate(const GridSpec& grid, const RealVector& f) {
    return simpson_weights(grid).dot(f);
}

}  // namespace tdks
