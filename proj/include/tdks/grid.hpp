#pragma once

#include <complex>
#include <span>

#include <Eigen/Dense>

namespace tdks {

using RealVector = Eigen::VectorXd;
using ComplexVector = Eigen::VectorXcd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Femtoseconds per atomic unit of time.
inline constexpr double kFsPerAu = 0.02418884254;

inline constexpr double fs_to_au(double fs) { return fs / kFsPerAu; }
inline constexpr double au_to_fs(double au) { return au * kFsPerAu; }

/**
 * Uniform space-time grid.
 *
 * Spatial points x_j = l_min + j*dx for j = 0..J, time points t_k = k*dt for
 * k = 0..K. J is always even so composite Simpson quadrature applies.
 */
struct GridSpec {
    double l_min = 0.0;
    double l_max = 0.0;
    int J = 0;
    double dx = 0.0;
    double T = 0.0;
    int K = 0;
    double dt = 0.0;

    int points() const { return J + 1; }
    int frames() const { return K + 1; }
    double x(int j) const { return l_min + j * dx; }
    double t(int k) const { return k * dt; }
    RealVector positions() const;

    bool operator==(const GridSpec&) const = default;
};

/// Validates the extents and derives dx, dt. Throws std::invalid_argument.
GridSpec build_grid(double l_min, double l_max, int J, double T, int K);

/// Same spatial grid with a different time axis.
GridSpec with_time_axis(const GridSpec& grid, double dt, int K);

/// -((x_j + 10)^2 + 1)^{-1/2}
RealVector external_potential(const GridSpec& grid);

/**
 * Fourth-order five-point Laplacian with the stencil truncated at the edges
 * (no ghost points). Interior rows are [-1, 16, -30, 16, -1] / (12 dx^2).
 */
class BandedLaplacian {
public:
    explicit BandedLaplacian(const GridSpec& grid);

    int size() const { return n_; }
    double diagonal() const { return c0_; }
    double first_band() const { return c1_; }
    double second_band() const { return c2_; }

    /// Matrix entry (i, j); zero outside the five bands.
    double coefficient(int i, int j) const;
    Eigen::MatrixXd dense() const;

    template <typename T>
    void apply(std::span<const T> in, std::span<T> out) const {
        const int n = n_;
        for (int j = 0; j < n; ++j) {
            T acc = c0_ * in[j];
            if (j >= 1) acc += c1_ * in[j - 1];
            if (j + 1 < n) acc += c1_ * in[j + 1];
            if (j >= 2) acc += c2_ * in[j - 2];
            if (j + 2 < n) acc += c2_ * in[j + 2];
            out[j] = acc;
        }
    }

    RealVector apply(const RealVector& f) const;
    ComplexVector apply(const ComplexVector& f) const;

private:
    int n_;
    double c0_, c1_, c2_;
};

BandedLaplacian laplacian4(const GridSpec& grid);

/// Composite Simpson weights (dx/3)*[1,4,2,...,4,1]. Throws on odd J.
RealVector simpson_weights(const GridSpec& grid);

/// Fourth-order central first derivative [1,-8,0,8,-1]/(12 dx), truncated at the edges.
template <typename T>
void first_derivative4(std::span<const T> in, std::span<T> out, double dx) {
    const int n = static_cast<int>(in.size());
    const double s = 1.0 / (12.0 * dx);
    for (int j = 0; j < n; ++j) {
        T acc{};
        if (j >= 2) acc += in[j - 2];
        if (j >= 1) acc -= 8.0 * in[j - 1];
        if (j + 1 < n) acc += 8.0 * in[j + 1];
        if (j + 2 < n) acc -= in[j + 2];
        out[j] = s * acc;
    }
}

/// W_{j,j'} = ((x_{j'} - x_j)^2 + 1)^{-1/2} * dx. The dx factor lives here.
Eigen::MatrixXd interaction_matrix(const GridSpec& grid);

/// Simpson integral of samples f on the grid.
double integrate(const GridSpec& grid, const RealVector& f);

}  // namespace tdks
