#pragma once

// Explicitly assembled Jacobians of one TDKS step, built entry by entry from
// the closed-form derivatives and independently of the library's step code.

#include <cmath>
#include <complex>

#include <Eigen/Dense>

#include "tdks/grid.hpp"

namespace oracle {

using cplx = std::complex<double>;

struct DenseStep {
    int n = 0;
    double dt = 0.0;
    Eigen::MatrixXcd P;  // exp(-i K dt/2)
    Eigen::VectorXd v_ext;
    Eigen::MatrixXd W;
    Eigen::VectorXd w;   // Simpson pattern / 3, the dx sits in W

    explicit DenseStep(const tdks::GridSpec& g) : n(g.points()), dt(g.dt) {
        const double s = 1.0 / (12.0 * g.dx * g.dx);
        Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n, n);
        for (int i = 0; i < n; ++i) {
            K(i, i) = 15.0 * s;
            if (i + 1 < n) K(i, i + 1) = K(i + 1, i) = -8.0 * s;
            if (i + 2 < n) K(i, i + 2) = K(i + 2, i) = 0.5 * s;
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K);
        Eigen::VectorXcd ph(n);
        for (int i = 0; i < n; ++i) ph[i] = std::polar(1.0, -0.5 * dt * es.eigenvalues()[i]);
        const Eigen::MatrixXcd S = es.eigenvectors().cast<cplx>();
        P = S * ph.asDiagonal() * S.transpose();

        v_ext.resize(n);
        W.resize(n, n);
        w.resize(n);
        for (int i = 0; i < n; ++i) {
            const double a = g.x(i) + 10.0;
            v_ext[i] = -1.0 / std::sqrt(a * a + 1.0);
            w[i] = (i == 0 || i == n - 1) ? 1.0 / 3.0 : (i % 2 ? 4.0 / 3.0 : 2.0 / 3.0);
            for (int j = 0; j < n; ++j) {
                const double d = g.x(j) - g.x(i);
                W(i, j) = g.dx / std::sqrt(d * d + 1.0);
            }
        }
    }

    Eigen::VectorXd potential(const Eigen::VectorXcd& phi, const Eigen::VectorXd& vc) const {
        Eigen::VectorXd v = v_ext + vc;
        for (int q = 0; q < n; ++q) {
            for (int s = 0; s < n; ++s) v[q] += W(q, s) * w[s] * std::norm(phi[s]);
        }
        return v;
    }

    Eigen::VectorXcd apply(const Eigen::VectorXcd& phi, const Eigen::VectorXd& vc) const {
        const Eigen::VectorXd v = potential(phi, vc);
        Eigen::VectorXcd u = P * phi;
        for (int q = 0; q < n; ++q) u[q] *= std::exp(cplx(0.0, -v[q] * dt));
        return P * u;
    }

    // Complex derivatives dF_l/dphi^R_m and dF_l/dphi^I_m.
    void state_jacobians(const Eigen::VectorXcd& phi, const Eigen::VectorXd& vc,
                         Eigen::MatrixXcd& dR, Eigen::MatrixXcd& dI) const {
        const Eigen::VectorXd v = potential(phi, vc);
        const Eigen::VectorXcd u = P * phi;
        dR.setZero(n, n);
        dI.setZero(n, n);
        for (int l = 0; l < n; ++l) {
            for (int m = 0; m < n; ++m) {
                cplx r{}, i{};
                for (int q = 0; q < n; ++q) {
                    const cplx e = std::exp(cplx(0.0, -v[q] * dt));
                    const cplx chain = P(l, q) * e * cplx(0.0, -dt) * u[q];
                    r += chain * (2.0 * W(q, m) * w[m] * phi[m].real()) + P(l, q) * e * P(q, m);
                    i += chain * (2.0 * W(q, m) * w[m] * phi[m].imag()) +
                         P(l, q) * e * P(q, m) * cplx(0.0, 1.0);
                }
                dR(l, m) = r;
                dI(l, m) = i;
            }
        }
    }

    // Block Jacobian [[dF^R/dphi^R, dF^R/dphi^I], [dF^I/dphi^R, dF^I/dphi^I]].
    Eigen::MatrixXd block_jacobian(const Eigen::VectorXcd& phi, const Eigen::VectorXd& vc) const {
        Eigen::MatrixXcd dR, dI;
        state_jacobians(phi, vc, dR, dI);
        Eigen::MatrixXd J(2 * n, 2 * n);
        J.topLeftCorner(n, n) = dR.real();
        J.topRightCorner(n, n) = dI.real();
        J.bottomLeftCorner(n, n) = dR.imag();
        J.bottomRightCorner(n, n) = dI.imag();
        return J;
    }

    // [dF^R/dvc; dF^I/dvc], 2n x n.
    Eigen::MatrixXd vc_jacobian(const Eigen::VectorXcd& phi, const Eigen::VectorXd& vc) const {
        const Eigen::VectorXd v = potential(phi, vc);
        const Eigen::VectorXcd u = P * phi;
        Eigen::MatrixXd J(2 * n, n);
        for (int l = 0; l < n; ++l) {
            for (int m = 0; m < n; ++m) {
                const cplx d = P(l, m) * std::exp(cplx(0.0, -v[m] * dt)) * cplx(0.0, -dt) * u[m];
                J(l, m) = d.real();
                J(n + l, m) = d.imag();
            }
        }
        return J;
    }
};

inline Eigen::VectorXd stack(const Eigen::VectorXcd& z) {
    Eigen::VectorXd out(2 * z.size());
    out << z.real(), z.imag();
    return out;
}

inline Eigen::VectorXcd unstack(const Eigen::VectorXd& r) {
    const Eigen::Index n = r.size() / 2;
    Eigen::VectorXcd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = {r[i], r[n + i]};
    return z;
}

}  // namespace oracle
