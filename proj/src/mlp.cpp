#include "tdks/mlp.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace tdks {

std::string to_string(ModelKind kind) {
    return kind == ModelKind::PhiMemory ? "phi" : "density";
}

ModelKind parse_model_kind(std::string_view text) {
    if (text == "phi" || text == "PhiMemory") return ModelKind::PhiMemory;
    if (text == "density" || text == "DensityMemory") return ModelKind::DensityMemory;
    throw std::invalid_argument("unknown model kind '" + std::string(text) +
                                "' (expected 'phi' or 'density')");
}

std::vector<int> MlpShape::layer_widths() const {
    std::vector<int> widths;
    widths.push_back(input_width());
    for (int l = 0; l < hidden_layers; ++l) widths.push_back(hidden_width);
    widths.push_back(points);
    return widths;
}

Eigen::Index MlpShape::parameter_count() const {
    const auto widths = layer_widths();
    Eigen::Index total = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        total += static_cast<Eigen::Index>(widths[l]) * widths[l + 1] + widths[l + 1];
    }
    return total;
}

MlpParameters::MlpParameters(MlpShape shape, RealVector flat)
    : shape_(shape), widths_(shape.layer_widths()), flat_(std::move(flat)) {
    if (shape_.points < 1 || shape_.hidden_width < 1 || shape_.hidden_layers < 0) {
        throw std::invalid_argument("mlp: invalid shape");
    }
    Eigen::Index offset = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        offsets_.push_back(offset);
        offset += static_cast<Eigen::Index>(widths_[l]) * widths_[l + 1] + widths_[l + 1];
    }
    if (flat_.size() != offset) {
        throw std::invalid_argument("mlp: flat parameter length " + std::to_string(flat_.size()) +
                                    " does not match shape (" + std::to_string(offset) + ")");
    }
}

MlpParameters MlpParameters::zeros(const MlpShape& shape) {
    return MlpParameters(shape, RealVector::Zero(shape.parameter_count()));
}

Eigen::Index MlpParameters::bias_offset(int layer) const {
    return offsets_[layer] + static_cast<Eigen::Index>(fan_out(layer)) * fan_in(layer);
}

Eigen::Map<const RowMatrix> MlpParameters::weight(int layer) const {
    return {flat_.data() + weight_offset(layer), fan_out(layer), fan_in(layer)};
}

Eigen::Map<const RealVector> MlpParameters::bias(int layer) const {
    return {flat_.data() + bias_offset(layer), fan_out(layer)};
}

Eigen::Map<RowMatrix> MlpParameters::weight(int layer) {
    return {flat_.data() + weight_offset(layer), fan_out(layer), fan_in(layer)};
}

Eigen::Map<RealVector> MlpParameters::bias(int layer) {
    return {flat_.data() + bias_offset(layer), fan_out(layer)};
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Uniform in (0, 1), never exactly zero.
double to_unit(std::uint64_t bits) {
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace

double counter_normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
    const std::uint64_t key = splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
    const std::uint64_t pair = counter / 2;
    const double u1 = to_unit(splitmix64(key ^ splitmix64(2 * pair)));
    const double u2 = to_unit(splitmix64(key ^ splitmix64(2 * pair + 1)));
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    return counter % 2 == 0 ? r * std::cos(angle) : r * std::sin(angle);
}

MlpParameters init_params(std::uint64_t seed, double sigma, const MlpShape& shape) {
    if (!(sigma > 0.0)) throw std::invalid_argument("init_params: sigma must be positive");
    MlpParameters theta = MlpParameters::zeros(shape);
    for (int l = 0; l < theta.layer_count(); ++l) {
        const Eigen::Index begin = theta.weight_offset(l);
        const Eigen::Index end = theta.bias_offset(l) + theta.fan_out(l);
        for (Eigen::Index i = begin; i < end; ++i) {
            theta.flat()[i] = sigma * counter_normal(seed, static_cast<std::uint64_t>(l),
                                                     static_cast<std::uint64_t>(i - begin));
        }
    }
    return theta;
}

ComplexVector StateCotangents::current() const {
    ComplexVector out(re.size());
    for (Eigen::Index j = 0; j < re.size(); ++j) out[j] = {re[j], im[j]};
    return out;
}

ComplexVector StateCotangents::previous() const {
    ComplexVector out(prev_re.size());
    for (Eigen::Index j = 0; j < prev_re.size(); ++j) out[j] = {prev_re[j], prev_im[j]};
    return out;
}

namespace {

struct Activations {
    std::vector<RealVector> pre;   // pre-activation per hidden layer
    std::vector<RealVector> post;  // post[0] is the input; post[l+1] = selu(pre[l])
};

RealVector assemble_input(const MlpShape& shape, const ComplexVector& phi,
                          const ComplexVector& phi_prev) {
    const int n = shape.points;
    if (phi.size() != n || phi_prev.size() != n) {
        throw std::invalid_argument("mlp: state length does not match model width");
    }
    RealVector input(shape.input_width());
    const bool prev = shape.use_previous;
    if (shape.kind == ModelKind::PhiMemory) {
        for (int j = 0; j < n; ++j) {
            input[j] = phi[j].real();
            input[n + j] = phi[j].imag();
            input[2 * n + j] = prev ? phi_prev[j].real() : 0.0;
            input[3 * n + j] = prev ? phi_prev[j].imag() : 0.0;
        }
    } else {
        for (int j = 0; j < n; ++j) {
            input[j] = 2.0 * std::norm(phi[j]);
            input[n + j] = prev ? 2.0 * std::norm(phi_prev[j]) : 0.0;
        }
    }
    return input;
}

RealVector run_forward(const MlpParameters& theta, RealVector input, Activations* acts) {
    const int layers = theta.layer_count();
    RealVector h = std::move(input);
    if (acts) acts->post.push_back(h);
    for (int l = 0; l < layers; ++l) {
        RealVector z = theta.weight(l) * h + theta.bias(l);
        if (l + 1 == layers) return z;
        if (acts) acts->pre.push_back(z);
        h = z.unaryExpr([](double v) { return selu(v); });
        if (acts) acts->post.push_back(h);
    }
    return h;
}

// Reverse sweep. Returns the cotangent on the network input; adds into theta_grad when given.
RealVector run_reverse(const MlpParameters& theta, const Activations& acts, const RealVector& cot,
                       RealVector* theta_grad) {
    const int layers = theta.layer_count();
    RealVector delta = cot;
    for (int l = layers - 1; l >= 0; --l) {
        if (l + 1 < layers) {
            const RealVector& z = acts.pre[l];
            for (Eigen::Index i = 0; i < delta.size(); ++i) delta[i] *= selu_derivative(z[i]);
        }
        if (theta_grad) {
            const RealVector& in = acts.post[l];
            Eigen::Map<RowMatrix> gw(theta_grad->data() + theta.weight_offset(l), theta.fan_out(l),
                                     theta.fan_in(l));
            gw.noalias() += delta * in.transpose();
            theta_grad->segment(theta.bias_offset(l), theta.fan_out(l)) += delta;
        }
        delta = theta.weight(l).transpose() * delta;
    }
    return delta;
}

StateCotangents input_to_state(const MlpShape& shape, const RealVector& g,
                               const ComplexVector& phi, const ComplexVector& phi_prev) {
    const int n = shape.points;
    StateCotangents out;
    out.re.resize(n);
    out.im.resize(n);
    out.prev_re.resize(n);
    out.prev_im.resize(n);
    const bool prev = shape.use_previous;
    if (shape.kind == ModelKind::PhiMemory) {
        out.re = g.segment(0, n);
        out.im = g.segment(n, n);
        if (prev) {
            out.prev_re = g.segment(2 * n, n);
            out.prev_im = g.segment(3 * n, n);
        } else {
            out.prev_re.setZero();
            out.prev_im.setZero();
        }
    } else {
        for (int j = 0; j < n; ++j) {
            out.re[j] = 4.0 * phi[j].real() * g[j];
            out.im[j] = 4.0 * phi[j].imag() * g[j];
            out.prev_re[j] = prev ? 4.0 * phi_prev[j].real() * g[n + j] : 0.0;
            out.prev_im[j] = prev ? 4.0 * phi_prev[j].imag() * g[n + j] : 0.0;
        }
    }
    return out;
}

}  // namespace

RealVector mlp_forward(const MlpParameters& theta, const ComplexVector& phi,
                       const ComplexVector& phi_prev) {
    return run_forward(theta, assemble_input(theta.shape(), phi, phi_prev), nullptr);
}

StateCotangents mlp_vjp(const MlpParameters& theta, const ComplexVector& phi,
                        const ComplexVector& phi_prev, const RealVector& cot,
                        RealVector& theta_grad) {
    if (cot.size() != theta.shape().points) throw std::invalid_argument("mlp_vjp: cot length");
    if (theta_grad.size() != theta.size()) throw std::invalid_argument("mlp_vjp: gradient length");
    Activations acts;
    run_forward(theta, assemble_input(theta.shape(), phi, phi_prev), &acts);
    const RealVector g = run_reverse(theta, acts, cot, &theta_grad);
    return input_to_state(theta.shape(), g, phi, phi_prev);
}

StateCotangents mlp_vjp_inputs(const MlpParameters& theta, const ComplexVector& phi,
                               const ComplexVector& phi_prev, const RealVector& cot) {
    if (cot.size() != theta.shape().points) throw std::invalid_argument("mlp_vjp: cot length");
    Activations acts;
    run_forward(theta, assemble_input(theta.shape(), phi, phi_prev), &acts);
    const RealVector g = run_reverse(theta, acts, cot, nullptr);
    return input_to_state(theta.shape(), g, phi, phi_prev);
}

RealVector mlp_vjp_params(const MlpParameters& theta, const ComplexVector& phi,
                          const ComplexVector& phi_prev, const RealVector& cot) {
    RealVector grad = RealVector::Zero(theta.size());
    mlp_vjp(theta, phi, phi_prev, cot, grad);
    return grad;
}

}  // namespace tdks
