#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "tdks/grid.hpp"

namespace tdks {

/// Input assembly rule for the memory functional.
enum class ModelKind {
    PhiMemory,      ///< concat(Re phi, Im phi, Re phi', Im phi')
    DensityMemory,  ///< concat(2|phi|^2, 2|phi'|^2)
};

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view text);

struct SeluConstants {
    static constexpr double lambda = 1.0507009873554805;
    static constexpr double alpha = 1.6732632423543772;
};

struct MlpShape {
    ModelKind kind = ModelKind::DensityMemory;
    int points = 0;  ///< J+1, also the output width
    int hidden_width = 256;
    int hidden_layers = 3;
    /// Ablation switch: when false the past state is fed as zeros.
    bool use_previous = true;

    int input_width() const { return (kind == ModelKind::PhiMemory ? 4 : 2) * points; }
    /// [input, hidden..., output]
    std::vector<int> layer_widths() const;
    Eigen::Index parameter_count() const;

    bool operator==(const MlpShape&) const = default;
};

/**
 * Dense network parameters stored as one flat vector theta. Canonical order:
 * for each layer, the weight matrix (out x in, row-major) then its bias.
 */
class MlpParameters {
public:
    MlpParameters(MlpShape shape, RealVector flat);

    static MlpParameters zeros(const MlpShape& shape);

    const MlpShape& shape() const { return shape_; }
    const RealVector& flat() const { return flat_; }
    RealVector& flat() { return flat_; }
    Eigen::Index size() const { return flat_.size(); }

    int layer_count() const { return static_cast<int>(offsets_.size()); }
    Eigen::Index weight_offset(int layer) const { return offsets_[layer]; }
    Eigen::Index bias_offset(int layer) const;
    int fan_in(int layer) const { return widths_[layer]; }
    int fan_out(int layer) const { return widths_[layer + 1]; }

    Eigen::Map<const RowMatrix> weight(int layer) const;
    Eigen::Map<const RealVector> bias(int layer) const;
    Eigen::Map<RowMatrix> weight(int layer);
    Eigen::Map<RealVector> bias(int layer);

private:
    MlpShape shape_;
    std::vector<int> widths_;
    std::vector<Eigen::Index> offsets_;
    RealVector flat_;
};

/// i.i.d. Normal(0, sigma^2) weights and biases from a counter-based generator
/// keyed by (seed, layer, entry).
MlpParameters init_params(std::uint64_t seed, double sigma, const MlpShape& shape);

/// Standard normal deviate for a (seed, stream, counter) key.
double counter_normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter);

inline double selu(double z) {
    return z > 0.0 ? SeluConstants::lambda * z
                   : SeluConstants::lambda * SeluConstants::alpha * std::expm1(z);
}

/// Slope at exactly zero is taken from the positive branch.
inline double selu_derivative(double z) {
    return z >= 0.0 ? SeluConstants::lambda
                    : SeluConstants::lambda * SeluConstants::alpha * std::exp(z);
}

/// Cotangents with respect to the real and imaginary parts of phi and phi'.
struct StateCotangents {
    RealVector re, im, prev_re, prev_im;

    ComplexVector current() const;
    ComplexVector previous() const;
};

/// v^C(phi, phi'; theta), length J+1.
RealVector mlp_forward(const MlpParameters& theta, const ComplexVector& phi,
                       const ComplexVector& phi_prev);

StateCotangents mlp_vjp_inputs(const MlpParameters& theta, const ComplexVector& phi,
                               const ComplexVector& phi_prev, const RealVector& cot);

RealVector mlp_vjp_params(const MlpParameters& theta, const ComplexVector& phi,
                          const ComplexVector& phi_prev, const RealVector& cot);

/// Both VJPs from one reverse sweep; the parameter gradient is added into `theta_grad`.
StateCotangents mlp_vjp(const MlpParameters& theta, const ComplexVector& phi,
                        const ComplexVector& phi_prev, const RealVector& cot,
                        RealVector& theta_grad);

}  // namespace tdks
