#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "tdks/grid.hpp"
#include "tdks/lbfgs.hpp"
#include "tdks/mlp.hpp"
#include "tdks/tdse2d.hpp"

namespace tdks {

/// Spatial domain shared by the TDSE (fine) and TDKS (coarse) grids.
struct DomainConfig {
    double l_min = -40.0;
    double l_max = 20.0;
    int tdse_J = 240;
    int subsample = 2;
};

/// Reference-data generation. `dt` is in a.u.; a config may give `dt_fs` instead.
struct TdseConfig {
    double dt = 0.005;
    int steps = 1440;
    int save_stride = 3;
    double packet_center = 10.0;
    double packet_width = 1.0;
};

struct PointwiseConfig {
    double momentum = -1.5;
    int frame_stride = 1;  ///< saved frames per TDKS step
    int frames = 401;      ///< K + 1
    double mu = 1e-6;
};

struct FunctionalConfig {
    ModelKind kind = ModelKind::DensityMemory;
    std::vector<double> train_momenta{-1.5};
    std::vector<double> test_momenta{};
    int frame_stride = 5;
    int frames = 81;
    int extra_frames = 16;  ///< rollout beyond the training horizon
    int hidden_width = 64;
    int hidden_layers = 3;
    bool use_previous = true;
    std::uint64_t seed = 0;
    double sigma = 0.01;
};

struct OptimizerConfig {
    LbfgsOptions lbfgs;
    int checkpoint_every = 50;
};

struct PathsConfig {
    std::string data_dir = "data";
    std::string run_dir = "runs";
};

struct RunConfig {
    std::string preset = "desk";
    DomainConfig domain;
    TdseConfig tdse;
    std::vector<double> momenta{-1.0, -1.2, -1.4, -1.5, -1.6, -1.8};
    PointwiseConfig pointwise;
    FunctionalConfig functional;
    OptimizerConfig optimizer;
    PathsConfig paths;

    /// Fine TDSE grid with the TDSE time axis.
    GridSpec tdse_grid() const;
    /// Coarse grid with the saved-frame time axis.
    GridSpec reference_grid() const;
    PacketSpec packet(double momentum) const;
    MlpShape model_shape() const;

    void validate() const;
};

RunConfig preset_config(const std::string& name);

nlohmann::json to_json(const RunConfig& cfg);

/**
 * Starts from the preset named in `j` (default "desk") and applies every key
 * in `j` on top. Unknown keys are rejected with their JSON path.
 */
RunConfig config_from_json(const nlohmann::json& j);

RunConfig load_config(const std::string& path);

/// Applies "a.b.c=value" overrides; the value is parsed as JSON when possible.
RunConfig apply_overrides(const RunConfig& cfg, const std::vector<std::string>& overrides);

/// Hash of everything that determines reference data (domain and TDSE settings).
std::string data_hash(const RunConfig& cfg);
/// Hash of the full resolved configuration, paths excluded.
std::string config_hash(const RunConfig& cfg);

}  // namespace tdks
