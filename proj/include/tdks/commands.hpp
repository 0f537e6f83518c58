#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tdks/config.hpp"
#include "tdks/container.hpp"
#include "tdks/trainer.hpp"

namespace tdks {

inline constexpr const char* kCodeVersion = "0.1.0";

/// Density rows must integrate to 2 within this under Simpson quadrature.
inline constexpr double kRowIntegralTolerance = 1e-6;

/// Predicted TDKS rows: the propagator conserves dx * sum(n), not the Simpson integral,
/// so Simpson rows are held to a quadrature-level band and the conserved sum to roundoff.
inline constexpr double kPredictedIntegralTolerance = 1e-2;
inline constexpr double kConservedSumTolerance = 1e-9;

/// Optimizer state is stored in checkpoints only below this many doubles (2 m B).
inline constexpr double kMaxStoredHistory = 2e7;

std::string momentum_label(double p);

std::filesystem::path reference_path(const RunConfig& cfg, double p);
std::filesystem::path ks_pair_path(const RunConfig& cfg, double p, int frame_stride);
std::filesystem::path pointwise_run_dir(const RunConfig& cfg);
std::filesystem::path functional_run_dir(const RunConfig& cfg);

/// Hash of the config fields that must not change across a resume.
std::string resume_key(const RunConfig& cfg);

/// Largest |integral(row) - 2|; throws std::runtime_error naming `what` when above tolerance.
double validate_row_integrals(const RowMatrix& density, const GridSpec& grid,
                              const std::string& what, double tolerance = kRowIntegralTolerance);

/// Largest relative change of sum(n_k) from row `from` on; throws above kConservedSumTolerance.
double validate_conserved_sum(const RowMatrix& density, int from, const std::string& what);

/// Reads a reference file and rejects it unless it was generated with this config's data settings.
DensityTrajectory load_reference(const RunConfig& cfg, double p);
KsInitialPair load_ks_pair(const RunConfig& cfg, double p, int frame_stride);

struct GenerateOptions {
    std::vector<double> momenta;  ///< empty: all configured momenta
};
nlohmann::json cmd_generate_reference(const RunConfig& cfg, const GenerateOptions& options,
                                      std::ostream& log);

struct InvertOptions {
    std::vector<double> momenta;
    int frame_stride = 0;  ///< 0: the strides the training commands use
};
nlohmann::json cmd_invert_initial(const RunConfig& cfg, const InvertOptions& options,
                                  std::ostream& log);

struct TrainCommandOptions {
    bool resume = false;
};
nlohmann::json cmd_train_pointwise(const RunConfig& cfg, const TrainCommandOptions& options,
                                   std::ostream& log);
nlohmann::json cmd_train_functional(const RunConfig& cfg, const TrainCommandOptions& options,
                                    std::ostream& log);

enum class ModelFamily { Pointwise, Functional };
ModelFamily parse_model_family(const std::string& text);

struct RolloutOptions {
    ModelFamily family = ModelFamily::Functional;
    std::vector<double> momenta;       ///< empty: train and test momenta
    std::optional<int> extra_frames;   ///< default: functional.extra_frames
};
nlohmann::json cmd_rollout(const RunConfig& cfg, const RolloutOptions& options, std::ostream& log);

struct EvaluateOptions {
    ModelFamily family = ModelFamily::Functional;
    std::vector<double> momenta;
};
nlohmann::json cmd_evaluate(const RunConfig& cfg, const EvaluateOptions& options,
                            std::ostream& log);

struct ExportOptions {
    std::vector<std::filesystem::path> files;
    std::vector<double> times;
    bool times_in_fs = false;
    std::filesystem::path out_dir = "export";
};
nlohmann::json cmd_export_csv(const ExportOptions& options, std::ostream& log);

/// Exit status 0 when every suite passes.
int cmd_gradcheck(std::ostream& log);

/// Checkpoint I/O, shared by training, rollout and tests.
struct Checkpoint {
    Container container;
    std::optional<LbfgsState> state;
    OptimTrace trace;
};
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace tdks
