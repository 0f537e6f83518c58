#include "tdks/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

#include "tdks/gradcheck.hpp"
#include "tdks/hashing.hpp"

namespace tdks {

namespace fs = std::filesystem;
using nlohmann::json;

std::string momentum_label(double p) { return fmt::format("{:+.2f}", p); }

fs::path reference_path(const RunConfig& cfg, double p) {
    return fs::path(cfg.paths.data_dir) / fmt::format("reference_p{}.tdks", momentum_label(p));
}

fs::path ks_pair_path(const RunConfig& cfg, double p, int frame_stride) {
    return fs::path(cfg.paths.data_dir) /
           fmt::format("kspair_p{}_stride{}.tdks", momentum_label(p), frame_stride);
}

fs::path pointwise_run_dir(const RunConfig& cfg) { return fs::path(cfg.paths.run_dir) / "pointwise"; }

fs::path functional_run_dir(const RunConfig& cfg) {
    return fs::path(cfg.paths.run_dir) / ("functional-" + to_string(cfg.functional.kind));
}

std::string resume_key(const RunConfig& cfg) {
    json j = to_json(cfg);
    j.erase("paths");
    j["optimizer"].erase("max_iter");
    j["optimizer"].erase("checkpoint_every");
    Hasher h;
    h.update(j.dump());
    return h.short_digest();
}

double validate_row_integrals(const RowMatrix& density, const GridSpec& grid,
                              const std::string& what, double tolerance) {
    double worst = 0.0;
    int worst_row = 0;
    for (Eigen::Index k = 0; k < density.rows(); ++k) {
        const double err = std::abs(integrate(grid, density.row(k).transpose()) - 2.0);
        if (!(err <= worst)) {
            worst = err;
            worst_row = static_cast<int>(k);
        }
    }
    if (!(worst <= tolerance)) {
        throw std::runtime_error(fmt::format(
            "{}: density row {} integrates to 2 {:+.3e}, outside the tolerance {:.1e}", what,
            worst_row, worst, tolerance));
    }
    return worst;
}

double validate_conserved_sum(const RowMatrix& density, int from, const std::string& what) {
    const double base = density.row(from).sum();
    double worst = 0.0;
    for (Eigen::Index k = from; k < density.rows(); ++k) {
        worst = std::max(worst, std::abs(density.row(k).sum() - base) / base);
    }
    if (!(worst <= kConservedSumTolerance)) {
        throw std::runtime_error(fmt::format(
            "{}: the propagated norm drifts by {:.3e} (tolerance {:.0e})", what, worst,
            kConservedSumTolerance));
    }
    return worst;
}

namespace {

/// Both row checks for a predicted trajectory; returns meta entries.
json validate_predicted(const RowMatrix& density, const GridSpec& grid, int from,
                        const std::string& what) {
    return {{"max_row_integral_error",
             validate_row_integrals(density, grid, what, kPredictedIntegralTolerance)},
            {"max_conserved_sum_drift", validate_conserved_sum(density, from, what)}};
}

void require_data_hash(const Container& c, const RunConfig& cfg, const fs::path& path) {
    if (c.data_hash != data_hash(cfg)) {
        throw std::runtime_error(fmt::format(
            "{}: generated with data settings {} but the config expects {}; rerun "
            "generate-reference with this config",
            path.string(), c.data_hash, data_hash(cfg)));
    }
}

Container open_kind(const fs::path& path, const std::string& kind) {
    if (!fs::exists(path)) throw std::runtime_error(fmt::format("{}: file not found", path.string()));
    Container c = read_container(path);
    if (c.kind != kind) {
        throw std::runtime_error(
            fmt::format("{}: expected a '{}' file, found '{}'", path.string(), kind, c.kind));
    }
    return c;
}

Container stamped(const RunConfig& cfg, const std::string& kind) {
    Container c;
    c.kind = kind;
    c.config_hash = config_hash(cfg);
    c.data_hash = data_hash(cfg);
    return c;
}

std::vector<double> unique_in_order(std::vector<double> a, const std::vector<double>& b = {}) {
    std::vector<double> out;
    a.insert(a.end(), b.begin(), b.end());
    for (double p : a) {
        if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
    }
    return out;
}

void write_json(const fs::path& path, const json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

struct PairStats {
    double current_rel_l2 = 0.0;
    int density_mismatches = 0;
};

PairStats closure(const KsInitialPair& pair, const DensityTrajectory& ref) {
    PairStats s;
    const RealVector jr = ref.current.row(0).transpose();
    const RealVector jk = orbital_current(pair.phi0, ref.grid);
    s.current_rel_l2 = (jk - jr).norm() / std::max(jr.norm(), 1e-300);
    const RealVector n = ref.density.row(0).transpose();
    const RealVector nk = ks_density(pair.phi0);
    for (Eigen::Index j = 0; j < n.size(); ++j) {
        if (nk[j] != n[j]) ++s.density_mismatches;
    }
    return s;
}

json write_pair(const RunConfig& cfg, const DensityTrajectory& ref, double p, int stride,
                std::ostream& log) {
    std::vector<std::string> warnings;
    const KsInitialPair pair = ks_initial_pair(ref, stride, &warnings);
    const PairStats stats = closure(pair, ref);
    Container c = stamped(cfg, "ks-pair");
    c.grid = grid_to_json(ref.grid);
    c.provenance = {{"momentum", p},
                    {"sigma", ref.packet_width},
                    {"stride", stride},
                    {"code_version", kCodeVersion},
                    {"config_hash", c.config_hash}};
    c.meta = {{"momentum", p},
              {"frame_stride", stride},
              {"dt", pair.dt_used},
              {"warnings", warnings},
              {"current_rel_l2", stats.current_rel_l2},
              {"density_mismatches", stats.density_mismatches}};
    c.put("phi0", pair.phi0);
    c.put("phi1", pair.phi1);
    const fs::path path = ks_pair_path(cfg, p, stride);
    write_container(path, c);
    for (const auto& w : warnings) log << fmt::format("  warning (p = {}): {}\n", p, w);
    log << fmt::format("  wrote {} (current closure {:.2e})\n", path.string(), stats.current_rel_l2);
    return {{"path", path.string()},
            {"momentum", p},
            {"frame_stride", stride},
            {"current_rel_l2", stats.current_rel_l2},
            {"density_mismatches", stats.density_mismatches},
            {"warnings", warnings}};
}

std::vector<int> training_strides(const RunConfig& cfg) {
    std::vector<int> s{cfg.pointwise.frame_stride};
    if (cfg.functional.frame_stride != cfg.pointwise.frame_stride) {
        s.push_back(cfg.functional.frame_stride);
    }
    return s;
}

void check_momenta(const RunConfig& cfg, const std::vector<double>& momenta) {
    for (double p : momenta) {
        if (std::find(cfg.momenta.begin(), cfg.momenta.end(), p) == cfg.momenta.end()) {
            throw std::invalid_argument(fmt::format("momentum {} is not listed in the config", p));
        }
    }
}

}  // namespace

DensityTrajectory load_reference(const RunConfig& cfg, double p) {
    const fs::path path = reference_path(cfg, p);
    const Container c = open_kind(path, "reference");
    require_data_hash(c, cfg, path);
    DensityTrajectory ref;
    ref.grid = grid_from_json(c.grid);
    if (!(ref.grid == cfg.reference_grid())) {
        throw std::runtime_error(fmt::format("{}: grid does not match the config", path.string()));
    }
    ref.density = c.real_matrix("density");
    ref.current = c.real_matrix("current");
    ref.stride = c.meta.at("save_stride").get<int>();
    ref.momentum = c.meta.at("momentum").get<double>();
    ref.packet_width = c.meta.at("packet_width").get<double>();
    if (ref.density.rows() != ref.grid.frames() || ref.density.cols() != ref.grid.points()) {
        throw std::runtime_error(fmt::format("{}: density shape does not match its grid", path.string()));
    }
    return ref;
}

KsInitialPair load_ks_pair(const RunConfig& cfg, double p, int frame_stride) {
    const fs::path path = ks_pair_path(cfg, p, frame_stride);
    if (!fs::exists(path)) {
        throw std::runtime_error(fmt::format(
            "missing KS pair for p = {} at frame stride {} ({}); run invert-initial", p,
            frame_stride, path.string()));
    }
    const Container c = open_kind(path, "ks-pair");
    require_data_hash(c, cfg, path);
    KsInitialPair pair;
    pair.phi0 = c.complex_vector("phi0");
    pair.phi1 = c.complex_vector("phi1");
    pair.dt_used = c.meta.at("dt").get<double>();
    pair.momentum = c.meta.at("momentum").get<double>();
    if (pair.phi0.size() != cfg.reference_grid().points()) {
        throw std::runtime_error(fmt::format("{}: state length does not match the config grid",
                                             path.string()));
    }
    return pair;
}

json cmd_generate_reference(const RunConfig& cfg, const GenerateOptions& options,
                            std::ostream& log) {
    cfg.validate();
    const std::vector<double> momenta = options.momenta.empty() ? cfg.momenta : options.momenta;
    check_momenta(cfg, momenta);
    const GridSpec fine = cfg.tdse_grid();
    ReferenceOptions ro;
    ro.steps = cfg.tdse.steps;
    ro.save_stride = cfg.tdse.save_stride;
    ro.subsample = cfg.domain.subsample;

    json out = json::array();
    for (double p : momenta) {
        log << fmt::format("p = {}: {} TDSE steps on a {}x{} grid\n", p, ro.steps, fine.points(),
                           fine.points());
        TdseRunSummary summary;
        const DensityTrajectory ref = reference_trajectory(fine, cfg.packet(p), ro, &summary);
        const double row_err = validate_row_integrals(ref.density, ref.grid,
                                                      reference_path(cfg, p).string());

        Container c = stamped(cfg, "reference");
        c.grid = grid_to_json(ref.grid);
        c.provenance = {{"momentum", p},
                        {"sigma", cfg.tdse.packet_width},
                        {"stride", cfg.tdse.save_stride},
                        {"subsample", cfg.domain.subsample},
                        {"code_version", kCodeVersion},
                        {"config_hash", c.config_hash}};
        c.meta = {{"momentum", p},
                  {"packet_width", cfg.tdse.packet_width},
                  {"packet_center", cfg.tdse.packet_center},
                  {"save_stride", cfg.tdse.save_stride},
                  {"tdse_steps", cfg.tdse.steps},
                  {"tdse_dt", cfg.tdse.dt},
                  {"max_relative_norm_drift", summary.max_relative_norm_drift},
                  {"max_relative_quadrature_drift", summary.max_relative_quadrature_drift},
                  {"max_row_integral_error", row_err}};
        c.put("density", ref.density);
        c.put("current", ref.current);
        const fs::path path = reference_path(cfg, p);
        write_container(path, c);
        log << fmt::format("  wrote {} ({} frames, norm drift {:.2e})\n", path.string(),
                           ref.frames(), summary.max_relative_norm_drift);

        json pairs = json::array();
        for (int s : training_strides(cfg)) pairs.push_back(write_pair(cfg, ref, p, s, log));
        out.push_back({{"momentum", p},
                       {"path", path.string()},
                       {"frames", ref.frames()},
                       {"max_row_integral_error", row_err},
                       {"max_relative_norm_drift", summary.max_relative_norm_drift},
                       {"ks_pairs", pairs}});
    }
    return {{"command", "generate-reference"}, {"references", out}};
}

json cmd_invert_initial(const RunConfig& cfg, const InvertOptions& options, std::ostream& log) {
    cfg.validate();
    const std::vector<double> momenta = options.momenta.empty() ? cfg.momenta : options.momenta;
    check_momenta(cfg, momenta);
    const std::vector<int> strides =
        options.frame_stride > 0 ? std::vector<int>{options.frame_stride} : training_strides(cfg);
    json out = json::array();
    for (double p : momenta) {
        const DensityTrajectory ref = load_reference(cfg, p);
        for (int s : strides) out.push_back(write_pair(cfg, ref, p, s, log));
    }
    return {{"command", "invert-initial"}, {"ks_pairs", out}};
}

// ---------------------------------------------------------------------------
// Checkpoints and training runs

namespace {

json selu_json() { return {{"lambda", SeluConstants::lambda}, {"alpha", SeluConstants::alpha}}; }

json shape_json(const MlpShape& s) {
    return {{"kind", to_string(s.kind)},
            {"points", s.points},
            {"hidden_width", s.hidden_width},
            {"hidden_layers", s.hidden_layers},
            {"use_previous", s.use_previous},
            {"input_width", s.input_width()},
            {"parameter_count", s.parameter_count()}};
}

MlpShape shape_from_json(const json& j) {
    MlpShape s;
    s.kind = parse_model_kind(j.at("kind").get<std::string>());
    s.points = j.at("points").get<int>();
    s.hidden_width = j.at("hidden_width").get<int>();
    s.hidden_layers = j.at("hidden_layers").get<int>();
    s.use_previous = j.at("use_previous").get<bool>();
    return s;
}

RowMatrix trace_matrix(const std::vector<IterationRecord>& records) {
    RowMatrix m(static_cast<Eigen::Index>(records.size()), 5);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        m.row(static_cast<Eigen::Index>(i)) << r.iter, r.f, r.grad_inf, r.step, r.evals;
    }
    return m;
}

std::string trace_line(const IterationRecord& r) {
    return fmt::format("{} {:.17g} {:.17g} {:.17g} {}\n", r.iter, r.f, r.grad_inf, r.step, r.evals);
}

constexpr const char* kTraceHeader = "# iter f grad_inf step evals\n";

RowMatrix stack(const std::vector<RealVector>& v, Eigen::Index n) {
    RowMatrix m(static_cast<Eigen::Index>(v.size()), n);
    for (std::size_t i = 0; i < v.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = v[i].transpose();
    return m;
}

/// Streams the trace, writes periodic and final checkpoints for one training run.
class RunRecorder {
public:
    using Fill = std::function<void(Container&, const RealVector&)>;

    RunRecorder(const RunConfig& cfg, fs::path dir, std::string kind, Fill fill)
        : cfg_(cfg), dir_(std::move(dir)), kind_(std::move(kind)), fill_(std::move(fill)) {}

    fs::path checkpoint_path() const { return dir_ / "checkpoint.tdks"; }
    fs::path trace_path() const { return dir_ / "trace.log"; }

    /// Loads prior progress; returns the state to resume from, if stored.
    std::optional<LbfgsState> resume(RealVector& warm_start, std::ostream& log) {
        const Checkpoint ck = read_checkpoint(checkpoint_path());
        if (ck.container.kind != kind_) {
            throw std::runtime_error(fmt::format("{}: not a '{}' checkpoint",
                                                 checkpoint_path().string(), kind_));
        }
        if (ck.container.meta.value("resume_key", "") != resume_key(cfg_)) {
            throw std::runtime_error(fmt::format(
                "{}: checkpoint was written with a different configuration; only "
                "optimizer.max_iter and optimizer.checkpoint_every may change on resume",
                checkpoint_path().string()));
        }
        records_ = ck.trace.records;
        if (ck.state) {
            log << fmt::format("resuming at iteration {} with stored optimizer history\n",
                               ck.state->iter);
            return ck.state;
        }
        // History was too large to store: restart the memory from the saved point.
        iter_offset_ = records_.empty() ? 0 : records_.back().iter;
        evals_offset_ = records_.empty() ? 0 : records_.back().evals;
        warm_start = ck.container.real_vector("x");
        log << fmt::format("resuming at iteration {} without optimizer history (memory restarts)\n",
                           iter_offset_);
        return std::nullopt;
    }

    void open_trace() {
        std::string text = kTraceHeader;
        for (const auto& r : records_) text += trace_line(r);
        write_text_atomic(trace_path(), text);
        trace_.open(trace_path(), std::ios::app);
    }

    int iter_offset() const { return iter_offset_; }

    /// Puts the starting evaluation of a fresh run into the trace.
    std::function<void(double, const RealVector&)> first_evaluation(bool fresh) {
        return [this, fresh](double f, const RealVector& g) {
            if (fresh && !started_) {
                started_ = true;
                record({0, f, g.size() ? g.cwiseAbs().maxCoeff() : 0.0, 0.0, 1});
            }
        };
    }

    Observer observer(int every, Eigen::Index n, int memory) {
        return [this, every, n, memory](const LbfgsState& st, const IterationRecord& rec) {
            IterationRecord r = rec;
            r.iter += iter_offset_;
            r.evals += evals_offset_;
            record(r);
            if (every > 0 && r.iter % every == 0) write_checkpoint(st, n, memory, "running");
            return true;
        };
    }

    void write_checkpoint(const LbfgsState& st, Eigen::Index n, int memory,
                          const std::string& status) {
        Container c = stamped(cfg_, kind_);
        c.grid = grid_;
        c.provenance = {{"code_version", kCodeVersion}, {"config_hash", c.config_hash}};
        fill_(c, st.x);
        const bool store = 2.0 * memory * static_cast<double>(n) <= kMaxStoredHistory;
        c.meta["iteration"] = st.iter + iter_offset_;
        c.meta["evaluations"] = st.evals + evals_offset_;
        c.meta["status"] = status;
        c.meta["resume_key"] = resume_key(cfg_);
        c.meta["has_optimizer_state"] = store;
        c.put("x", st.x);
        c.put("trace", trace_matrix(records_));
        if (store) {
            c.put("lbfgs_f", RealVector(RealVector::Constant(1, st.f)));
            c.put("lbfgs_g", st.g);
            c.put("lbfgs_s", stack(st.s, n));
            c.put("lbfgs_y", stack(st.y, n));
            c.meta["lbfgs_iter"] = st.iter;
            c.meta["lbfgs_evals"] = st.evals;
        }
        write_container(checkpoint_path(), c);
    }

    void finish(const LbfgsResult& result, Eigen::Index n, int memory) {
        trace_.close();
        std::string text = kTraceHeader;
        for (const auto& r : records_) text += trace_line(r);
        write_text_atomic(trace_path(), text);
        write_checkpoint(result.state, n, memory, to_string(result.reason));
    }

    void set_grid(json grid) { grid_ = std::move(grid); }
    const std::vector<IterationRecord>& records() const { return records_; }

private:
    void record(const IterationRecord& r) {
        records_.push_back(r);
        if (trace_.is_open()) {
            trace_ << trace_line(r);
            trace_.flush();
        }
    }

    const RunConfig& cfg_;
    fs::path dir_;
    std::string kind_;
    Fill fill_;
    json grid_ = nullptr;
    std::vector<IterationRecord> records_;
    std::ofstream trace_;
    bool started_ = false;
    int iter_offset_ = 0;
    int evals_offset_ = 0;
};

bool monotone(const std::vector<IterationRecord>& records) {
    for (std::size_t i = 1; i < records.size(); ++i) {
        if (records[i].f > records[i - 1].f) return false;
    }
    return true;
}

json run_summary(const LbfgsResult& opt, const std::vector<IterationRecord>& records) {
    return {{"iterations", records.empty() ? 0 : records.back().iter},
            {"evaluations", records.empty() ? 0 : records.back().evals},
            {"termination", to_string(opt.reason)},
            {"message", opt.message},
            {"trace_monotone", monotone(records)}};
}

}  // namespace

Checkpoint read_checkpoint(const fs::path& path) {
    if (!fs::exists(path)) {
        throw std::runtime_error(fmt::format("{}: checkpoint not found; train first", path.string()));
    }
    Checkpoint ck;
    ck.container = read_container(path);
    const Container& c = ck.container;
    if (c.has("trace")) {
        const RowMatrix t = c.real_matrix("trace");
        for (Eigen::Index i = 0; i < t.rows(); ++i) {
            ck.trace.records.push_back({static_cast<int>(t(i, 0)), t(i, 1), t(i, 2), t(i, 3),
                                        static_cast<int>(t(i, 4))});
        }
    }
    if (c.meta.value("has_optimizer_state", false)) {
        LbfgsState st;
        st.x = c.real_vector("x");
        st.f = c.real_vector("lbfgs_f")[0];
        st.g = c.real_vector("lbfgs_g");
        const RowMatrix s = c.real_matrix("lbfgs_s");
        const RowMatrix y = c.real_matrix("lbfgs_y");
        for (Eigen::Index i = 0; i < s.rows(); ++i) {
            st.s.push_back(s.row(i).transpose());
            st.y.push_back(y.row(i).transpose());
        }
        st.iter = c.meta.at("lbfgs_iter").get<int>();
        st.evals = c.meta.at("lbfgs_evals").get<int>();
        ck.state = std::move(st);
    }
    return ck;
}

json cmd_train_pointwise(const RunConfig& cfg, const TrainCommandOptions& options,
                         std::ostream& log) {
    cfg.validate();
    const auto& pw = cfg.pointwise;
    const DensityTrajectory ref = load_reference(cfg, pw.momentum);
    const DensityTrajectory window = resample_frames(ref, pw.frame_stride, pw.frames);
    const KsInitialPair pair = load_ks_pair(cfg, pw.momentum, pw.frame_stride);
    if (pw.mu < 1e-6 || pw.mu > 1e-4) {
        log << fmt::format("note: mu = {} lies outside the range [1e-6, 1e-4]\n", pw.mu);
    }

    PointwiseProblem problem{window.grid, window.density, pair.phi0, pw.mu, pw.momentum};
    const Eigen::Index n = static_cast<Eigen::Index>(window.grid.frames()) * window.grid.points();

    const fs::path dir = pointwise_run_dir(cfg);
    RunRecorder rec(cfg, dir, "checkpoint-pointwise", [&](Container& c, const RealVector& x) {
        c.put("vc", unflatten_vc(x, window.grid));
        c.meta["momentum"] = pw.momentum;
        c.meta["mu"] = pw.mu;
    });
    rec.set_grid(grid_to_json(window.grid));

    TrainOptions topt;
    topt.lbfgs = cfg.optimizer.lbfgs;
    std::optional<LbfgsState> state;
    if (options.resume) {
        state = rec.resume(topt.initial, log);
        if (state) topt.resume = &*state;
        topt.lbfgs.max_iter = std::max(0, topt.lbfgs.max_iter - rec.iter_offset());
    }
    rec.open_trace();
    topt.observer = rec.observer(cfg.optimizer.checkpoint_every, n, topt.lbfgs.memory);

    log << fmt::format("train-pointwise: p = {}, {} frames x {} points, mu = {}\n", pw.momentum,
                       window.grid.frames(), window.grid.points(), pw.mu);

    topt.on_evaluation = rec.first_evaluation(!options.resume);
    const PointwiseResult result = train_pointwise(problem, topt);
    rec.finish(result.optimization, n, topt.lbfgs.memory);

    const double final_mse = result.report.overall_mse;
    json report = {{"command", "train-pointwise"},
                   {"momentum", pw.momentum},
                   {"mu", pw.mu},
                   {"frames", window.grid.frames()},
                   {"points", window.grid.points()},
                   {"baseline_mse", result.baseline_mse},
                   {"final_mse", final_mse},
                   {"improvement", result.baseline_mse / final_mse},
                   {"smoothness_energy", smoothness_penalty(result.vc, 1.0, problem.grid).value},
                   {"optimizer", run_summary(result.optimization, rec.records())},
                   {"evaluation", result.report.to_json()},
                   {"config_hash", config_hash(cfg)},
                   {"data_hash", data_hash(cfg)}};
    write_json(dir / "report.json", report);
    log << fmt::format("baseline MSE {:.4e} -> {:.4e} ({:.1f}x) after {} iterations [{}]\n",
                       result.baseline_mse, final_mse, result.baseline_mse / final_mse,
                       report["optimizer"]["iterations"].get<int>(),
                       to_string(result.optimization.reason));
    return report;
}

namespace {

struct FunctionalSetup {
    GridSpec grid;
    std::vector<FunctionalTrajectory> trajectories;
};

FunctionalTrajectory functional_trajectory(const RunConfig& cfg, double p, int frames,
                                           GridSpec* grid) {
    const auto& f = cfg.functional;
    const DensityTrajectory ref = load_reference(cfg, p);
    if ((frames - 1) * f.frame_stride > ref.frames() - 1) {
        throw std::invalid_argument(fmt::format(
            "p = {}: {} frames at stride {} exceed the {} saved reference frames", p, frames,
            f.frame_stride, ref.frames()));
    }
    const DensityTrajectory window = resample_frames(ref, f.frame_stride, frames);
    const KsInitialPair pair = load_ks_pair(cfg, p, f.frame_stride);
    if (grid) *grid = window.grid;
    return {p, pair.phi0, pair.phi1, window.density};
}

FunctionalSetup functional_setup(const RunConfig& cfg, const std::vector<double>& momenta,
                                 int frames) {
    FunctionalSetup s;
    for (double p : momenta) s.trajectories.push_back(functional_trajectory(cfg, p, frames, &s.grid));
    return s;
}

MlpParameters load_theta(const RunConfig& cfg, const fs::path& path) {
    const Checkpoint ck = read_checkpoint(path);
    const Container& c = ck.container;
    if (c.kind != "checkpoint-functional") {
        throw std::runtime_error(fmt::format("{}: not a functional checkpoint", path.string()));
    }
    require_data_hash(c, cfg, path);
    const MlpShape shape = shape_from_json(c.meta.at("shape"));
    if (!(shape == cfg.model_shape())) {
        throw std::runtime_error(fmt::format(
            "{}: checkpoint model shape {} does not match the config {}", path.string(),
            c.meta.at("shape").dump(), shape_json(cfg.model_shape()).dump()));
    }
    return MlpParameters(shape, c.real_vector("theta"));
}

CorrelationGrid load_vc(const RunConfig& cfg, const fs::path& path, const GridSpec& grid) {
    const Checkpoint ck = read_checkpoint(path);
    const Container& c = ck.container;
    if (c.kind != "checkpoint-pointwise") {
        throw std::runtime_error(fmt::format("{}: not a pointwise checkpoint", path.string()));
    }
    require_data_hash(c, cfg, path);
    CorrelationGrid vc = c.real_matrix("vc");
    if (vc.rows() != grid.frames() || vc.cols() != grid.points()) {
        throw std::runtime_error(fmt::format("{}: V^C is {}x{} but the config grid is {}x{}",
                                             path.string(), vc.rows(), vc.cols(), grid.frames(),
                                             grid.points()));
    }
    return vc;
}

std::string split_of(const RunConfig& cfg, double p) {
    const auto& t = cfg.functional.train_momenta;
    return std::find(t.begin(), t.end(), p) != t.end() ? "train" : "test";
}

}  // namespace

json cmd_train_functional(const RunConfig& cfg, const TrainCommandOptions& options,
                          std::ostream& log) {
    cfg.validate();
    const auto& f = cfg.functional;
    FunctionalSetup setup = functional_setup(cfg, f.train_momenta, f.frames);
    FunctionalProblem problem{setup.grid, std::move(setup.trajectories), cfg.model_shape(), f.seed,
                              f.sigma};
    problem.validate();
    const Eigen::Index n = problem.shape.parameter_count();

    const fs::path dir = functional_run_dir(cfg);
    RunRecorder rec(cfg, dir, "checkpoint-functional", [&](Container& c, const RealVector& x) {
        c.put("theta", x);
        c.meta["model_kind"] = to_string(problem.shape.kind);
        c.meta["shape"] = shape_json(problem.shape);
        c.meta["selu"] = selu_json();
        c.meta["seed"] = f.seed;
        c.meta["sigma"] = f.sigma;
        c.meta["train_momenta"] = f.train_momenta;
    });
    rec.set_grid(grid_to_json(problem.grid));

    TrainOptions topt;
    topt.lbfgs = cfg.optimizer.lbfgs;
    std::optional<LbfgsState> state;
    if (options.resume) {
        state = rec.resume(topt.initial, log);
        if (state) topt.resume = &*state;
        topt.lbfgs.max_iter = std::max(0, topt.lbfgs.max_iter - rec.iter_offset());
    }
    rec.open_trace();
    topt.observer = rec.observer(cfg.optimizer.checkpoint_every, n, topt.lbfgs.memory);

    log << fmt::format("train-functional: {} model, {} parameters, {} trajectories, K = {}\n",
                       to_string(problem.shape.kind), n, problem.trajectories.size(),
                       problem.grid.K);

    topt.on_evaluation = rec.first_evaluation(!options.resume);
    const FunctionalResult result = train_functional(problem, topt);
    const LbfgsResult& opt = result.optimization;
    rec.finish(opt, n, topt.lbfgs.memory);
    const EvalReport& eval = result.report;
    const double baseline = result.baseline_mse;

    json report = {{"command", "train-functional"},
                   {"model_kind", to_string(problem.shape.kind)},
                   {"parameters", n},
                   {"train_momenta", f.train_momenta},
                   {"frames", problem.grid.frames()},
                   {"points", problem.grid.points()},
                   {"baseline_mse", baseline},
                   {"final_mse", eval.overall_mse},
                   {"improvement", baseline / eval.overall_mse},
                   {"optimizer", run_summary(opt, rec.records())},
                   {"evaluation", eval.to_json()},
                   {"config_hash", config_hash(cfg)},
                   {"data_hash", data_hash(cfg)}};
    write_json(dir / "report.json", report);
    log << fmt::format("baseline MSE {:.4e} -> {:.4e} ({:.1f}x) after {} iterations [{}]\n",
                       baseline, eval.overall_mse, baseline / eval.overall_mse,
                       report["optimizer"]["iterations"].get<int>(), to_string(opt.reason));
    return report;
}

ModelFamily parse_model_family(const std::string& text) {
    if (text == "pointwise") return ModelFamily::Pointwise;
    if (text == "functional") return ModelFamily::Functional;
    throw std::invalid_argument(
        fmt::format("unknown model '{}' (expected 'pointwise' or 'functional')", text));
}

namespace {

/// Writes a predicted trajectory next to its reference window.
void write_rollout(const RunConfig& cfg, const fs::path& path, const TdksTrajectory& traj,
                   const RowMatrix& reference, json meta) {
    Container c = stamped(cfg, "rollout");
    c.grid = grid_to_json(traj.grid);
    c.provenance = {{"momentum", meta.at("momentum")},
                    {"model", traj.provenance},
                    {"code_version", kCodeVersion},
                    {"config_hash", c.config_hash}};
    c.meta = std::move(meta);
    c.put("density", densities(traj));
    c.put("reference", reference);
    c.put("vc", traj.correlation);
    write_container(path, c);
}

}  // namespace

json cmd_rollout(const RunConfig& cfg, const RolloutOptions& options, std::ostream& log) {
    cfg.validate();
    json entries = json::array();
    EvalReport horizon, full;

    if (options.family == ModelFamily::Pointwise) {
        const auto& pw = cfg.pointwise;
        if (options.extra_frames.value_or(0) != 0) {
            throw std::invalid_argument(
                "pointwise V^C is defined on the training horizon only; use --extra 0");
        }
        const DensityTrajectory window =
            resample_frames(load_reference(cfg, pw.momentum), pw.frame_stride, pw.frames);
        const fs::path dir = pointwise_run_dir(cfg);
        const CorrelationGrid vc = load_vc(cfg, dir / "checkpoint.tdks", window.grid);
        const KsInitialPair pair = load_ks_pair(cfg, pw.momentum, pw.frame_stride);
        const PropagatorCache cache(window.grid);
        const TdksTrajectory traj = propagate_pointwise(pair.phi0, vc, cache);
        const json checks = validate_predicted(densities(traj), traj.grid, 0, "pointwise rollout");
        add_score(horizon, pw.momentum, "train", density_loss(traj, window.density), traj.grid);
        const fs::path path = dir / fmt::format("rollout_p{}.tdks", momentum_label(pw.momentum));
        json meta = {{"momentum", pw.momentum}, {"split", "train"}, {"family", "pointwise"},
                     {"train_frames", pw.frames}, {"extra_frames", 0},
                     {"mse", horizon.entries.back().mse}, {"checks", checks}};
        write_rollout(cfg, path, traj, window.density, meta);
        meta["path"] = path.string();
        entries.push_back(meta);
        log << fmt::format("p = {}: MSE {:.4e} -> {}\n", pw.momentum, horizon.entries.back().mse,
                           path.string());
        json report = {{"command", "rollout"}, {"family", "pointwise"}, {"trajectories", entries},
                       {"evaluation", horizon.to_json()}, {"config_hash", config_hash(cfg)},
                       {"data_hash", data_hash(cfg)}};
        write_json(dir / "rollout.json", report);
        return report;
    }

    const auto& f = cfg.functional;
    const int extra = options.extra_frames.value_or(f.extra_frames);
    if (extra < 0) throw std::invalid_argument("extra frames must be non-negative");
    const std::vector<double> momenta = options.momenta.empty()
                                            ? unique_in_order(f.train_momenta, f.test_momenta)
                                            : options.momenta;
    check_momenta(cfg, momenta);
    const fs::path dir = functional_run_dir(cfg);
    const MlpParameters theta = load_theta(cfg, dir / "checkpoint.tdks");

    for (double p : momenta) {
        GridSpec grid;
        const FunctionalTrajectory t = functional_trajectory(cfg, p, f.frames + extra, &grid);
        const PropagatorCache cache(grid);
        const int K = f.frames - 1;
        const TdksTrajectory train = rollout_functional(theta, t.phi0, t.phi1, K, cache);
        const TdksTrajectory traj = continue_rollout(theta, train, extra, cache);
        const std::string split = split_of(cfg, p);
        add_score(horizon, p, split, density_loss(train, t.reference.topRows(K + 1)), train.grid);
        add_score(full, p, split, density_loss(traj, t.reference), traj.grid);
        // phi_0 and phi_1 come from separate inversions; the dynamics start at frame 1.
        const json checks =
            validate_predicted(densities(traj), traj.grid, 1, fmt::format("rollout p = {}", p));
        const fs::path path = dir / fmt::format("rollout_p{}.tdks", momentum_label(p));
        json meta = {{"momentum", p},
                     {"split", split},
                     {"family", "functional"},
                     {"model_kind", to_string(f.kind)},
                     {"train_frames", f.frames},
                     {"extra_frames", extra},
                     {"mse_train_horizon", horizon.entries.back().mse},
                     {"mse", full.entries.back().mse},
                     {"checks", checks}};
        write_rollout(cfg, path, traj, t.reference, meta);
        meta["path"] = path.string();
        entries.push_back(meta);
        log << fmt::format("p = {} ({}): MSE {:.4e} over {} frames, {:.4e} over the first {}\n", p,
                           split, full.entries.back().mse, traj.frames(),
                           horizon.entries.back().mse, K + 1);
    }
    json report = {{"command", "rollout"},
                   {"family", "functional"},
                   {"model_kind", to_string(f.kind)},
                   {"extra_frames", extra},
                   {"trajectories", entries},
                   {"evaluation_train_horizon", horizon.to_json()},
                   {"evaluation", full.to_json()},
                   {"config_hash", config_hash(cfg)},
                   {"data_hash", data_hash(cfg)}};
    write_json(dir / "rollout.json", report);
    return report;
}

json cmd_evaluate(const RunConfig& cfg, const EvaluateOptions& options, std::ostream& log) {
    cfg.validate();
    EvalReport report;
    fs::path dir;
    if (options.family == ModelFamily::Pointwise) {
        const auto& pw = cfg.pointwise;
        const DensityTrajectory window =
            resample_frames(load_reference(cfg, pw.momentum), pw.frame_stride, pw.frames);
        dir = pointwise_run_dir(cfg);
        const CorrelationGrid vc = load_vc(cfg, dir / "checkpoint.tdks", window.grid);
        const KsInitialPair pair = load_ks_pair(cfg, pw.momentum, pw.frame_stride);
        const PropagatorCache cache(window.grid);
        add_score(report, pw.momentum, "train",
                  density_loss(propagate_pointwise(pair.phi0, vc, cache), window.density),
                  window.grid);
    } else {
        const auto& f = cfg.functional;
        const std::vector<double> momenta = options.momenta.empty()
                                                ? unique_in_order(f.train_momenta, f.test_momenta)
                                                : options.momenta;
        check_momenta(cfg, momenta);
        dir = functional_run_dir(cfg);
        const MlpParameters theta = load_theta(cfg, dir / "checkpoint.tdks");
        std::vector<ScoredTrajectory> set;
        GridSpec grid;
        for (double p : momenta) {
            set.push_back({split_of(cfg, p), functional_trajectory(cfg, p, f.frames, &grid)});
        }
        report = score_functional(theta, set, PropagatorCache(grid));
    }
    for (const auto& e : report.entries) {
        log << fmt::format("p = {} ({}): MSE {:.4e}\n", e.momentum, e.split, e.mse);
    }
    json out = {{"command", "evaluate"},
                {"family", options.family == ModelFamily::Pointwise ? "pointwise" : "functional"},
                {"evaluation", report.to_json()},
                {"config_hash", config_hash(cfg)},
                {"data_hash", data_hash(cfg)}};
    write_json(dir / "evaluate.json", out);
    return out;
}

json cmd_export_csv(const ExportOptions& options, std::ostream& log) {
    if (options.files.empty()) throw std::invalid_argument("export-csv: no input files");
    if (options.times.empty()) throw std::invalid_argument("export-csv: no times requested");
    json index = json::array();
    for (const auto& file : options.files) {
        const Container c = read_container(file);
        const GridSpec grid = grid_from_json(c.grid);
        const bool rollout = c.kind == "rollout";
        if (!rollout && c.kind != "reference") {
            throw std::invalid_argument(fmt::format(
                "{}: export-csv reads reference or rollout files, not '{}'", file.string(), c.kind));
        }
        const RowMatrix reference = c.real_matrix(rollout ? "reference" : "density");
        RowMatrix predicted, vc;
        if (rollout) {
            predicted = c.real_matrix("density");
            vc = c.real_matrix("vc");
        }
        const RealVector x = grid.positions();
        const std::string stem = file.stem().string();
        json entries = json::array();
        for (double requested : options.times) {
            const double t = options.times_in_fs ? fs_to_au(requested) : requested;
            const double kf = t / grid.dt;
            if (!(kf >= -0.5) || !(kf <= grid.K + 0.5)) {
                throw std::invalid_argument(fmt::format(
                    "{}: time {} {} lies outside [0, {}] a.u.", file.string(), requested,
                    options.times_in_fs ? "fs" : "a.u.", grid.T));
            }
            const int k = static_cast<int>(std::llround(kf));
            const double actual = k * grid.dt;
            std::string text = rollout ? "x,n_reference,n_predicted,v_c\n" : "x,n_reference\n";
            for (int j = 0; j < grid.points(); ++j) {
                text += fmt::format("{:.17g},{:.17g}", x[j], reference(k, j));
                if (rollout) text += fmt::format(",{:.17g},{:.17g}", predicted(k, j), vc(k, j));
                text += "\n";
            }
            const fs::path out = options.out_dir / fmt::format("{}_k{}.csv", stem, k);
            write_text_atomic(out, text);
            log << fmt::format("{} t = {} -> frame {} (t = {:.6g} a.u. = {:.6g} fs): {}\n",
                               stem, requested, k, actual, au_to_fs(actual), out.string());
            entries.push_back({{"requested", requested},
                               {"unit", options.times_in_fs ? "fs" : "au"},
                               {"frame", k},
                               {"time_au", actual},
                               {"time_fs", au_to_fs(actual)},
                               {"csv", out.string()}});
        }
        index.push_back({{"file", file.string()},
                         {"kind", c.kind},
                         {"config_hash", c.config_hash},
                         {"data_hash", c.data_hash},
                         {"exports", entries}});
    }
    json out = {{"command", "export-csv"}, {"files", index}};
    write_json(options.out_dir / "export_index.json", out);
    return out;
}

int cmd_gradcheck(std::ostream& log) {
    bool ok = true;
    for (const auto& line : run_gradcheck_suite()) {
        ok = ok && line.pass();
        log << fmt::format("{} {:<40} max rel error {:.3e} (tolerance {:.0e}, {} entries)\n",
                           line.pass() ? "PASS" : "FAIL", line.name, line.report.max_rel_error,
                           line.tolerance, line.report.entries);
    }
    return ok ? 0 : 1;
}

}  // namespace tdks
