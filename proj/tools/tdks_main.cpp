#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "tdks/commands.hpp"

namespace {

struct Common {
    std::string config_file;
    std::string preset = "desk";
    std::vector<std::string> overrides;
    std::string kind;
    std::vector<double> train_p;
    std::vector<double> test_p;
    std::optional<double> mu;
    std::optional<int> max_iter;
    std::string data_dir;
    std::string run_dir;

    void attach(CLI::App* app) {
        app->add_option("--config", config_file, "JSON run configuration");
        app->add_option("--preset", preset, "desk or paper (ignored when --config names one)")
            ->check(CLI::IsMember({"desk", "paper"}));
        app->add_option("--set", overrides, "override a config key, e.g. --set pointwise.mu=1e-5");
        app->add_option("--kind", kind, "functional model kind (phi or density)");
        app->add_option("--train-p", train_p, "training momenta")->delimiter(',');
        app->add_option("--test-p", test_p, "test momenta")->delimiter(',');
        app->add_option("--mu", mu, "smoothness weight for pointwise training");
        app->add_option("--max-iter", max_iter, "L-BFGS iteration limit");
        app->add_option("--data-dir", data_dir, "reference data directory");
        app->add_option("--run-dir", run_dir, "training output directory");
    }

    tdks::RunConfig resolve() const {
        tdks::RunConfig cfg = config_file.empty() ? tdks::preset_config(preset)
                                                  : tdks::load_config(config_file);
        std::vector<std::string> all = overrides;
        auto list = [](const std::vector<double>& v) {
            nlohmann::json j = v;
            return j.dump();
        };
        if (!kind.empty()) all.push_back("functional.kind=" + kind);
        if (!train_p.empty()) all.push_back("functional.train_momenta=" + list(train_p));
        if (!test_p.empty()) all.push_back("functional.test_momenta=" + list(test_p));
        if (mu) all.push_back(fmt::format("pointwise.mu={}", *mu));
        if (max_iter) all.push_back(fmt::format("optimizer.max_iter={}", *max_iter));
        if (!data_dir.empty()) all.push_back("paths.data_dir=\"" + data_dir + "\"");
        if (!run_dir.empty()) all.push_back("paths.run_dir=\"" + run_dir + "\"");
        return tdks::apply_overrides(cfg, all);
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Learning correlation potentials for time-dependent Kohn-Sham propagation.\n"
                 "Thread count: OMP_NUM_THREADS."};
    app.require_subcommand(1);

    Common common;
    std::vector<double> momenta;
    int stride = 0;
    bool resume = false;
    std::string model = "functional";
    std::optional<int> extra;
    std::vector<std::string> files;
    std::vector<double> times;
    bool fs_units = false;
    std::string out_dir = "export";

    auto* gen = app.add_subcommand("generate-reference", "run the TDSE and write reference data");
    common.attach(gen);
    gen->add_option("--momenta", momenta, "subset of configured momenta")->delimiter(',');

    auto* inv = app.add_subcommand("invert-initial", "write exact KS initial pairs");
    common.attach(inv);
    inv->add_option("--momenta", momenta, "subset of configured momenta")->delimiter(',');
    inv->add_option("--stride", stride, "frame stride (default: the training strides)");

    auto* tp = app.add_subcommand("train-pointwise", "fit V^C pointwise on one trajectory");
    common.attach(tp);
    tp->add_flag("--resume", resume, "continue from the run's checkpoint");

    auto* tf = app.add_subcommand("train-functional", "fit the memory functional");
    common.attach(tf);
    tf->add_flag("--resume", resume, "continue from the run's checkpoint");

    auto* ro = app.add_subcommand("rollout", "propagate with a trained model and score it");
    common.attach(ro);
    ro->add_option("--model", model, "pointwise or functional")
        ->check(CLI::IsMember({"pointwise", "functional"}));
    ro->add_option("--momenta", momenta, "momenta to roll out")->delimiter(',');
    ro->add_option("--extra", extra, "frames beyond the training horizon");

    auto* ev = app.add_subcommand("evaluate", "score a trained model over the training horizon");
    common.attach(ev);
    ev->add_option("--model", model, "pointwise or functional")
        ->check(CLI::IsMember({"pointwise", "functional"}));
    ev->add_option("--momenta", momenta, "momenta to score")->delimiter(',');

    auto* ex = app.add_subcommand("export-csv", "write density snapshots as CSV");
    ex->add_option("files", files, "reference or rollout files")->required()->check(CLI::ExistingFile);
    ex->add_option("--times", times, "snapshot times")->required()->delimiter(',');
    ex->add_flag("--fs", fs_units, "times are in femtoseconds (default: atomic units)");
    ex->add_option("--out", out_dir, "output directory");

    auto* gc = app.add_subcommand("gradcheck", "compare adjoint gradients with finite differences");

    auto* show = app.add_subcommand("show-config", "print the resolved configuration");
    common.attach(show);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gc->parsed()) return tdks::cmd_gradcheck(std::cout);
        if (ex->parsed()) {
            tdks::ExportOptions o;
            for (const auto& f : files) o.files.emplace_back(f);
            o.times = times;
            o.times_in_fs = fs_units;
            o.out_dir = out_dir;
            tdks::cmd_export_csv(o, std::cout);
            return 0;
        }
        const tdks::RunConfig cfg = common.resolve();
        if (show->parsed()) {
            std::cout << tdks::to_json(cfg).dump(2) << "\n";
            return 0;
        }
        if (gen->parsed()) {
            tdks::cmd_generate_reference(cfg, {momenta}, std::cout);
        } else if (inv->parsed()) {
            tdks::cmd_invert_initial(cfg, {momenta, stride}, std::cout);
        } else if (tp->parsed()) {
            tdks::cmd_train_pointwise(cfg, {resume}, std::cout);
        } else if (tf->parsed()) {
            tdks::cmd_train_functional(cfg, {resume}, std::cout);
        } else if (ro->parsed()) {
            tdks::cmd_rollout(cfg, {tdks::parse_model_family(model), momenta, extra}, std::cout);
        } else if (ev->parsed()) {
            tdks::cmd_evaluate(cfg, {tdks::parse_model_family(model), momenta}, std::cout);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
