#include "tdks/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

#include "tdks/hashing.hpp"

namespace tdks {

using nlohmann::json;

GridSpec RunConfig::tdse_grid() const {
    return build_grid(domain.l_min, domain.l_max, domain.tdse_J, tdse.dt * tdse.steps, tdse.steps);
}

GridSpec RunConfig::reference_grid() const {
    GridSpec g = coarsen(tdse_grid(), domain.subsample);
    g.dt = tdse.dt * tdse.save_stride;
    g.K = tdse.steps / tdse.save_stride;
    g.T = g.K * g.dt;
    return g;
}

PacketSpec RunConfig::packet(double momentum) const {
    PacketSpec p;
    p.center = tdse.packet_center;
    p.width = tdse.packet_width;
    p.momentum = momentum;
    return p;
}

MlpShape RunConfig::model_shape() const {
    MlpShape s;
    s.kind = functional.kind;
    s.points = domain.tdse_J / domain.subsample + 1;
    s.hidden_width = functional.hidden_width;
    s.hidden_layers = functional.hidden_layers;
    s.use_previous = functional.use_previous;
    return s;
}

namespace {

[[noreturn]] void bad(const std::string& msg) { throw std::invalid_argument("config: " + msg); }

bool contains(const std::vector<double>& v, double x) {
    return std::find(v.begin(), v.end(), x) != v.end();
}

}  // namespace

void RunConfig::validate() const {
    if (preset != "desk" && preset != "paper") bad("preset must be 'desk' or 'paper'");
    if (!(domain.l_max > domain.l_min)) bad("domain.l_max must exceed domain.l_min");
    if (domain.subsample < 1) bad("domain.subsample must be at least 1");
    if (domain.tdse_J < 4 || domain.tdse_J % 2 != 0) bad("domain.tdse_J must be even and >= 4");
    if (domain.tdse_J % domain.subsample != 0) bad("domain.subsample must divide domain.tdse_J");
    const int coarse_J = domain.tdse_J / domain.subsample;
    if (coarse_J < 4 || coarse_J % 2 != 0) {
        bad(fmt::format("coarse grid J = {} must be even and >= 4", coarse_J));
    }
    if (!(tdse.dt > 0.0)) bad("tdse.dt must be positive");
    if (tdse.steps < 1) bad("tdse.steps must be at least 1");
    if (tdse.save_stride < 1 || tdse.steps % tdse.save_stride != 0) {
        bad("tdse.save_stride must divide tdse.steps");
    }
    if (!(tdse.packet_width > 0.0)) bad("tdse.packet_width must be positive");
    if (momenta.empty()) bad("momenta must not be empty");
    const int saved = tdse.steps / tdse.save_stride;  // last saved frame index

    if (!contains(momenta, pointwise.momentum)) bad("pointwise.momentum must be listed in momenta");
    if (pointwise.frame_stride < 1) bad("pointwise.frame_stride must be at least 1");
    if (pointwise.frames < 2) bad("pointwise.frames must be at least 2");
    if ((pointwise.frames - 1) * pointwise.frame_stride > saved) {
        bad(fmt::format("pointwise needs {} saved frames but the reference has {}",
                        (pointwise.frames - 1) * pointwise.frame_stride + 1, saved + 1));
    }
    if (pointwise.mu < 0.0) bad("pointwise.mu must be non-negative");

    const auto& f = functional;
    if (f.train_momenta.empty()) bad("functional.train_momenta must not be empty");
    for (double p : f.train_momenta) {
        if (!contains(momenta, p)) bad(fmt::format("functional.train_momenta: {} not in momenta", p));
    }
    for (double p : f.test_momenta) {
        if (!contains(momenta, p)) bad(fmt::format("functional.test_momenta: {} not in momenta", p));
    }
    if (f.frame_stride < 1) bad("functional.frame_stride must be at least 1");
    if (f.frames < 3) bad("functional.frames must be at least 3");
    if (f.extra_frames < 0) bad("functional.extra_frames must be non-negative");
    if ((f.frames - 1 + f.extra_frames) * f.frame_stride > saved) {
        bad(fmt::format("functional rollout needs {} saved frames but the reference has {}",
                        (f.frames - 1 + f.extra_frames) * f.frame_stride + 1, saved + 1));
    }
    if (f.hidden_width < 1 || f.hidden_layers < 1) bad("functional hidden sizes must be positive");
    if (!(f.sigma > 0.0)) bad("functional.sigma must be positive");
    optimizer.lbfgs.validate();
    if (optimizer.checkpoint_every < 0) bad("optimizer.checkpoint_every must be non-negative");
}

RunConfig preset_config(const std::string& name) {
    RunConfig c;
    if (name == "desk") {
        // Desk objectives are O(1e-4); an absolute 1e-6 gradient test would stop at once.
        c.optimizer.lbfgs.grad_tol = 1e-12;
        return c;
    }
    if (name == "paper") {
        c.preset = "paper";
        c.domain = {-80.0, 40.0, 1200, 2};
        c.tdse.dt = fs_to_au(2.4e-5);
        c.tdse.steps = 36000;
        c.tdse.save_stride = 1;
        c.pointwise = {-1.5, 1, 30001, 1e-5};
        c.functional.frame_stride = 100;
        c.functional.frames = 301;
        c.functional.extra_frames = 60;
        c.functional.hidden_width = 256;
        c.optimizer.lbfgs.max_iter = 15000;
        c.optimizer.lbfgs.grad_tol = 1e-6;
        c.optimizer.checkpoint_every = 100;
        return c;
    }
    bad(fmt::format("unknown preset '{}' (expected 'desk' or 'paper')", name));
}

json to_json(const RunConfig& c) {
    const auto& l = c.optimizer.lbfgs;
    return {
        {"preset", c.preset},
        {"domain",
         {{"l_min", c.domain.l_min},
          {"l_max", c.domain.l_max},
          {"tdse_J", c.domain.tdse_J},
          {"subsample", c.domain.subsample}}},
        {"tdse",
         {{"dt", c.tdse.dt},
          {"steps", c.tdse.steps},
          {"save_stride", c.tdse.save_stride},
          {"packet_center", c.tdse.packet_center},
          {"packet_width", c.tdse.packet_width}}},
        {"momenta", c.momenta},
        {"pointwise",
         {{"momentum", c.pointwise.momentum},
          {"frame_stride", c.pointwise.frame_stride},
          {"frames", c.pointwise.frames},
          {"mu", c.pointwise.mu}}},
        {"functional",
         {{"kind", to_string(c.functional.kind)},
          {"train_momenta", c.functional.train_momenta},
          {"test_momenta", c.functional.test_momenta},
          {"frame_stride", c.functional.frame_stride},
          {"frames", c.functional.frames},
          {"extra_frames", c.functional.extra_frames},
          {"hidden_width", c.functional.hidden_width},
          {"hidden_layers", c.functional.hidden_layers},
          {"use_previous", c.functional.use_previous},
          {"seed", c.functional.seed},
          {"sigma", c.functional.sigma}}},
        {"optimizer",
         {{"memory", l.memory},
          {"grad_tol", l.grad_tol},
          {"rel_f_tol", l.rel_f_tol},
          {"max_iter", l.max_iter},
          {"c1", l.c1},
          {"c2", l.c2},
          {"max_line_search_evals", l.max_line_search_evals},
          {"checkpoint_every", c.optimizer.checkpoint_every}}},
        {"paths", {{"data_dir", c.paths.data_dir}, {"run_dir", c.paths.run_dir}}},
    };
}

namespace {

// Recursively copies `patch` into `base`; every key must already exist in `base`.
void merge_strict(json& base, const json& patch, const std::string& where) {
    if (!patch.is_object()) bad(fmt::format("'{}' must be an object", where.empty() ? "<root>" : where));
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const std::string path = where.empty() ? it.key() : where + "." + it.key();
        if (!base.contains(it.key())) bad(fmt::format("unknown key '{}'", path));
        json& target = base[it.key()];
        if (target.is_object()) {
            merge_strict(target, it.value(), path);
        } else {
            target = it.value();
        }
    }
}

// Unit-tagged inputs: tdse.dt_fs is converted to tdse.dt.
json normalize_units(json patch) {
    if (patch.contains("tdse") && patch["tdse"].is_object() && patch["tdse"].contains("dt_fs")) {
        json& t = patch["tdse"];
        if (t.contains("dt")) bad("give either tdse.dt or tdse.dt_fs, not both");
        t["dt"] = fs_to_au(t["dt_fs"].get<double>());
        t.erase("dt_fs");
    }
    return patch;
}

template <typename T>
T get(const json& j, const char* section, const char* key) {
    try {
        return j.at(section).at(key).get<T>();
    } catch (const json::exception& e) {
        bad(fmt::format("'{}.{}': {}", section, key, e.what()));
    }
}

RunConfig parse_full(const json& j) {
    RunConfig c;
    try {
        c.preset = j.at("preset").get<std::string>();
        c.momenta = j.at("momenta").get<std::vector<double>>();
    } catch (const json::exception& e) {
        bad(e.what());
    }
    c.domain.l_min = get<double>(j, "domain", "l_min");
    c.domain.l_max = get<double>(j, "domain", "l_max");
    c.domain.tdse_J = get<int>(j, "domain", "tdse_J");
    c.domain.subsample = get<int>(j, "domain", "subsample");
    c.tdse.dt = get<double>(j, "tdse", "dt");
    c.tdse.steps = get<int>(j, "tdse", "steps");
    c.tdse.save_stride = get<int>(j, "tdse", "save_stride");
    c.tdse.packet_center = get<double>(j, "tdse", "packet_center");
    c.tdse.packet_width = get<double>(j, "tdse", "packet_width");
    c.pointwise.momentum = get<double>(j, "pointwise", "momentum");
    c.pointwise.frame_stride = get<int>(j, "pointwise", "frame_stride");
    c.pointwise.frames = get<int>(j, "pointwise", "frames");
    c.pointwise.mu = get<double>(j, "pointwise", "mu");
    c.functional.kind = parse_model_kind(get<std::string>(j, "functional", "kind"));
    c.functional.train_momenta = get<std::vector<double>>(j, "functional", "train_momenta");
    c.functional.test_momenta = get<std::vector<double>>(j, "functional", "test_momenta");
    c.functional.frame_stride = get<int>(j, "functional", "frame_stride");
    c.functional.frames = get<int>(j, "functional", "frames");
    c.functional.extra_frames = get<int>(j, "functional", "extra_frames");
    c.functional.hidden_width = get<int>(j, "functional", "hidden_width");
    c.functional.hidden_layers = get<int>(j, "functional", "hidden_layers");
    c.functional.use_previous = get<bool>(j, "functional", "use_previous");
    c.functional.seed = get<std::uint64_t>(j, "functional", "seed");
    c.functional.sigma = get<double>(j, "functional", "sigma");
    auto& l = c.optimizer.lbfgs;
    l.memory = get<int>(j, "optimizer", "memory");
    l.grad_tol = get<double>(j, "optimizer", "grad_tol");
    l.rel_f_tol = get<double>(j, "optimizer", "rel_f_tol");
    l.max_iter = get<int>(j, "optimizer", "max_iter");
    l.c1 = get<double>(j, "optimizer", "c1");
    l.c2 = get<double>(j, "optimizer", "c2");
    l.max_line_search_evals = get<int>(j, "optimizer", "max_line_search_evals");
    c.optimizer.checkpoint_every = get<int>(j, "optimizer", "checkpoint_every");
    c.paths.data_dir = get<std::string>(j, "paths", "data_dir");
    c.paths.run_dir = get<std::string>(j, "paths", "run_dir");
    c.validate();
    return c;
}

}  // namespace

RunConfig config_from_json(const json& j) {
    if (!j.is_object()) bad("top level must be an object");
    const std::string name = j.value("preset", std::string("desk"));
    json base = to_json(preset_config(name));
    merge_strict(base, normalize_units(j), "");
    return parse_full(base);
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(fmt::format("config: cannot open '{}'", path));
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw std::runtime_error(fmt::format("config '{}': {}", path, e.what()));
    }
    try {
        return config_from_json(j);
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(fmt::format("{} (in '{}')", e.what(), path));
    }
}

RunConfig apply_overrides(const RunConfig& cfg, const std::vector<std::string>& overrides) {
    if (overrides.empty()) return cfg;
    json patch = json::object();
    for (const auto& item : overrides) {
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0) {
            bad(fmt::format("override '{}' must look like key.path=value", item));
        }
        const std::string key = item.substr(0, eq);
        const std::string text = item.substr(eq + 1);
        json value;
        try {
            value = json::parse(text);
        } catch (const json::exception&) {
            value = text;
        }
        json* node = &patch;
        std::stringstream ss(key);
        std::string part;
        std::vector<std::string> parts;
        while (std::getline(ss, part, '.')) parts.push_back(part);
        for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
            if (!node->contains(parts[i])) (*node)[parts[i]] = json::object();
            node = &(*node)[parts[i]];
        }
        (*node)[parts.back()] = value;
    }
    if (patch.contains("preset")) bad("the preset cannot be changed by an override");
    json base = to_json(cfg);
    merge_strict(base, normalize_units(patch), "");
    return parse_full(base);
}

std::string data_hash(const RunConfig& cfg) {
    const json j = to_json(cfg);
    const json d = {{"domain", j["domain"]}, {"tdse", j["tdse"]}};
    Hasher h;
    h.update(d.dump());
    return h.short_digest();
}

std::string config_hash(const RunConfig& cfg) {
    json j = to_json(cfg);
    j.erase("paths");
    Hasher h;
    h.update(j.dump());
    return h.short_digest();
}

}  // namespace tdks
