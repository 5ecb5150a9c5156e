#include "cban/config.hpp"

#include <fstream>
#include <initializer_list>
#include <set>

namespace cban {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, _] : j.items())
        if (!ok.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <class T>
T get(const json& j, const char* key, T fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

template <class E>
E lookup(const std::string& name, std::initializer_list<std::pair<const char*, E>> table, const std::string& where) {
    for (const auto& [n, e] : table)
        if (name == n) return e;
    std::string names;
    for (const auto& [n, _] : table) names += names.empty() ? n : std::string(", ") + n;
    throw ConfigError(where + ": '" + name + "' is not one of " + names);
}

template <class E>
const char* name_of(E value, std::initializer_list<std::pair<const char*, E>> table) {
    for (const auto& [n, e] : table)
        if (e == value) return n;
    throw std::logic_error("unnamed enum value");
}

constexpr std::initializer_list<std::pair<const char*, Task>> kTasks = {
    {"bar", Task::Bar},
    {"mnist-supervised", Task::MnistSupervised},
    {"completion", Task::Completion},
    {"super-resolution", Task::SuperResolution}};

constexpr std::initializer_list<std::pair<const char*, LossKind>> kLosses = {
    {"se", LossKind::SE}, {"delta_e", LossKind::DeltaE}, {"delta_e_plus", LossKind::DeltaEPlus}};

constexpr std::initializer_list<std::pair<const char*, OptimizerConfig::Kind>> kOptimizers = {
    {"sgd_l2", OptimizerConfig::Kind::SgdL2},
    {"sgd_linf", OptimizerConfig::Kind::SgdLinf},
    {"adam", OptimizerConfig::Kind::Adam}};

constexpr std::initializer_list<std::pair<const char*, EvidenceConstraint::Mode>> kModes = {
    {"clamp", EvidenceConstraint::Mode::Clamp},
    {"external_bias", EvidenceConstraint::Mode::ExternalBias},
    {"convex_mix", EvidenceConstraint::Mode::ConvexMix},
    {"replicated", EvidenceConstraint::Mode::Replicated}};

constexpr std::initializer_list<std::pair<const char*, MaskSpec::Kind>> kMasks = {
    {"none", MaskSpec::Kind::None},
    {"perlin", MaskSpec::Kind::Perlin},
    {"patches", MaskSpec::Kind::SquarePatches},
    {"bernoulli", MaskSpec::Kind::Bernoulli}};

}  // namespace

std::string to_string(Task task) { return name_of(task, kTasks); }

json to_json(const ArchSpec& arch) {
    json layers = json::array();
    for (const LayerSpec& l : arch.layers) {
        json o;
        if (l.is_conv()) {
            o = {{"channels", l.channels}, {"height", l.height}, {"width", l.width}};
            if (l.pool_before) o["pool"] = true;
        } else {
            o = {{"units", l.units}};
        }
        o["role"] = l.role == LayerRole::Visible ? "visible" : "hidden";
        layers.push_back(o);
    }
    json act = arch.activation.is_tanh() ? json("tanh") : json{{"leaky_sigmoid", arch.activation.alpha}};
    return {{"layers", layers},
            {"kernel_sizes", arch.kernel_sizes},
            {"activation", act},
            {"symmetric", arch.symmetric},
            {"conv_init_std", arch.conv_init_std}};
}

ArchSpec arch_from_json(const json& j) {
    const std::string where = "arch";
    check_keys(j, {"layers", "kernel_sizes", "activation", "symmetric", "conv_init_std"}, where);
    ArchSpec a;
    if (!j.contains("layers") || !j["layers"].is_array()) throw ConfigError("arch.layers: expected a list");
    for (std::size_t i = 0; i < j["layers"].size(); ++i) {
        const json& l = j["layers"][i];
        const std::string lw = where + ".layers[" + std::to_string(i) + "]";
        check_keys(l, {"units", "channels", "height", "width", "pool", "role"}, lw);
        const std::string role = get<std::string>(l, "role", i == 0 ? "visible" : "hidden", lw);
        const LayerRole r = lookup<LayerRole>(role, {{"visible", LayerRole::Visible}, {"hidden", LayerRole::Hidden}}, lw + ".role");
        if (l.contains("units")) {
            if (l.contains("channels") || l.contains("pool")) throw ConfigError(lw + ": mixes fc and conv fields");
            a.layers.push_back(LayerSpec::fc(get<Index>(l, "units", 0, lw), r));
        } else {
            a.layers.push_back(LayerSpec::conv(get<Index>(l, "channels", 0, lw), get<Index>(l, "height", 0, lw),
                                               get<Index>(l, "width", 0, lw), get<bool>(l, "pool", false, lw), r));
        }
    }
    a.kernel_sizes = get<std::vector<Index>>(j, "kernel_sizes", {}, where);
    if (j.contains("activation")) {
        const json& act = j["activation"];
        if (act.is_string() && act.get<std::string>() == "tanh") {
            a.activation = ActivationKind::tanh();
        } else if (act.is_object() && act.contains("leaky_sigmoid")) {
            try {
                a.activation = ActivationKind::leaky_sigmoid(act["leaky_sigmoid"].get<double>());
            } catch (const std::exception& e) {
                throw ConfigError(std::string("arch.activation: ") + e.what());
            }
        } else {
            throw ConfigError("arch.activation: expected \"tanh\" or {\"leaky_sigmoid\": alpha}");
        }
    }
    a.symmetric = get<bool>(j, "symmetric", true, where);
    a.conv_init_std = get<double>(j, "conv_init_std", 0.01, where);
    try {
        a.validate();
    } catch (const ArchError& e) {
        throw ConfigError(std::string("arch: ") + e.what());
    }
    return a;
}

json to_json(const TrainConfig& c) {
    return {{"loss", name_of(c.loss, kLosses)},
            {"optimizer",
             {{"kind", name_of(c.optimizer.kind, kOptimizers)},
              {"lr", c.optimizer.lr},
              {"beta1", c.optimizer.beta1},
              {"beta2", c.optimizer.beta2},
              {"eps", c.optimizer.eps}}},
            {"lr_schedule", c.lr_schedule},
            {"theta", c.theta},
            {"max_iters", c.max_iters},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"evidence_mode", name_of(c.evidence_mode, kModes)},
            {"evidence_strength", c.evidence_strength},
            {"threads", c.threads}};
}

TrainConfig train_from_json(const json& j) {
    const std::string where = "train";
    check_keys(j, {"loss", "optimizer", "lr_schedule", "theta", "max_iters", "batch_size", "epochs",
                   "evidence_mode", "evidence_strength", "threads"},
               where);
    TrainConfig c;
    c.loss = lookup(get<std::string>(j, "loss", "delta_e_plus", where), kLosses, "train.loss");
    if (j.contains("optimizer")) {
        const json& o = j["optimizer"];
        const std::string ow = where + ".optimizer";
        check_keys(o, {"kind", "lr", "beta1", "beta2", "eps"}, ow);
        c.optimizer.kind = lookup(get<std::string>(o, "kind", "sgd_l2", ow), kOptimizers, ow + ".kind");
        c.optimizer.lr = get<double>(o, "lr", c.optimizer.lr, ow);
        c.optimizer.beta1 = get<double>(o, "beta1", c.optimizer.beta1, ow);
        c.optimizer.beta2 = get<double>(o, "beta2", c.optimizer.beta2, ow);
        c.optimizer.eps = get<double>(o, "eps", c.optimizer.eps, ow);
    }
    c.lr_schedule = get<std::vector<std::pair<int, double>>>(j, "lr_schedule", {}, where);
    c.theta = get<double>(j, "theta", c.theta, where);
    c.max_iters = get<int>(j, "max_iters", c.max_iters, where);
    c.batch_size = get<Index>(j, "batch_size", c.batch_size, where);
    c.epochs = get<int>(j, "epochs", c.epochs, where);
    c.evidence_mode = lookup(get<std::string>(j, "evidence_mode", "clamp", where), kModes, "train.evidence_mode");
    c.evidence_strength = get<double>(j, "evidence_strength", c.evidence_strength, where);
    c.threads = get<int>(j, "threads", c.threads, where);
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("train: ") + e.what());
    }
    return c;
}

json to_json(const MaskSpec& m) {
    return {{"kind", name_of(m.kind, kMasks)}, {"frequency", m.frequency}, {"fraction", m.fraction},
            {"side_min", m.side_min},          {"side_max", m.side_max},   {"mask_label", m.mask_label}};
}

MaskSpec mask_from_json(const json& j) {
    const std::string where = "mask";
    check_keys(j, {"kind", "frequency", "fraction", "side_min", "side_max", "mask_label"}, where);
    MaskSpec m;
    m.kind = lookup(get<std::string>(j, "kind", "perlin", where), kMasks, "mask.kind");
    m.frequency = get<int>(j, "frequency", m.frequency, where);
    m.fraction = get<double>(j, "fraction", m.fraction, where);
    m.side_min = get<Index>(j, "side_min", m.side_min, where);
    m.side_max = get<Index>(j, "side_max", m.side_max, where);
    m.mask_label = get<bool>(j, "mask_label", m.mask_label, where);
    try {
        m.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("mask: ") + e.what());
    }
    return m;
}

json to_json(const RunConfig& c) {
    json data = json::object();
    if (!c.data.mnist_dir.empty()) data["mnist_dir"] = c.data.mnist_dir.string();
    if (!c.data.image_dir.empty()) data["image_dir"] = c.data.image_dir.string();
    if (!c.data.test_image_dir.empty()) data["test_image_dir"] = c.data.test_image_dir.string();
    if (c.data.limit) data["limit"] = c.data.limit;
    if (c.data.test_limit) data["test_limit"] = c.data.test_limit;
    return {{"task", to_string(c.task)},
            {"seed", c.seed},
            {"output_dir", c.output_dir.string()},
            {"arch", to_json(c.arch)},
            {"train", to_json(c.train)},
            {"mask", to_json(c.mask)},
            {"data", data},
            {"eval", {{"every", c.eval.every}, {"samples", c.eval.samples}, {"grid", c.eval.grid}}}};
}

RunConfig run_config_from_json(const json& j, const fs::path& base) {
    check_keys(j, {"task", "seed", "output_dir", "arch", "train", "mask", "data", "eval"}, "config");
    RunConfig c;
    if (!j.contains("task")) throw ConfigError("config: missing 'task'");
    c.task = lookup(j["task"].get<std::string>(), kTasks, "config.task");
    if (!j.contains("seed")) throw ConfigError("config: missing 'seed' (runs must be seeded)");
    c.seed = get<std::uint64_t>(j, "seed", 0, "config");
    if (!j.contains("arch")) throw ConfigError("config: missing 'arch'");
    c.arch = arch_from_json(j["arch"]);
    c.train = j.contains("train") ? train_from_json(j["train"]) : TrainConfig{};
    c.train.seed = c.seed;
    if (j.contains("mask")) c.mask = mask_from_json(j["mask"]);
    auto resolve = [&](const std::string& p) { return p.empty() || fs::path(p).is_absolute() ? fs::path(p) : base / p; };
    if (j.contains("data")) {
        const json& d = j["data"];
        check_keys(d, {"mnist_dir", "image_dir", "test_image_dir", "limit", "test_limit"}, "data");
        c.data.mnist_dir = resolve(get<std::string>(d, "mnist_dir", "", "data"));
        c.data.image_dir = resolve(get<std::string>(d, "image_dir", "", "data"));
        c.data.test_image_dir = resolve(get<std::string>(d, "test_image_dir", "", "data"));
        c.data.limit = get<std::size_t>(d, "limit", 0, "data");
        c.data.test_limit = get<std::size_t>(d, "test_limit", 0, "data");
    }
    if (j.contains("eval")) {
        const json& e = j["eval"];
        check_keys(e, {"every", "samples", "grid"}, "eval");
        c.eval.every = get<int>(e, "every", c.eval.every, "eval");
        c.eval.samples = get<std::size_t>(e, "samples", c.eval.samples, "eval");
        c.eval.grid = get<std::size_t>(e, "grid", c.eval.grid, "eval");
    }
    c.output_dir = resolve(get<std::string>(j, "output_dir", "", "config"));
    return c;
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    RunConfig c = run_config_from_json(j, path.parent_path());
    c.validate();
    return c;
}

void RunConfig::validate() const {
    if (output_dir.empty()) throw ConfigError("config: 'output_dir' is required");
    if (eval.every < 0) throw ConfigError("eval.every must be >= 0");
    const LayerSpec& vis = arch.layers.at(0);
    auto need_dir = [](const fs::path& p, const char* what) {
        if (p.empty()) throw ConfigError(std::string("data.") + what + " is required for this task");
        if (!fs::exists(p)) throw ConfigError(std::string("data.") + what + ": path does not exist: " + p.string());
    };
    switch (task) {
        case Task::Bar:
            if (vis.size() != kBarSide * kBarSide) throw ConfigError("bar task needs 25 visible units");
            break;
        case Task::MnistSupervised:
            need_dir(data.mnist_dir, "mnist_dir");
            if (vis.size() != kMnistVisible) throw ConfigError("mnist-supervised needs 812 visible units");
            break;
        case Task::Completion:
        case Task::SuperResolution:
            need_dir(data.image_dir, "image_dir");
            if (!data.test_image_dir.empty()) need_dir(data.test_image_dir, "test_image_dir");
            if (!vis.is_conv()) throw ConfigError("image tasks need a conv visible layer");
            if (task == Task::SuperResolution && vis.channels != 6)
                throw ConfigError("super-resolution needs 6 visible channels (3 evidence, 3 output)");
            break;
    }
}

}  // namespace cban
