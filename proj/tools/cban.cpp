// cban: train, complete, evaluate and self-check bipartite attractor nets.

#include "cban/app.hpp"
#include "cban/checks.hpp"
#include "cban/metrics.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>

namespace fs = std::filesystem;
using namespace cban;

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;

struct MaskArgs {
    std::string kind;
    double fraction = -1.0;
    int frequency = 7;
    Index side_min = 3;
    Index side_max = 6;
    std::uint64_t seed = 1;
};

void require_exists(const fs::path& p) {
    if (!fs::exists(p)) throw DataError("no such file or directory: " + p.string());
}

int cmd_train(const fs::path& config) {
    require_exists(config);
    RunConfig cfg = load_run_config(config);
    cfg.train.threads = threads_from_env(cfg.train.threads);
    run_training(cfg, std::cout);
    std::cout << "wrote " << cfg.output_dir.string() << '\n';
    return kOk;
}

/// Visible target and mask from an image or a JSON evidence file.
std::pair<Tensor, Mask> read_evidence(const RunConfig& cfg, const fs::path& input, const MaskArgs& args) {
    const LayerSpec& vis = cfg.arch.layers.at(0);
    if (input.extension() == ".json") {
        std::ifstream in(input);
        const nlohmann::json j = nlohmann::json::parse(in);
        const auto values = j.at("values").get<std::vector<double>>();
        const auto observed = j.at("observed").get<std::vector<int>>();
        if (static_cast<Index>(values.size()) != vis.size() || observed.size() != values.size())
            throw DataError(input.string() + ": expected " + std::to_string(vis.size()) + " values and observed flags");
        Tensor t(vis.shape());
        Mask m(vis.shape());
        for (Index i = 0; i < t.size(); ++i) {
            t[i] = values[static_cast<std::size_t>(i)];
            m[i] = observed[static_cast<std::size_t>(i)] != 0;
        }
        return {t, m};
    }

    const Tensor image = read_pnm(input);
    MaskSpec spec;
    spec.kind = MaskSpec::Kind::None;
    if (!args.kind.empty()) {
        if (args.kind == "perlin") spec.kind = MaskSpec::Kind::Perlin;
        else if (args.kind == "patches") spec.kind = MaskSpec::Kind::SquarePatches;
        else if (args.kind == "bernoulli") spec.kind = MaskSpec::Kind::Bernoulli;
        else if (args.kind != "none") throw ConfigError("unknown mask kind '" + args.kind + "'");
    }
    if (args.fraction >= 0) spec.fraction = args.fraction;
    spec.frequency = args.frequency;
    spec.side_min = args.side_min;
    spec.side_max = args.side_max;
    spec.validate();
    Rng rng(args.seed);

    switch (cfg.task) {
        case Task::Bar:
        case Task::MnistSupervised: {
            const Index side = cfg.task == Task::Bar ? kBarSide : kMnistSide;
            if (image.shape() != Shape{1, side, side})
                throw DataError(input.string() + ": expected a " + std::to_string(side) + "x" + std::to_string(side) +
                                " grey image, got " + to_string(image.shape()));
            const Tensor pixels = image.reshaped({side, side});
            const Mask pm = make_pixel_mask(spec, pixels, rng);
            if (cfg.task == Task::Bar) return {pixels.reshaped({side * side}), pm.reshaped({side * side})};
            return {mnist_visible(pixels, 0), mnist_mask(pm)};
        }
        case Task::Completion: {
            if (image.shape() != vis.shape())
                throw DataError(input.string() + ": image shape " + to_string(image.shape()) +
                                " does not match the visible layer " + to_string(vis.shape()));
            return {image, broadcast_mask(make_pixel_mask(spec, image, rng), image.dim(0))};
        }
        case Task::SuperResolution: {
            const Shape want{3, vis.height, vis.width};
            if (image.shape() != want)
                throw DataError(input.string() + ": image shape " + to_string(image.shape()) + " does not match " +
                                to_string(want));
            Tensor t(vis.shape());
            t.vec().head(image.size()) = image.vec();
            Mask m(vis.shape());
            m.vec().head(image.size()).setOnes();
            return {t, m};
        }
    }
    throw std::logic_error("unknown task");
}

int cmd_complete(const fs::path& ckpt_path, const fs::path& input, const fs::path& out, const MaskArgs& args) {
    require_exists(ckpt_path);
    require_exists(input);
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const RunConfig cfg = config_from_checkpoint(ckpt);
    auto [target, mask] = read_evidence(cfg, input, args);

    const Shape batched = cfg.arch.layers[0].batched_shape(1);
    const Completion c = complete(ckpt.weights, cfg.arch, target.reshaped(batched), mask.reshaped(batched), cfg.train, true);
    const SettleReport& r = c.reports.at(0);

    fs::create_directories(out);
    const Tensor visible = c.visible.item(0), dream = c.dream.item(0);
    const bool color = visible_image(cfg.task, cfg.arch, visible).dim(0) == 3;
    const std::string ext = color ? ".ppm" : ".pgm";
    write_pnm(out / ("completion" + ext), visible_image(cfg.task, cfg.arch, visible));
    write_pnm(out / ("dream" + ext), visible_image(cfg.task, cfg.arch, dream));
    {
        std::ofstream csv(out / "trace.csv");
        csv << "iteration,energy,max_delta\n" << std::setprecision(12);
        for (std::size_t t = 0; t < r.energy_trace.size(); ++t)
            csv << t + 1 << ',' << r.energy_trace[t] << ',' << r.max_delta_trace.at(t) << '\n';
    }
    {
        nlohmann::json j = {{"values", std::vector<double>(visible.data(), visible.data() + visible.size())},
                            {"dream", std::vector<double>(dream.data(), dream.data() + dream.size())},
                            {"t_star", r.t_star},
                            {"converged", r.converged},
                            {"cycle_length", r.cycle_length}};
        if (cfg.task == Task::MnistSupervised) j["label"] = decode_label(label_row(visible));
        std::ofstream(out / "completion.json") << j.dump() << '\n';
    }

    std::cout << "t* " << r.t_star << (r.converged ? " (converged)" : " (not converged)");
    if (r.cycle_length) std::cout << ", cycle of length " << r.cycle_length;
    if (cfg.task == Task::MnistSupervised) std::cout << ", label " << decode_label(label_row(visible));
    std::cout << "\nwrote " << out.string() << '\n';
    return r.converged ? kOk : kFailed;
}

int cmd_eval(const fs::path& ckpt_path, const fs::path& data_path, std::size_t samples) {
    require_exists(ckpt_path);
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    RunConfig cfg = config_from_checkpoint(ckpt);
    if (samples) cfg.eval.samples = samples;
    TaskData data;
    if (cfg.task != Task::Bar) {
        if (data_path.empty()) throw ConfigError("--data is required for task " + to_string(cfg.task));
        require_exists(data_path);
        data = load_test_data(cfg, data_path);
    }
    for (const auto& [name, value] : evaluate(cfg, data, ckpt.weights))
        std::cout << std::left << std::setw(22) << name << value << '\n';
    return kOk;
}

int cmd_check(const std::string& suite, const CheckOptions& opt) {
    const auto& names = suite_names();
    std::vector<std::string> run;
    if (suite == "all") run = names;
    else if (std::find(names.begin(), names.end(), suite) != names.end()) run = {suite};
    else throw ConfigError("unknown suite '" + suite + "'");

    bool ok = true;
    for (const auto& s : run)
        for (const CheckRow& row : run_suite(s, opt)) {
            std::cout << (row.passed ? "PASS  " : "FAIL  ") << std::left << std::setw(12) << s << std::setw(42)
                      << row.name << row.detail << '\n';
            ok &= row.passed;
        }
    return ok ? kOk : kFailed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bipartite attractor networks: training, completion and self-checks"};
    app.require_subcommand(1);

    fs::path config;
    auto* train = app.add_subcommand("train", "Train a network from a JSON run configuration");
    train->add_option("--config", config, "Run configuration")->required();

    fs::path ckpt, input, out = "completion", data;
    MaskArgs mask;
    auto* comp = app.add_subcommand("complete", "Settle a trained network from partial evidence");
    comp->add_option("--ckpt", ckpt, "Checkpoint")->required();
    comp->add_option("--input", input, "Image (.pgm/.ppm) or evidence file (.json with values and observed)")
        ->required();
    comp->add_option("--out", out, "Output directory")->capture_default_str();
    comp->add_option("--mask", mask.kind, "Mask applied to an image input")
        ->check(CLI::IsMember({"none", "perlin", "patches", "bernoulli"}));
    comp->add_option("--fraction", mask.fraction, "Obscured fraction (perlin), white-pixel target (patches) or p");
    comp->add_option("--frequency", mask.frequency, "Perlin lattice frequency")->capture_default_str();
    comp->add_option("--side-min", mask.side_min, "Smallest patch side")->capture_default_str();
    comp->add_option("--side-max", mask.side_max, "Largest patch side")->capture_default_str();
    comp->add_option("--seed", mask.seed, "Mask seed")->capture_default_str();

    std::size_t samples = 0;
    auto* eval = app.add_subcommand("eval", "Score a checkpoint on held-out data");
    eval->add_option("--ckpt", ckpt, "Checkpoint")->required();
    eval->add_option("--data", data, "MNIST directory or image folder (unused for the bar task)");
    eval->add_option("--samples", samples, "Evaluation items (default: the run's setting)");

    std::string suite;
    CheckOptions opt;
    auto* check = app.add_subcommand("check", "Run a randomized property suite");
    check->add_option("--suite", suite, "gradients | energy | convergence | bound | all")->required();
    check->add_option("--trials", opt.trials, "Random instances per property")->capture_default_str();
    check->add_option("--seed", opt.seed, "Seed")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*train) return cmd_train(config);
        if (*comp) return cmd_complete(ckpt, input, out, mask);
        if (*eval) return cmd_eval(ckpt, data, samples);
        if (*check) return cmd_check(suite, opt);
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailed;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    }
    return kUsage;
}
