#include "cban/config.hpp"

#include "../support/scratch.hpp"

#include <doctest.h>

using namespace cban;
using namespace cban::testing;
using nlohmann::json;

namespace {

json bar_json() {
    return json::parse(R"({
        "task": "bar",
        "seed": 3,
        "output_dir": "out",
        "arch": {"layers": [{"units": 25}, {"units": 48}, {"units": 24}]},
        "train": {"loss": "delta_e_plus", "optimizer": {"kind": "sgd_l2", "lr": 0.01},
                  "lr_schedule": [[100, 0.1]], "batch_size": 20, "epochs": 2}
    })");
}

}  // namespace

TEST_CASE("run config parses with defaults") {
    const RunConfig c = run_config_from_json(bar_json(), "/base");
    CHECK(c.task == Task::Bar);
    CHECK(c.seed == 3);
    CHECK(c.train.seed == 3);
    CHECK(c.output_dir == std::filesystem::path("/base/out"));
    REQUIRE(c.arch.layers.size() == 3);
    CHECK(c.arch.layers[0].role == LayerRole::Visible);
    CHECK(c.arch.layers[2].units == 24);
    CHECK(c.arch.activation.is_tanh());
    CHECK(c.train.loss == LossKind::DeltaEPlus);
    CHECK(c.train.optimizer.kind == OptimizerConfig::Kind::SgdL2);
    CHECK(c.train.lr_at(150) == doctest::Approx(0.001));
    CHECK(c.train.theta == 0.01);
    CHECK(c.train.max_iters == 100);
    CHECK(c.train.evidence_mode == EvidenceConstraint::Mode::Clamp);
    CHECK(c.eval.every == 1);
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("run config survives a JSON round trip") {
    json j = bar_json();
    j["arch"] = json::parse(R"({"layers": [{"channels": 3, "height": 8, "width": 8},
                                           {"channels": 4, "height": 8, "width": 8},
                                           {"channels": 2, "height": 4, "width": 4, "pool": true}],
                                "kernel_sizes": [3, 3], "activation": {"leaky_sigmoid": 0.25},
                                "symmetric": false, "conv_init_std": 0.001})");
    j["task"] = "completion";
    j["mask"] = {{"kind", "patches"}, {"fraction", 0.25}, {"side_min", 3}, {"side_max", 6}};
    j["train"]["evidence_mode"] = "convex_mix";
    j["train"]["evidence_strength"] = 0.5;
    const RunConfig a = run_config_from_json(j, "/base");
    const RunConfig b = run_config_from_json(to_json(a));
    CHECK(to_json(a) == to_json(b));
    CHECK(b.arch.activation.alpha == 0.25);
    CHECK_FALSE(b.arch.symmetric);
    CHECK(b.arch.layers[2].pool_before);
    CHECK(b.mask.kind == MaskSpec::Kind::SquarePatches);
    CHECK(b.train.evidence_mode == EvidenceConstraint::Mode::ConvexMix);
    CHECK(b.train.evidence_strength == 0.5);
}

TEST_CASE("run config errors") {
    SUBCASE("seed is required") {
        json j = bar_json();
        j.erase("seed");
        CHECK_THROWS_WITH_AS(run_config_from_json(j), doctest::Contains("seed"), ConfigError);
    }
    SUBCASE("unknown keys are named") {
        json j = bar_json();
        j["train"]["learning_rate"] = 0.1;
        CHECK_THROWS_WITH_AS(run_config_from_json(j), doctest::Contains("learning_rate"), ConfigError);
    }
    SUBCASE("unknown enum values") {
        json j = bar_json();
        j["train"]["loss"] = "hinge";
        CHECK_THROWS_WITH_AS(run_config_from_json(j), doctest::Contains("hinge"), ConfigError);
    }
    SUBCASE("invalid leaky slope") {
        json j = bar_json();
        j["arch"]["activation"] = {{"leaky_sigmoid", 1.5}};
        CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
    }
    SUBCASE("bad architecture") {
        json j = bar_json();
        j["arch"]["layers"] = json::array({json{{"units", 25}}});
        CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
    }
    SUBCASE("visible size must fit the task") {
        json j = bar_json();
        j["arch"]["layers"][0]["units"] = 24;
        CHECK_THROWS_WITH_AS(run_config_from_json(j).validate(), doctest::Contains("25"), ConfigError);
    }
    SUBCASE("output directory is required") {
        json j = bar_json();
        j.erase("output_dir");
        CHECK_THROWS_WITH_AS(run_config_from_json(j).validate(), doctest::Contains("output_dir"), ConfigError);
    }
}

TEST_CASE("missing data paths are named") {
    ScratchDir dir;
    json j = bar_json();
    j["task"] = "mnist-supervised";
    j["arch"]["layers"][0]["units"] = 812;
    j["data"] = {{"mnist_dir", "no/such/place"}};
    spit(dir / "c.json", j.dump());
    CHECK_THROWS_WITH_AS(load_run_config(dir / "c.json"), doctest::Contains("no/such/place"), ConfigError);
    CHECK_THROWS_WITH_AS(load_run_config(dir / "absent.json"), doctest::Contains("absent.json"), ConfigError);
    spit(dir / "broken.json", "{ nope");
    CHECK_THROWS_AS(load_run_config(dir / "broken.json"), ConfigError);
}

TEST_CASE("relative paths resolve against the config file") {
    ScratchDir dir;
    std::filesystem::create_directories(dir / "imgs");
    json j = bar_json();
    j["task"] = "completion";
    j["arch"] = json::parse(R"({"layers": [{"channels": 1, "height": 8, "width": 8},
                                           {"channels": 2, "height": 8, "width": 8}]})");
    j["data"] = {{"image_dir", "imgs"}};
    spit(dir / "c.json", j.dump());
    const RunConfig c = load_run_config(dir / "c.json");
    CHECK(c.data.image_dir == dir / "imgs");
    CHECK(c.output_dir == dir / "out");
}

TEST_CASE("super-resolution needs six visible channels") {
    ScratchDir dir;
    std::filesystem::create_directories(dir / "imgs");
    json j = bar_json();
    j["task"] = "super-resolution";
    j["arch"] = json::parse(R"({"layers": [{"channels": 3, "height": 8, "width": 8},
                                           {"channels": 2, "height": 8, "width": 8}]})");
    j["data"] = {{"image_dir", (dir / "imgs").string()}};
    CHECK_THROWS_WITH_AS(run_config_from_json(j).validate(), doctest::Contains("6"), ConfigError);
}
