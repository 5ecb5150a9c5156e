#pragma once

#include "cban/datasets.hpp"
#include "cban/dynamics.hpp"
#include "cban/training.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace cban {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Task { Bar, MnistSupervised, Completion, SuperResolution };

/// Where the examples come from. Unused fields stay empty.
struct DataPaths {
    std::filesystem::path mnist_dir;       // train-/t10k- IDX files
    std::filesystem::path image_dir;       // training images (.pgm / .ppm)
    std::filesystem::path test_image_dir;  // held-out images
    std::size_t limit = 0;                 // 0 = everything
    std::size_t test_limit = 0;
};

struct EvalOptions {
    int every = 1;              // evaluate after every n-th epoch; 0 = only at the end
    std::size_t samples = 500;  // fresh evaluation items (bar) or test images used
    std::size_t grid = 8;       // examples per row of the sample grids
};

struct RunConfig {
    Task task = Task::Bar;
    ArchSpec arch;
    TrainConfig train;
    MaskSpec mask;
    DataPaths data;
    EvalOptions eval;
    std::filesystem::path output_dir;
    std::uint64_t seed = 0;

    /// Throws ConfigError naming the first problem, including missing paths.
    void validate() const;
};

std::string to_string(Task task);

nlohmann::json to_json(const ArchSpec& arch);
ArchSpec arch_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MaskSpec& spec);
MaskSpec mask_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);

/// Relative data and output paths are resolved against `base`.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base = {});
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace cban
