#pragma once

#include "cban/dynamics.hpp"
#include "cban/training.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace cban {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to resume training or run inference.
struct Checkpoint {
    ArchSpec arch;
    WeightBundle weights;
    OptimizerState optimizer;
    int epoch = 0;
    std::string rng_state;  // textual std::mt19937_64 state
    nlohmann::json metadata = nlohmann::json::object();  // e.g. the run configuration
};

Checkpoint make_checkpoint(const ArchSpec& arch, const TrainState& state, nlohmann::json metadata = {});

/// Restores a training state; the generator continues where it stopped.
TrainState restore_state(const Checkpoint& ckpt);

/// Little-endian container: "CBANCKPT", u32 version, u64 JSON length, JSON,
/// then float32 weights in parameter order followed by any Adam moments.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cban
