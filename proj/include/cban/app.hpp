#pragma once

#include "cban/checkpoint.hpp"
#include "cban/config.hpp"
#include "cban/datasets.hpp"
#include "cban/dynamics.hpp"
#include "cban/training.hpp"

#include <filesystem>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace cban {

using Metrics = std::vector<std::pair<std::string, double>>;

/// Training examples plus the held-out set used for evaluation and grids.
struct TaskData {
    Dataset train;
    std::vector<Tensor> test;     // unbatched visible-layer targets
    std::vector<int> test_labels;  // mnist only
};

TaskData load_task_data(const RunConfig& cfg);

/// Held-out items only, read from `data` (an MNIST directory or an image
/// folder); the bar task ignores it.
TaskData load_test_data(const RunConfig& cfg, const std::filesystem::path& data);

/// 2x2 block average, replicated back to full size. (c, h, w) in, same shape out.
Tensor downscale2(const Tensor& image);

/// (6, h, w) visible target: the downscaled copy in channels 0..2, the image in 3..5.
Tensor super_resolution_visible(const Tensor& image);

/// Observed units for a task's visible target.
Mask task_mask(const RunConfig& cfg, const Tensor& target, Rng& rng);

/// Settled batch: visible completion, top-down dream and per-item reports.
struct Completion {
    Tensor visible;
    Tensor dream;
    std::vector<SettleReport> reports;
};

Completion complete(const WeightBundle& w, const ArchSpec& arch, const Tensor& targets, const Mask& mask,
                    const TrainConfig& cfg, bool record_energy = false);

/// Observed values copied, everything else 0.
Tensor copy_evidence_baseline(const Tensor& targets, const Mask& mask);

/// Metric names reported by evaluate for a task, in order.
std::vector<std::string> metric_names(Task task);

/// Scores the weights on the held-out data; masks are drawn from a generator
/// seeded by the run seed so every call sees the same evidence.
Metrics evaluate(const RunConfig& cfg, const TaskData& data, const WeightBundle& w);

/// A visible tensor (unbatched) as a (c, h, w) picture for the task.
Tensor visible_image(Task task, const ArchSpec& arch, const Tensor& visible);

/// Rows target / completion / evidence (missing pixels in red) / dream for up
/// to cfg.eval.grid held-out items, written as a PPM.
void write_sample_grid(const std::filesystem::path& path, const RunConfig& cfg, const TaskData& data,
                       const WeightBundle& w);

/// Trains per the config, writing into cfg.output_dir: config.json,
/// train_log.csv, latest.ckpt after every epoch, and epoch_N.ckpt plus
/// samples_epoch_N.ppm on evaluation epochs.
TrainLog run_training(const RunConfig& cfg, std::ostream& progress);

/// Thread count from CBAN_THREADS, or `fallback` when unset.
int threads_from_env(int fallback);

/// The run configuration stored in a checkpoint's metadata.
RunConfig config_from_checkpoint(const Checkpoint& ckpt);

}  // namespace cban
