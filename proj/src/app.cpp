#include "cban/app.hpp"

#include "cban/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace cban {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr Index kEvalChunk = 100;
constexpr std::uint64_t kEvalStream = 0x6576616cULL;

std::vector<Tensor> first_n(std::vector<Tensor> v, std::size_t n) {
    if (n && v.size() > n) v.resize(n);
    return v;
}

std::vector<Tensor> split_images(const Tensor& images, std::size_t limit) {
    std::vector<Tensor> out;
    const auto n = static_cast<std::size_t>(images.dim(0));
    for (std::size_t i = 0; i < (limit ? std::min(limit, n) : n); ++i) out.push_back(images.item(static_cast<Index>(i)));
    return out;
}

void load_mnist_split(const fs::path& dir, const char* prefix, std::size_t limit, std::vector<Tensor>& visible,
                      std::vector<int>& labels) {
    const Tensor images = load_idx_images(dir / (std::string(prefix) + "-images-idx3-ubyte"));
    std::vector<int> all = load_idx_labels(dir / (std::string(prefix) + "-labels-idx1-ubyte"));
    if (static_cast<std::size_t>(images.dim(0)) != all.size())
        throw DataError(dir.string() + ": " + prefix + " image and label counts differ");
    const std::vector<Tensor> pics = split_images(images, limit);
    for (std::size_t i = 0; i < pics.size(); ++i) {
        visible.push_back(mnist_visible(pics[i], all[i]));
        labels.push_back(all[i]);
    }
}

std::vector<Tensor> image_targets(const RunConfig& cfg, std::vector<Tensor> images) {
    const LayerSpec& vis = cfg.arch.layers.at(0);
    std::vector<Tensor> out;
    for (Tensor& img : images) {
        Tensor t = cfg.task == Task::SuperResolution ? super_resolution_visible(img) : std::move(img);
        if (t.shape() != vis.shape())
            throw DataError("image shape " + to_string(t.shape()) + " does not match the visible layer " +
                            to_string(vis.shape()));
        out.push_back(std::move(t));
    }
    return out;
}

const std::vector<Tensor>& bar_patterns() {
    static const std::vector<Tensor> patterns = gen_bar_patterns();
    return patterns;
}

/// Fresh bar items: a uniformly chosen pattern with unique-completion evidence.
std::pair<std::vector<Tensor>, std::vector<Mask>> bar_items(std::size_t n, Rng& rng) {
    const auto& patterns = bar_patterns();
    std::uniform_int_distribution<std::size_t> pick(0, patterns.size() - 1);
    std::vector<Tensor> targets;
    std::vector<Mask> masks;
    for (std::size_t i = 0; i < n; ++i) {
        const Tensor& p = patterns[pick(rng)];
        Example ex = gen_bar_evidence(p, patterns, rng);
        targets.push_back(p.reshaped({kBarSide * kBarSide}));
        masks.push_back(ex.mask.reshaped({kBarSide * kBarSide}));
    }
    return {std::move(targets), std::move(masks)};
}

/// Targets with their evaluation masks (fresh bar items, or the held-out set).
std::pair<std::vector<Tensor>, std::vector<Mask>> eval_items(const RunConfig& cfg, const TaskData& data, std::size_t n,
                                                             Rng& rng) {
    if (cfg.task == Task::Bar) return bar_items(n, rng);
    std::vector<Tensor> targets = first_n(data.test, n);
    std::vector<Mask> masks;
    for (const Tensor& t : targets) masks.push_back(task_mask(cfg, t, rng));
    return {std::move(targets), std::move(masks)};
}

Completion complete_all(const WeightBundle& w, const ArchSpec& arch, const std::vector<Tensor>& targets,
                        const std::vector<Mask>& masks, const TrainConfig& cfg) {
    Completion all;
    std::vector<Tensor> visible, dream;
    for (std::size_t from = 0; from < targets.size(); from += kEvalChunk) {
        const std::size_t to = std::min(targets.size(), from + static_cast<std::size_t>(kEvalChunk));
        std::vector<const Tensor*> t;
        std::vector<const Mask*> m;
        for (std::size_t i = from; i < to; ++i) {
            t.push_back(&targets[i]);
            m.push_back(&masks[i]);
        }
        Completion c = complete(w, arch, stack(t), stack(m), cfg);
        for (Index i = 0; i < c.visible.dim(0); ++i) {
            visible.push_back(c.visible.item(i));
            dream.push_back(c.dream.item(i));
        }
        all.reports.insert(all.reports.end(), c.reports.begin(), c.reports.end());
    }
    std::vector<const Tensor*> vp, dp;
    for (std::size_t i = 0; i < visible.size(); ++i) {
        vp.push_back(&visible[i]);
        dp.push_back(&dream[i]);
    }
    all.visible = stack(vp);
    all.dream = stack(dp);
    return all;
}

Tensor channels(const Tensor& image, Index from, Index count) {
    const Index plane = image.dim(1) * image.dim(2);
    return Tensor({count, image.dim(1), image.dim(2)}, image.vec().segment(from * plane, count * plane));
}

Tensor to_rgb(const Tensor& image) {
    if (image.dim(0) == 3) return image;
    const Index plane = image.dim(1) * image.dim(2);
    Tensor out({3, image.dim(1), image.dim(2)});
    for (Index c = 0; c < 3; ++c) out.vec().segment(c * plane, plane) = image.vec().head(plane);
    return out;
}

}  // namespace

Tensor downscale2(const Tensor& image) {
    const Index c = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor out(image.shape());
    for (Index k = 0; k < c; ++k)
        for (Index i = 0; i < h; i += 2)
            for (Index j = 0; j < w; j += 2) {
                const Index i1 = std::min(i + 1, h - 1), j1 = std::min(j + 1, w - 1);
                const double mean = (image(k, i, j) + image(k, i, j1) + image(k, i1, j) + image(k, i1, j1)) / 4.0;
                for (Index a = i; a <= i1; ++a)
                    for (Index b = j; b <= j1; ++b) out(k, a, b) = mean;
            }
    return out;
}

Tensor super_resolution_visible(const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) throw DataError("super-resolution needs color (3, h, w) images");
    const Index plane = image.dim(1) * image.dim(2);
    Tensor out({6, image.dim(1), image.dim(2)});
    out.vec().head(3 * plane) = downscale2(image).vec();
    out.vec().tail(3 * plane) = image.vec();
    return out;
}

Mask task_mask(const RunConfig& cfg, const Tensor& target, Rng& rng) {
    switch (cfg.task) {
        case Task::Bar: {
            const auto& patterns = bar_patterns();
            const Tensor pattern = target.reshaped({kBarSide, kBarSide});
            return gen_bar_evidence(pattern, patterns, rng).mask.reshaped({kBarSide * kBarSide});
        }
        case Task::MnistSupervised: {
            const Tensor image = target.reshaped({kMnistSide + 1, kMnistSide});
            Tensor pixels({kMnistSide, kMnistSide});
            pixels.vec() = image.vec().head(kMnistSide * kMnistSide);
            Mask m = mnist_mask(make_pixel_mask(cfg.mask, pixels, rng));
            if (!cfg.mask.mask_label)
                for (Index i = kMnistSide * kMnistSide; i < m.size(); ++i) m[i] = 1;
            return m;
        }
        case Task::Completion:
            return broadcast_mask(make_pixel_mask(cfg.mask, target, rng), target.dim(0));
        case Task::SuperResolution: {
            Mask m(target.shape());
            m.vec().head(m.size() / 2).setOnes();
            return m;
        }
    }
    throw std::logic_error("task_mask: unknown task");
}

TaskData load_task_data(const RunConfig& cfg) {
    TaskData d;
    switch (cfg.task) {
        case Task::Bar:
            for (const Tensor& p : bar_patterns()) d.train.targets.push_back(p.reshaped({kBarSide * kBarSide}));
            break;
        case Task::MnistSupervised: {
            std::vector<int> train_labels;
            load_mnist_split(cfg.data.mnist_dir, "train", cfg.data.limit, d.train.targets, train_labels);
            load_mnist_split(cfg.data.mnist_dir, "t10k", cfg.data.test_limit, d.test, d.test_labels);
            break;
        }
        case Task::Completion:
        case Task::SuperResolution:
            d.train.targets = image_targets(cfg, first_n(load_image_folder(cfg.data.image_dir), cfg.data.limit));
            d.test = cfg.data.test_image_dir.empty()
                         ? d.train.targets
                         : image_targets(cfg, first_n(load_image_folder(cfg.data.test_image_dir), cfg.data.test_limit));
            break;
    }
    if (d.train.targets.empty()) throw DataError("no training examples found");
    d.train.make_mask = [cfg](const Tensor& target, Rng& rng) { return task_mask(cfg, target, rng); };
    return d;
}

TaskData load_test_data(const RunConfig& cfg, const fs::path& data) {
    TaskData d;
    switch (cfg.task) {
        case Task::Bar:
            break;
        case Task::MnistSupervised:
            if (!fs::is_directory(data)) throw DataError("not a directory: " + data.string());
            load_mnist_split(data, "t10k", cfg.data.test_limit, d.test, d.test_labels);
            break;
        case Task::Completion:
        case Task::SuperResolution:
            d.test = image_targets(cfg, first_n(load_image_folder(data), cfg.data.test_limit));
            break;
    }
    d.train.make_mask = [cfg](const Tensor& target, Rng& rng) { return task_mask(cfg, target, rng); };
    return d;
}

Completion complete(const WeightBundle& w, const ArchSpec& arch, const Tensor& targets, const Mask& mask,
                    const TrainConfig& cfg, bool record_energy) {
    const Batch batch{targets, mask};
    EvidenceConstraint ev = batch_evidence(batch, cfg);
    validate_evidence(arch, 0, ev, batch.size());
    SettleOptions so;
    so.theta = cfg.theta;
    so.max_iters = cfg.max_iters;
    so.record_energy = record_energy;
    SettleResult r = settle(initial_state(arch, batch.size(), std::move(ev)), w, arch, so);
    Completion c;
    c.dream = unclamped_visible(r.state, w, arch);
    c.visible = std::move(r.state.activations[0]);
    c.reports = std::move(r.reports);
    return c;
}

Tensor copy_evidence_baseline(const Tensor& targets, const Mask& mask) {
    require_same_shape(targets.shape(), mask.shape(), "copy_evidence_baseline");
    Tensor out(targets.shape());
    for (Index i = 0; i < out.size(); ++i) out[i] = mask[i] ? targets[i] : 0.0;
    return out;
}

std::vector<std::string> metric_names(Task task) {
    switch (task) {
        case Task::Bar:
            return {"accuracy", "pixel_accuracy"};
        case Task::MnistSupervised:
            return {"masked_accuracy", "label_only_accuracy"};
        case Task::Completion:
        case Task::SuperResolution:
            return {"psnr", "ssim", "baseline_psnr", "baseline_ssim"};
    }
    return {};
}

Metrics evaluate(const RunConfig& cfg, const TaskData& data, const WeightBundle& w) {
    Rng rng(cfg.seed ^ kEvalStream);
    const std::size_t n = cfg.eval.samples;
    auto [targets, masks] = eval_items(cfg, data, n, rng);
    if (targets.empty()) throw DataError("no evaluation examples");
    const Completion c = complete_all(w, cfg.arch, targets, masks, cfg.train);
    std::vector<const Tensor*> tp;
    std::vector<const Mask*> mp;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        tp.push_back(&targets[i]);
        mp.push_back(&masks[i]);
    }
    const Tensor target_batch = stack(tp);
    const Mask mask_batch = stack(mp);

    switch (cfg.task) {
        case Task::Bar: {
            const CompletionScore s = completion_accuracy(c.visible, target_batch, mask_batch);
            return {{"accuracy", s.per_item}, {"pixel_accuracy", s.per_pixel}};
        }
        case Task::MnistSupervised: {
            const std::vector<int> labels(data.test_labels.begin(), data.test_labels.begin() + static_cast<long>(targets.size()));
            const double masked = label_accuracy(c.visible, labels);
            std::vector<Mask> label_only;
            for (const Tensor& t : targets) {
                Mask m(t.shape(), 1);
                for (Index i = kMnistSide * kMnistSide; i < m.size(); ++i) m[i] = 0;
                label_only.push_back(std::move(m));
            }
            const Completion clean = complete_all(w, cfg.arch, targets, label_only, cfg.train);
            return {{"masked_accuracy", masked}, {"label_only_accuracy", label_accuracy(clean.visible, labels)}};
        }
        case Task::Completion:
        case Task::SuperResolution: {
            const bool sr = cfg.task == Task::SuperResolution;
            std::vector<double> p, s, bp, bs;
            for (std::size_t i = 0; i < targets.size(); ++i) {
                const Tensor& y = targets[i];
                const Index k = static_cast<Index>(i);
                Tensor out = c.visible.item(k), base = copy_evidence_baseline(y, masks[i]), truth = y;
                if (sr) {
                    out = channels(out, 3, 3);
                    base = channels(y, 0, 3);
                    truth = channels(y, 3, 3);
                }
                p.push_back(psnr(out, truth, 2.0));
                s.push_back(ssim(out, truth, 2.0));
                bp.push_back(psnr(base, truth, 2.0));
                bs.push_back(ssim(base, truth, 2.0));
            }
            return {{"psnr", summarize(p).mean},
                    {"ssim", summarize(s).mean},
                    {"baseline_psnr", summarize(bp).mean},
                    {"baseline_ssim", summarize(bs).mean}};
        }
    }
    return {};
}

Tensor visible_image(Task task, const ArchSpec& arch, const Tensor& visible) {
    switch (task) {
        case Task::Bar:
            return visible.reshaped({1, kBarSide, kBarSide});
        case Task::MnistSupervised:
            return visible.reshaped({1, kMnistSide + 1, kMnistSide});
        case Task::SuperResolution:
            return channels(visible, 3, 3);
        case Task::Completion:
            break;
    }
    if (arch.layers.at(0).is_conv()) return visible.reshaped(arch.layers[0].shape());
    return visible.reshaped({1, 1, visible.size()});
}

void write_sample_grid(const fs::path& path, const RunConfig& cfg, const TaskData& data, const WeightBundle& w) {
    Rng rng(cfg.seed ^ kEvalStream ^ 0x67726964ULL);
    auto [targets, masks] = eval_items(cfg, data, cfg.eval.grid, rng);
    if (targets.empty()) return;
    const Completion c = complete_all(w, cfg.arch, targets, masks, cfg.train);

    std::vector<std::vector<Tensor>> rows(4);
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const Index k = static_cast<Index>(i);
        const Tensor target = to_rgb(visible_image(cfg.task, cfg.arch, targets[i]));
        rows[0].push_back(target);
        rows[1].push_back(to_rgb(visible_image(cfg.task, cfg.arch, c.visible.item(k))));
        rows[3].push_back(to_rgb(visible_image(cfg.task, cfg.arch, c.dream.item(k))));

        Tensor evidence;
        if (cfg.task == Task::SuperResolution) {
            evidence = to_rgb(channels(targets[i], 0, 3));
        } else {
            Tensor observed(masks[i].shape());
            for (Index j = 0; j < observed.size(); ++j) observed[j] = masks[i][j] ? 1.0 : 0.0;
            const Tensor seen = visible_image(cfg.task, cfg.arch, observed);
            evidence = target;
            const Index h = evidence.dim(1), wd = evidence.dim(2);
            for (Index a = 0; a < h; ++a)
                for (Index b = 0; b < wd; ++b) {
                    bool missing = false;
                    for (Index ch = 0; ch < seen.dim(0); ++ch) missing |= seen(ch, a, b) == 0.0;
                    if (!missing) continue;
                    evidence(0, a, b) = 1.0;
                    evidence(1, a, b) = -1.0;
                    evidence(2, a, b) = -1.0;
                }
        }
        rows[2].push_back(evidence);
    }

    const Index h = rows[0][0].dim(1), wd = rows[0][0].dim(2);
    const Index scale = std::max<Index>(1, 32 / std::max(h, wd));
    const Index gap = 1, cols = static_cast<Index>(targets.size());
    const Index cell_h = h * scale, cell_w = wd * scale;
    Tensor grid({3, 4 * cell_h + 5 * gap, cols * cell_w + (cols + 1) * gap});
    for (Index r = 0; r < 4; ++r)
        for (Index col = 0; col < cols; ++col) {
            const Tensor& cell = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(col)];
            const Index top = gap + r * (cell_h + gap), left = gap + col * (cell_w + gap);
            for (Index ch = 0; ch < 3; ++ch)
                for (Index a = 0; a < cell_h; ++a)
                    for (Index b = 0; b < cell_w; ++b)
                        grid(ch, top + a, left + b) = std::clamp(cell(ch, a / scale, b / scale), -1.0, 1.0);
        }
    write_pnm(path, grid);
}

int threads_from_env(int fallback) {
    const char* v = std::getenv("CBAN_THREADS");
    if (!v || !*v) return fallback;
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (*end || n < 1 || n > 1024) throw ConfigError(std::string("CBAN_THREADS must be a positive integer, got '") + v + "'");
    return static_cast<int>(n);
}

RunConfig config_from_checkpoint(const Checkpoint& ckpt) {
    if (!ckpt.metadata.contains("config")) throw CheckpointError("checkpoint carries no run configuration");
    RunConfig cfg = run_config_from_json(ckpt.metadata.at("config"));
    cfg.arch = ckpt.arch;
    return cfg;
}

TrainLog run_training(const RunConfig& cfg, std::ostream& progress) {
    fs::create_directories(cfg.output_dir);
    {
        std::ofstream out(cfg.output_dir / "config.json");
        out << to_json(cfg).dump(2) << '\n';
    }
    const TaskData data = load_task_data(cfg);
    TrainState state = start_training(cfg.arch, cfg.train);
    const json meta = {{"config", to_json(cfg)}};
    const std::vector<std::string> names = metric_names(cfg.task);

    std::ofstream csv(cfg.output_dir / "train_log.csv");
    if (!csv) throw DataError("cannot write " + (cfg.output_dir / "train_log.csv").string());
    csv << "epoch,loss,mean_t_star,nonconverged_fraction";
    for (const auto& n : names) csv << ',' << n;
    csv << '\n';

    auto save = [&](const TrainState& s, bool numbered) {
        const Checkpoint ckpt = make_checkpoint(cfg.arch, s, meta);
        if (numbered) save_checkpoint(cfg.output_dir / ("epoch_" + std::to_string(s.epoch) + ".ckpt"), ckpt);
        save_checkpoint(cfg.output_dir / "latest.ckpt", ckpt);
    };

    TrainHooks hooks;
    hooks.on_epoch = [&](const TrainState& s, EpochRecord& rec) {
        const bool last = s.epoch == cfg.train.epochs;
        const bool due = last || (cfg.eval.every > 0 && s.epoch % cfg.eval.every == 0);
        if (due) {
            rec.metrics = evaluate(cfg, data, s.weights);
            write_sample_grid(cfg.output_dir / ("samples_epoch_" + std::to_string(s.epoch) + ".ppm"), cfg, data,
                              s.weights);
        }
        char line[160];
        std::snprintf(line, sizeof line, "%d,%.10g,%.6g,%.6g", s.epoch, rec.loss, rec.mean_t_star,
                      rec.nonconverged_fraction);
        csv << line;
        std::ostringstream msg;
        msg << "epoch " << s.epoch << "  loss " << rec.loss << "  t* " << rec.mean_t_star;
        for (const auto& n : names) {
            auto it = std::find_if(rec.metrics.begin(), rec.metrics.end(), [&](const auto& m) { return m.first == n; });
            csv << ',';
            if (it != rec.metrics.end()) {
                std::snprintf(line, sizeof line, "%.10g", it->second);
                csv << line;
                msg << "  " << n << ' ' << it->second;
            }
        }
        csv << '\n' << std::flush;
        save(s, due);
        progress << msg.str() << '\n' << std::flush;
    };

    TrainLog log = train(data.train, cfg.arch, cfg.train, state, hooks);
    if (cfg.train.epochs == 0) {
        save(state, true);
        write_sample_grid(cfg.output_dir / "samples_epoch_0.ppm", cfg, data, state.weights);
    }
    return log;
}

}  // namespace cban
