#include "cban/checkpoint.hpp"

#include "cban/config.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cban {

using nlohmann::json;
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr std::array<char, 8> kMagic = {'C', 'B', 'A', 'N', 'C', 'K', 'P', 'T'};

template <class T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T take(std::istream& in, const fs::path& path) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw CheckpointError(path.string() + ": truncated checkpoint");
    return v;
}

void put_block(std::ostream& out, const Tensor& t) {
    std::vector<float> buf(static_cast<std::size_t>(t.size()));
    for (Index i = 0; i < t.size(); ++i) buf[static_cast<std::size_t>(i)] = static_cast<float>(t[i]);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

void take_block(std::istream& in, Tensor& t, const fs::path& path) {
    std::vector<float> buf(static_cast<std::size_t>(t.size()));
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float))))
        throw CheckpointError(path.string() + ": truncated weight data");
    for (Index i = 0; i < t.size(); ++i) t[i] = buf[static_cast<std::size_t>(i)];
}

constexpr std::initializer_list<std::pair<const char*, OptimizerConfig::Kind>> kKinds = {
    {"sgd_l2", OptimizerConfig::Kind::SgdL2},
    {"sgd_linf", OptimizerConfig::Kind::SgdLinf},
    {"adam", OptimizerConfig::Kind::Adam}};

}  // namespace

Checkpoint make_checkpoint(const ArchSpec& arch, const TrainState& state, json metadata) {
    Checkpoint c;
    c.arch = arch;
    c.weights = state.weights;
    c.optimizer = state.optimizer;
    c.epoch = state.epoch;
    std::ostringstream rng;
    rng << state.rng;
    c.rng_state = rng.str();
    c.metadata = metadata.is_null() ? json::object() : std::move(metadata);
    return c;
}

TrainState restore_state(const Checkpoint& c) {
    TrainState s;
    s.weights = c.weights;
    s.optimizer = c.optimizer;
    s.epoch = c.epoch;
    std::istringstream rng(c.rng_state);
    rng >> s.rng;
    if (!rng) throw CheckpointError("checkpoint: unreadable generator state");
    return s;
}

void save_checkpoint(const fs::path& path, const Checkpoint& c) {
    const bool adam = c.optimizer.kind == OptimizerConfig::Kind::Adam && !c.optimizer.m.empty();
    std::string kind;
    for (const auto& [n, k] : kKinds)
        if (k == c.optimizer.kind) kind = n;
    const json header = {{"arch", to_json(c.arch)},
                         {"epoch", c.epoch},
                         {"optimizer", {{"kind", kind}, {"step", c.optimizer.step}, {"moments", adam}}},
                         {"rng", c.rng_state},
                         {"metadata", c.metadata}};
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + path.string());
    out.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const Tensor* p : parameters(c.weights)) put_block(out, *p);
    if (adam) {
        for (const Tensor& m : c.optimizer.m) put_block(out, m);
        for (const Tensor& v : c.optimizer.v) put_block(out, v);
    }
    if (!out) throw CheckpointError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::array<char, 8> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kMagic)
        throw CheckpointError(path.string() + ": not a checkpoint (bad magic)");
    const auto version = take<std::uint32_t>(in, path);
    if (version != kCheckpointVersion)
        throw CheckpointError(path.string() + ": checkpoint version " + std::to_string(version) +
                              " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
    const auto length = take<std::uint64_t>(in, path);
    if (length > (std::uint64_t{1} << 30)) throw CheckpointError(path.string() + ": implausible header length");
    std::string text(length, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(length)))
        throw CheckpointError(path.string() + ": truncated header");

    Checkpoint c;
    try {
        const json header = json::parse(text);
        c.arch = arch_from_json(header.at("arch"));
        c.epoch = header.at("epoch").get<int>();
        const json& opt = header.at("optimizer");
        const std::string kind = opt.at("kind").get<std::string>();
        bool known = false;
        for (const auto& [n, k] : kKinds)
            if (kind == n) {
                c.optimizer.kind = k;
                known = true;
            }
        if (!known) throw CheckpointError("unknown optimizer kind " + kind);
        c.optimizer.step = opt.at("step").get<std::int64_t>();
        c.rng_state = header.at("rng").get<std::string>();
        c.metadata = header.at("metadata");
        c.weights = zero_weights(c.arch);
        for (Tensor* p : parameters(c.weights)) take_block(in, *p, path);
        if (opt.at("moments").get<bool>()) {
            for (const Tensor* p : parameters(c.weights)) c.optimizer.m.emplace_back(p->shape());
            for (const Tensor* p : parameters(c.weights)) c.optimizer.v.emplace_back(p->shape());
            for (Tensor& m : c.optimizer.m) take_block(in, m, path);
            for (Tensor& v : c.optimizer.v) take_block(in, v, path);
        }
    } catch (const json::exception& e) {
        throw CheckpointError(path.string() + ": bad header: " + e.what());
    } catch (const ConfigError& e) {
        throw CheckpointError(path.string() + ": bad architecture: " + e.what());
    }
    if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError(path.string() + ": trailing data");
    return c;
}

}  // namespace cban
