#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cban {

/// One row of a property-suite table.
struct CheckRow {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct CheckOptions {
    int trials = 200;
    std::uint64_t seed = 1;
};

/// Layerwise energy descent and settling on random symmetric tanh FBANs.
std::vector<CheckRow> check_energy(const CheckOptions& opt);

/// L_dE against two energy evaluations on random fc nets.
std::vector<CheckRow> check_energy_difference(const CheckOptions& opt);

/// Synchronous full-state iteration on symmetric nets with non-negative
/// self-connections reaches period one or two.
std::vector<CheckRow> check_synchronous(const CheckOptions& opt);

/// Leaky-sigmoid nets with alpha * norm_1inf = 0.9 settle to fixed points;
/// at alpha * norm_1inf = 5 some run fails to.
std::vector<CheckRow> check_leaky_bound(const CheckOptions& opt);

/// Autodiff against central finite differences for every loss, with
/// `trials` random configurations per loss.
std::vector<CheckRow> check_gradients(const CheckOptions& opt);

/// Suite names accepted by run_suite.
const std::vector<std::string>& suite_names();

/// Runs a named suite ("gradients", "energy", "convergence", "bound").
std::vector<CheckRow> run_suite(const std::string& name, const CheckOptions& opt);

}  // namespace cban
