#pragma once

#include <cstdint>
#include <random>

namespace cban {

/// The one generator used everywhere; every stochastic routine takes it by reference.
using Rng = std::mt19937_64;

}  // namespace cban
