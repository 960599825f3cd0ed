#pragma once

#include <string>

#include "hmer/config.hpp"

namespace hmer {

// Runs the compact invariant suite (numerical oracles, FSM safety, planner
// determinism); prints one line per check. Returns true when everything holds.
bool run_selftest(const Config& cfg, uint64_t seed);

}  // namespace hmer
