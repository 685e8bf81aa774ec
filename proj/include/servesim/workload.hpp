#pragma once

#include <vector>

#include "servesim/rng.hpp"
#include "servesim/types.hpp"

namespace servesim {

// Sample one length from the distribution. Out-of-range lognormal draws are
// resampled up to 64 times, then clamped into [1, max_len].
int sample_length(const LengthDist& dist, Rng& rng);

// Pure function of (spec, rng seed). Requests come back sorted by arrival
// time with ids 0..n-1.
std::vector<Request> generate_workload(const WorkloadSpec& spec, Rng& rng);

}  // namespace servesim
