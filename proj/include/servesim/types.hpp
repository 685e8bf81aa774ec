#pragma once

#include <optional>
#include <string>
#include <vector>

namespace servesim {

// One swarm server hosting a contiguous interval of model blocks.
struct ServerSpec {
    int id = 0;
    double rtt_ms = 0.0;        // client <-> server round trip
    double per_block_ms = 1.0;  // compute time per block per token step (1/throughput)
    int block_start = 0;        // hosted interval [block_start, block_end)
    int block_end = 0;
};

struct SwarmTopology {
    int num_blocks = 0;
    std::vector<ServerSpec> servers;
};

// Throws ConfigError unless every block in [0, num_blocks) is hosted by at
// least one server and all per-server invariants hold.
void validate_topology(const SwarmTopology& topo);

// One generation job.
struct Request {
    int id = 0;
    double arrival_ms = 0.0;
    int prompt_len = 1;
    int output_len = 1;
    std::optional<double> completion_ms;
};

struct ArrivalProcess {
    enum class Kind { Fixed, Poisson };
    Kind kind = Kind::Fixed;
    double interval_ms = 0.0;  // Fixed
    double rate_per_s = 1.0;   // Poisson
};

struct LengthDist {
    enum class Kind { Uniform, Lognormal };
    Kind kind = Kind::Uniform;
    int lo = 1;          // Uniform, inclusive
    int hi = 1;          // Uniform, inclusive
    double mu = 0.0;     // Lognormal, log-scale location
    double sigma = 1.0;  // Lognormal, log-scale spread
    int max_len = 1;     // hard cap; samples clamp into [1, max_len]
};

struct WorkloadSpec {
    int num_requests = 0;
    ArrivalProcess arrivals;
    LengthDist prompt;
    LengthDist output;
};

void validate_workload_spec(const WorkloadSpec& spec);

}  // namespace servesim
