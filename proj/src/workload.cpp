#include "servesim/workload.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "servesim/errors.hpp"

namespace servesim {

void validate_topology(const SwarmTopology& topo) {
    if (topo.num_blocks <= 0) {
        throw ConfigError("topology.num_blocks: must be >= 1");
    }
    std::vector<char> covered(static_cast<size_t>(topo.num_blocks), 0);
    for (const auto& s : topo.servers) {
        const std::string at = "topology.servers[" + std::to_string(s.id) + "]";
        if (s.rtt_ms < 0.0) throw ConfigError(at + ".rtt_ms: must be >= 0");
        if (s.per_block_ms <= 0.0) throw ConfigError(at + ".per_block_ms: must be > 0");
        if (s.block_start < 0 || s.block_start >= s.block_end || s.block_end > topo.num_blocks) {
            throw ConfigError(at + ".blocks: need 0 <= start < end <= num_blocks");
        }
        for (int b = s.block_start; b < s.block_end; ++b) covered[static_cast<size_t>(b)] = 1;
    }
    for (int b = 0; b < topo.num_blocks; ++b) {
        if (!covered[static_cast<size_t>(b)]) {
            throw ConfigError("topology: block " + std::to_string(b) + " is hosted by no server");
        }
    }
}

namespace {

void validate_length_dist(const LengthDist& d, const std::string& path) {
    switch (d.kind) {
        case LengthDist::Kind::Uniform:
            if (d.lo < 1 || d.lo > d.hi) throw ConfigError(path + ": need 1 <= lo <= hi");
            break;
        case LengthDist::Kind::Lognormal:
            if (d.sigma <= 0.0) throw ConfigError(path + ".sigma: must be > 0");
            if (d.max_len < 1) throw ConfigError(path + ".max_len: must be >= 1");
            break;
    }
}

}  // namespace

void validate_workload_spec(const WorkloadSpec& spec) {
    if (spec.num_requests < 0) throw ConfigError("workload.num_requests: must be >= 0");
    switch (spec.arrivals.kind) {
        case ArrivalProcess::Kind::Fixed:
            if (spec.arrivals.interval_ms < 0.0) {
                throw ConfigError("workload.arrivals.interval_ms: must be >= 0");
            }
            break;
        case ArrivalProcess::Kind::Poisson:
            if (spec.arrivals.rate_per_s <= 0.0) {
                throw ConfigError("workload.arrivals.rate_per_s: must be > 0");
            }
            break;
    }
    validate_length_dist(spec.prompt, "workload.prompt");
    validate_length_dist(spec.output, "workload.output");
}

int sample_length(const LengthDist& dist, Rng& rng) {
    switch (dist.kind) {
        case LengthDist::Kind::Uniform:
            return static_cast<int>(rng.uniform_int(dist.lo, dist.hi));
        case LengthDist::Kind::Lognormal: {
            long long x = 1;
            for (int attempt = 0; attempt < 64; ++attempt) {
                x = std::llround(std::exp(dist.mu + dist.sigma * rng.normal()));
                if (x >= 1 && x <= dist.max_len) return static_cast<int>(x);
            }
            return static_cast<int>(std::clamp<long long>(x, 1, dist.max_len));
        }
    }
    return 1;
}

std::vector<Request> generate_workload(const WorkloadSpec& spec, Rng& rng) {
    validate_workload_spec(spec);
    std::vector<Request> out;
    out.reserve(static_cast<size_t>(spec.num_requests));
    double t = 0.0;
    for (int i = 0; i < spec.num_requests; ++i) {
        Request r;
        r.id = i;
        if (spec.arrivals.kind == ArrivalProcess::Kind::Fixed) {
            r.arrival_ms = spec.arrivals.interval_ms * static_cast<double>(i);
        } else {
            t += rng.exponential(1000.0 / spec.arrivals.rate_per_s);
            r.arrival_ms = t;
        }
        r.prompt_len = sample_length(spec.prompt, rng);
        r.output_len = sample_length(spec.output, rng);
        out.push_back(r);
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const Request& a, const Request& b) { return a.arrival_ms < b.arrival_ms; });
    return out;
}

}  // namespace servesim
