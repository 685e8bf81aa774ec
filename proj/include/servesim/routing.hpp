#pragma once

#include <vector>

#include "servesim/nsga2.hpp"
#include "servesim/rng.hpp"
#include "servesim/types.hpp"

namespace servesim::routing {

// One pipeline stage: a server and the contiguous block interval it runs.
struct ChainSegment {
    int server_id = 0;
    int block_start = 0;
    int block_end = 0;
};

// Segments tile [0, num_blocks) contiguously in order.
struct Chain {
    std::vector<ChainSegment> segments;
};

struct RouteEdge {
    int from = 0;  // block boundary index
    int to = 0;
    int server_id = 0;
    double weight_ms = 0.0;
};

// Nodes are block boundaries 0..num_blocks; one edge per (server,
// sub-interval) pair; edges strictly increase the boundary index.
struct RouteGraph {
    int num_boundaries = 0;
    std::vector<RouteEdge> edges;
};

RouteGraph build_route_graph(const SwarmTopology& topo);

struct RoutedChain {
    Chain chain;
    double total_ms = 0.0;
};

// Minimum-total-time pipeline: shortest 0 -> num_blocks path where an edge
// for server s over [i, j) costs rtt(s) + (j - i) * per_block_ms(s).
RoutedChain shortest_chain(const SwarmTopology& topo);

// Pipeline maximizing the per-block throughput sum: same graph, edge weight
// -(j - i) / per_block_ms(s), minimized.
RoutedChain max_throughput_chain(const SwarmTopology& topo);

double chain_total_ms(const Chain& chain, const SwarmTopology& topo);

// Genome layout: x[s][b] flattened row-major, servers as rows.
inline size_t genome_bit(const SwarmTopology& topo, int server_index, int block) {
    return static_cast<size_t>(server_index) * static_cast<size_t>(topo.num_blocks) +
           static_cast<size_t>(block);
}

// f1 = sum of rtt over assigned (server, block) pairs; f2 = negated sum of
// 1/per_block_ms over assigned pairs; violation counts uncovered blocks.
nsga2::Evaluation evaluate_genome(const nsga2::Genome& genome, const SwarmTopology& topo);

// Zero every bit outside the host mask; idempotent.
nsga2::Genome repair_genome(nsga2::Genome genome, const SwarmTopology& topo);

// Left-to-right scan keeping the current server while it stays assigned; on
// a switch, the assigned server with the longest forward run wins (ties to
// the lowest id). Requires a feasible genome.
Chain decode_chain(const nsga2::Genome& genome, const SwarmTopology& topo);

// Re-encode a chain as its assignment genome (one bit per covered block).
nsga2::Genome encode_chain(const Chain& chain, const SwarmTopology& topo);

struct ObjectivePoint {
    double latency_sum_ms = 0.0;       // f1
    double neg_throughput_sum = 0.0;   // f2 (minimization form)
    auto operator<=>(const ObjectivePoint&) const = default;
};

struct ParetoEntry {
    Chain chain;
    double latency_sum_ms = 0.0;
    double throughput_sum = 0.0;  // positive blocks/ms, -f2
};

struct ParetoFrontResult {
    // Unique chains decoded from the feasible rank-0 set, sorted by
    // (latency asc, throughput desc).
    std::vector<ParetoEntry> chains;
    // All distinct feasible rank-0 objective pairs, sorted ascending.
    std::vector<ObjectivePoint> front_points;
};

struct ParetoConfig {
    int population_size = 100;
    int generations = 200;
};

// The latency/throughput tradeoff mode: NSGA-II over masked assignment
// genomes with evaluate_genome(repair_genome(.)).
ParetoFrontResult pareto_chains(const SwarmTopology& topo, const ParetoConfig& cfg, Rng rng);

struct BruteForceResult {
    std::vector<nsga2::Genome> genomes;        // exact Pareto-optimal feasible genomes
    std::vector<ObjectivePoint> front_points;  // distinct objective pairs, sorted
};

// Exact oracle: enumerates every genome inside the host mask. Requires
// servers * blocks <= 20; throws CapacityError beyond that.
BruteForceResult brute_force_pareto(const SwarmTopology& topo);

}  // namespace servesim::routing
