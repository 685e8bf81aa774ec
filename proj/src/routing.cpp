#include "servesim/routing.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <set>

#include "servesim/errors.hpp"

namespace servesim::routing {

RouteGraph build_route_graph(const SwarmTopology& topo) {
    validate_topology(topo);
    RouteGraph g;
    g.num_boundaries = topo.num_blocks + 1;
    for (const auto& s : topo.servers) {
        for (int i = s.block_start; i < s.block_end; ++i) {
            for (int j = i + 1; j <= s.block_end; ++j) {
                g.edges.push_back(
                    {i, j, s.id, s.rtt_ms + static_cast<double>(j - i) * s.per_block_ms});
            }
        }
    }
    return g;
}

namespace {

// Shortest 0 -> num_blocks path by DP over boundary order. The graph is a
// DAG (edges strictly increase the boundary index), so one left-to-right
// pass is exact even with negative weights.
RoutedChain solve_dag(const SwarmTopology& topo, const RouteGraph& g,
                      const std::vector<double>& edge_weights) {
    const int n = g.num_boundaries;
    std::vector<double> dist(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
    std::vector<int> via_edge(static_cast<size_t>(n), -1);
    dist[0] = 0.0;

    // Group edges by source boundary for an ordered sweep.
    std::vector<std::vector<int>> out(static_cast<size_t>(n));
    for (size_t e = 0; e < g.edges.size(); ++e) {
        out[static_cast<size_t>(g.edges[e].from)].push_back(static_cast<int>(e));
    }
    for (int i = 0; i < n; ++i) {
        if (dist[static_cast<size_t>(i)] == std::numeric_limits<double>::infinity()) continue;
        for (int e : out[static_cast<size_t>(i)]) {
            const auto& edge = g.edges[static_cast<size_t>(e)];
            const double cand = dist[static_cast<size_t>(i)] + edge_weights[static_cast<size_t>(e)];
            if (cand < dist[static_cast<size_t>(edge.to)]) {
                dist[static_cast<size_t>(edge.to)] = cand;
                via_edge[static_cast<size_t>(edge.to)] = e;
            }
        }
    }

    RoutedChain result;
    std::vector<ChainSegment> rev;
    int at = topo.num_blocks;
    while (at > 0) {
        const auto& edge = g.edges[static_cast<size_t>(via_edge[static_cast<size_t>(at)])];
        rev.push_back({edge.server_id, edge.from, edge.to});
        at = edge.from;
    }
    result.chain.segments.assign(rev.rbegin(), rev.rend());
    result.total_ms = chain_total_ms(result.chain, topo);
    return result;
}

const ServerSpec& server_by_id(const SwarmTopology& topo, int id) {
    for (const auto& s : topo.servers) {
        if (s.id == id) return s;
    }
    throw ContractError("unknown server id " + std::to_string(id));
}

}  // namespace

RoutedChain shortest_chain(const SwarmTopology& topo) {
    RouteGraph g = build_route_graph(topo);
    std::vector<double> w(g.edges.size());
    for (size_t e = 0; e < g.edges.size(); ++e) w[e] = g.edges[e].weight_ms;
    return solve_dag(topo, g, w);
}

RoutedChain max_throughput_chain(const SwarmTopology& topo) {
    RouteGraph g = build_route_graph(topo);
    std::vector<double> w(g.edges.size());
    for (size_t e = 0; e < g.edges.size(); ++e) {
        const auto& s = server_by_id(topo, g.edges[e].server_id);
        w[e] = -static_cast<double>(g.edges[e].to - g.edges[e].from) / s.per_block_ms;
    }
    return solve_dag(topo, g, w);
}

double chain_total_ms(const Chain& chain, const SwarmTopology& topo) {
    double total = 0.0;
    for (const auto& seg : chain.segments) {
        const auto& s = server_by_id(topo, seg.server_id);
        total += s.rtt_ms + static_cast<double>(seg.block_end - seg.block_start) * s.per_block_ms;
    }
    return total;
}

nsga2::Evaluation evaluate_genome(const nsga2::Genome& genome, const SwarmTopology& topo) {
    const size_t num_servers = topo.servers.size();
    const size_t num_blocks = static_cast<size_t>(topo.num_blocks);
    if (genome.size() != num_servers * num_blocks) {
        throw ContractError("evaluate_genome: genome length mismatch");
    }
    double latency_sum = 0.0;
    double throughput_sum = 0.0;
    std::vector<int> cover(num_blocks, 0);
    for (size_t s = 0; s < num_servers; ++s) {
        for (size_t b = 0; b < num_blocks; ++b) {
            if (!genome[s * num_blocks + b]) continue;
            latency_sum += topo.servers[s].rtt_ms;
            throughput_sum += 1.0 / topo.servers[s].per_block_ms;
            ++cover[b];
        }
    }
    double violation = 0.0;
    for (size_t b = 0; b < num_blocks; ++b) {
        if (cover[b] == 0) violation += 1.0;
    }
    return {{latency_sum, -throughput_sum}, violation};
}

nsga2::Genome repair_genome(nsga2::Genome genome, const SwarmTopology& topo) {
    const size_t num_blocks = static_cast<size_t>(topo.num_blocks);
    for (size_t s = 0; s < topo.servers.size(); ++s) {
        const auto& spec = topo.servers[s];
        for (size_t b = 0; b < num_blocks; ++b) {
            const bool hosted = static_cast<int>(b) >= spec.block_start &&
                                static_cast<int>(b) < spec.block_end;
            if (!hosted) genome[s * num_blocks + b] = 0;
        }
    }
    return genome;
}

Chain decode_chain(const nsga2::Genome& genome, const SwarmTopology& topo) {
    const size_t num_blocks = static_cast<size_t>(topo.num_blocks);
    const size_t num_servers = topo.servers.size();
    auto assigned = [&](size_t s, int b) {
        return b < topo.num_blocks && genome[s * num_blocks + static_cast<size_t>(b)] != 0;
    };
    // Forward run of consecutive assignments for server s starting at b.
    auto run_length = [&](size_t s, int b) {
        int len = 0;
        while (assigned(s, b + len)) ++len;
        return len;
    };

    Chain chain;
    int current = -1;  // index into topo.servers
    for (int b = 0; b < topo.num_blocks; ++b) {
        if (current >= 0 && assigned(static_cast<size_t>(current), b)) {
            chain.segments.back().block_end = b + 1;
            continue;
        }
        int best = -1;
        int best_run = 0;
        for (size_t s = 0; s < num_servers; ++s) {
            if (!assigned(s, b)) continue;
            const int run = run_length(s, b);
            const bool wins = run > best_run ||
                              (run == best_run && best >= 0 &&
                               topo.servers[s].id < topo.servers[static_cast<size_t>(best)].id);
            if (wins) {
                best_run = run;
                best = static_cast<int>(s);
            }
        }
        if (best < 0) {
            throw ContractError("decode_chain: block " + std::to_string(b) +
                                " has no assigned server (infeasible genome)");
        }
        current = best;
        chain.segments.push_back({topo.servers[static_cast<size_t>(best)].id, b, b + 1});
    }
    return chain;
}

nsga2::Genome encode_chain(const Chain& chain, const SwarmTopology& topo) {
    nsga2::Genome genome(topo.servers.size() * static_cast<size_t>(topo.num_blocks), 0);
    for (const auto& seg : chain.segments) {
        size_t idx = topo.servers.size();
        for (size_t s = 0; s < topo.servers.size(); ++s) {
            if (topo.servers[s].id == seg.server_id) idx = s;
        }
        if (idx == topo.servers.size()) throw ContractError("encode_chain: unknown server id");
        for (int b = seg.block_start; b < seg.block_end; ++b) {
            genome[genome_bit(topo, static_cast<int>(idx), b)] = 1;
        }
    }
    return genome;
}

namespace {

std::string chain_key(const Chain& chain) {
    std::string key;
    for (const auto& seg : chain.segments) {
        key += std::to_string(seg.server_id) + ":" + std::to_string(seg.block_start) + "-" +
               std::to_string(seg.block_end) + ";";
    }
    return key;
}

}  // namespace

ParetoFrontResult pareto_chains(const SwarmTopology& topo, const ParetoConfig& cfg, Rng rng) {
    validate_topology(topo);
    const int genome_len = static_cast<int>(topo.servers.size()) * topo.num_blocks;

    nsga2::Config ncfg;
    ncfg.population_size = cfg.population_size;
    ncfg.generations = cfg.generations;
    auto eval = [&topo](const nsga2::Genome& g) {
        return evaluate_genome(repair_genome(g, topo), topo);
    };
    nsga2::Result res = nsga2::evolve(genome_len, eval, ncfg, rng);

    ParetoFrontResult out;
    std::set<ObjectivePoint> points;
    std::vector<std::pair<ObjectivePoint, Chain>> decoded;
    for (const auto& ind : res.front) {
        const nsga2::Genome repaired = repair_genome(ind.genome, topo);
        const ObjectivePoint pt{ind.objectives[0], ind.objectives[1]};
        points.insert(pt);
        decoded.emplace_back(pt, decode_chain(repaired, topo));
    }
    out.front_points.assign(points.begin(), points.end());

    std::sort(decoded.begin(), decoded.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return chain_key(a.second) < chain_key(b.second);
    });
    std::set<std::string> seen;
    for (auto& [pt, chain] : decoded) {
        if (!seen.insert(chain_key(chain)).second) continue;
        out.chains.push_back({std::move(chain), pt.latency_sum_ms, -pt.neg_throughput_sum});
    }
    return out;
}

BruteForceResult brute_force_pareto(const SwarmTopology& topo) {
    validate_topology(topo);
    const size_t num_blocks = static_cast<size_t>(topo.num_blocks);
    const size_t genome_len = topo.servers.size() * num_blocks;

    // Positions inside the host mask are the only free bits.
    std::vector<size_t> mask_positions;
    for (size_t s = 0; s < topo.servers.size(); ++s) {
        for (size_t b = 0; b < num_blocks; ++b) {
            if (static_cast<int>(b) >= topo.servers[s].block_start &&
                static_cast<int>(b) < topo.servers[s].block_end) {
                mask_positions.push_back(s * num_blocks + b);
            }
        }
    }
    if (genome_len > 20) {
        throw CapacityError("brute_force_pareto: instance exceeds 20 genome bits");
    }

    // Pass 1: collect the distinct feasible objective points.
    std::set<ObjectivePoint> distinct;
    const std::uint64_t count = 1ULL << mask_positions.size();
    nsga2::Genome g(genome_len, 0);
    for (std::uint64_t bits = 0; bits < count; ++bits) {
        for (size_t k = 0; k < mask_positions.size(); ++k) {
            g[mask_positions[k]] = (bits >> k) & 1ULL;
        }
        nsga2::Evaluation ev = evaluate_genome(g, topo);
        if (ev.violation != 0.0) continue;
        distinct.insert({ev.objectives[0], ev.objectives[1]});
    }

    // Sweep in (f1 asc, f2 asc) order; a point survives iff its f2 beats
    // everything with smaller f1, and within equal f1 only the least f2 lives.
    BruteForceResult out;
    std::set<ObjectivePoint> surviving;
    double best_f2 = std::numeric_limits<double>::infinity();
    for (auto it = distinct.begin(); it != distinct.end();) {
        auto group_end = it;
        ObjectivePoint best = *it;
        while (group_end != distinct.end() &&
               group_end->latency_sum_ms == it->latency_sum_ms) {
            if (group_end->neg_throughput_sum < best.neg_throughput_sum) best = *group_end;
            ++group_end;
        }
        if (best.neg_throughput_sum < best_f2) {
            surviving.insert(best);
            best_f2 = best.neg_throughput_sum;
        }
        it = group_end;
    }
    out.front_points.assign(surviving.begin(), surviving.end());

    // Pass 2: collect every genome that lands on a surviving point.
    for (std::uint64_t bits = 0; bits < count; ++bits) {
        for (size_t k = 0; k < mask_positions.size(); ++k) {
            g[mask_positions[k]] = (bits >> k) & 1ULL;
        }
        nsga2::Evaluation ev = evaluate_genome(g, topo);
        if (ev.violation != 0.0) continue;
        if (surviving.count({ev.objectives[0], ev.objectives[1]})) {
            out.genomes.push_back(g);
        }
    }
    return out;
}

}  // namespace servesim::routing
