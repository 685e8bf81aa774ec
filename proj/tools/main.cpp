#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "servesim/attention.hpp"
#include "servesim/engine.hpp"
#include "servesim/errors.hpp"
#include "servesim/rng.hpp"
#include "servesim/routing.hpp"

using namespace servesim;

namespace {

// Temp file in the target directory, then rename: interrupted runs never
// leave a truncated report behind.
void write_atomic(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    fs::path tmp(target);
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open \"" + tmp.string() + "\" for writing");
        f << content;
        f.flush();
        if (!f) throw std::runtime_error("write failed for \"" + tmp.string() + "\"");
    }
    fs::rename(tmp, target);
}

// --seed beats SIM_SEED beats the scenario's own seed beats 1.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& cli_seed,
                           const eng::Scenario* sc) {
    if (cli_seed) return *cli_seed;
    if (const char* env = std::getenv("SIM_SEED")) {
        const std::string text(env);
        std::uint64_t value = 0;
        std::size_t used = 0;
        try {
            value = std::stoull(text, &used);
        } catch (const std::exception&) {
            throw ConfigError("SIM_SEED: must be a non-negative integer");
        }
        if (used != text.size() || text.empty() || text[0] == '-') {
            throw ConfigError("SIM_SEED: must be a non-negative integer");
        }
        return value;
    }
    if (sc) return sc->seed;
    return 1;
}

std::string segments_string(const routing::Chain& chain) {
    std::string s;
    for (const auto& seg : chain.segments) {
        if (!s.empty()) s += ';';
        s += std::to_string(seg.server_id) + ":" + std::to_string(seg.block_start) + "-" +
             std::to_string(seg.block_end);
    }
    return s;
}

routing::ParetoEntry entry_for(const routing::Chain& chain, const SwarmTopology& topo) {
    const auto eval = routing::evaluate_genome(routing::encode_chain(chain, topo), topo);
    routing::ParetoEntry e;
    e.chain = chain;
    e.latency_sum_ms = eval.objectives[0];
    e.throughput_sum = -eval.objectives[1];
    return e;
}

// Knee point: minimal normalized Euclidean distance to the front's ideal
// corner, in the minimization plane (f1, -throughput). First row on ties.
std::size_t knee_index(std::span<const routing::ParetoEntry> front) {
    double f1_lo = front[0].latency_sum_ms, f1_hi = f1_lo;
    double f2_lo = -front[0].throughput_sum, f2_hi = f2_lo;
    for (const auto& e : front) {
        f1_lo = std::min(f1_lo, e.latency_sum_ms);
        f1_hi = std::max(f1_hi, e.latency_sum_ms);
        f2_lo = std::min(f2_lo, -e.throughput_sum);
        f2_hi = std::max(f2_hi, -e.throughput_sum);
    }
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < front.size(); ++i) {
        const double n1 = f1_hi > f1_lo ? (front[i].latency_sum_ms - f1_lo) / (f1_hi - f1_lo) : 0.0;
        const double n2 = f2_hi > f2_lo ? (-front[i].throughput_sum - f2_lo) / (f2_hi - f2_lo) : 0.0;
        const double d = std::sqrt(n1 * n1 + n2 * n2);
        if (best_d < 0.0 || d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

// f2 column keeps the minimization form (negated throughput sum) so the
// column is non-increasing down a front sorted by f1.
std::string pareto_csv(std::span<const routing::ParetoEntry> front) {
    std::string csv = "chain_id,segments,f1_latency_ms,f2_throughput_blocks_per_ms,knee\n";
    const std::size_t knee = knee_index(front);
    for (std::size_t i = 0; i < front.size(); ++i) {
        csv += std::to_string(i);
        csv += ',';
        csv += segments_string(front[i].chain);
        csv += ',';
        csv += eng::format_double(front[i].latency_sum_ms);
        csv += ',';
        csv += eng::format_double(-front[i].throughput_sum);
        csv += ',';
        csv += i == knee ? "true" : "false";
        csv += '\n';
    }
    return csv;
}

void emit_pareto_csv(std::span<const routing::ParetoEntry> front, const std::string& path) {
    if (front.empty()) throw ContractError("emit_pareto_csv: front is empty");
    write_atomic(path, pareto_csv(front));
}

const SwarmTopology& require_topology(const eng::Scenario& sc) {
    if (!sc.topology) {
        throw ConfigError("scenario.servers: this subcommand needs a topology section");
    }
    return *sc.topology;
}

int run_route(const std::string& scenario_path, const std::string& mode,
              const std::optional<std::uint64_t>& cli_seed, const std::string& out,
              int generations, int pop) {
    const eng::Scenario sc = eng::load_scenario_file(scenario_path);
    const SwarmTopology& topo = require_topology(sc);
    const std::uint64_t seed = resolve_seed(cli_seed, &sc);

    std::vector<routing::ParetoEntry> rows;
    if (mode == "min_latency" || mode == "max_throughput") {
        const routing::RoutedChain routed = mode == "min_latency"
                                                ? routing::shortest_chain(topo)
                                                : routing::max_throughput_chain(topo);
        rows.push_back(entry_for(routed.chain, topo));
        std::cout << "mode: " << mode << "\n";
        std::cout << "chain: " << segments_string(routed.chain) << "\n";
        std::cout << "total_ms: " << eng::format_double(routed.total_ms) << "\n";
        std::cout << "f1_latency_ms: " << eng::format_double(rows[0].latency_sum_ms) << "\n";
        std::cout << "f2_throughput_blocks_per_ms: "
                  << eng::format_double(-rows[0].throughput_sum) << "\n";
    } else if (mode == "latency_throughput_tradeoff") {
        const routing::ParetoFrontResult front =
            routing::pareto_chains(topo, {pop, generations}, Rng(seed));
        rows = front.chains;
        std::cout << pareto_csv(rows);
    } else {
        throw ConfigError(
            "--mode: must be min_latency, max_throughput, or latency_throughput_tradeoff");
    }
    if (!out.empty()) emit_pareto_csv(rows, out);
    return 0;
}

int run_pareto(const std::string& scenario_path, const std::optional<std::uint64_t>& cli_seed,
               const std::string& out, int generations, int pop) {
    const eng::Scenario sc = eng::load_scenario_file(scenario_path);
    const SwarmTopology& topo = require_topology(sc);
    const std::uint64_t seed = resolve_seed(cli_seed, &sc);
    const routing::ParetoFrontResult front =
        routing::pareto_chains(topo, {pop, generations}, Rng(seed));
    std::cout << pareto_csv(front.chains);
    if (!out.empty()) emit_pareto_csv(front.chains, out);
    return 0;
}

int run_serve_sim(const std::string& scenario_path, const std::string& mode,
                  const std::optional<std::uint64_t>& cli_seed, const std::string& out,
                  const std::string& trace) {
    eng::Scenario sc = eng::load_scenario_file(scenario_path);
    sc.seed = resolve_seed(cli_seed, &sc);
    if (!mode.empty()) sc = eng::apply_mode(sc, mode);
    const eng::RunOutput run = eng::run_scenario(sc);
    std::cout << eng::report_json(run.report);
    if (!out.empty()) {
        const eng::MetricsReport reports[] = {run.report};
        write_atomic(out, eng::reports_csv(reports));
    }
    if (!trace.empty()) write_atomic(trace, eng::trace_csv(run));
    return 0;
}

std::vector<std::string> split_modes(const std::string& list) {
    std::vector<std::string> modes;
    std::size_t start = 0;
    while (start <= list.size()) {
        const std::size_t comma = list.find(',', start);
        const std::string tok =
            list.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        if (tok.empty()) throw ConfigError("--mode: empty mode name in list");
        modes.push_back(tok);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return modes;
}

int run_compare(const std::string& scenario_path, const std::string& mode_list,
                const std::optional<std::uint64_t>& cli_seed, const std::string& out) {
    eng::Scenario sc = eng::load_scenario_file(scenario_path);
    sc.seed = resolve_seed(cli_seed, &sc);
    const std::vector<std::string> modes = split_modes(mode_list);
    if (modes.size() < 2) throw ConfigError("--mode: compare needs at least 2 comma-separated modes");
    const eng::Comparison cmp = eng::compare_modes(sc, modes);
    const std::string csv = eng::comparison_csv(cmp);
    std::cout << csv;
    if (!out.empty()) write_atomic(out, csv);
    return 0;
}

struct AttnSweep {
    int instances = 0;
    double max_paged_err = 0.0;
    double max_micro_err = 0.0;
};

AttnSweep attention_sweep(std::uint64_t seed, int instances) {
    Rng rng = Rng(seed).split("attn-check");
    AttnSweep sweep;
    sweep.instances = instances;
    for (int t = 0; t < instances; ++t) {
        const int n = static_cast<int>(rng.uniform_int(1, 64));
        const int dk = static_cast<int>(rng.uniform_int(1, 16));
        attn::AttentionInput input;
        input.q.resize(static_cast<std::size_t>(dk));
        for (auto& x : input.q) x = 2.0 * rng.uniform() - 1.0;
        input.keys.assign(static_cast<std::size_t>(n), attn::Vec(static_cast<std::size_t>(dk)));
        input.values.assign(static_cast<std::size_t>(n), attn::Vec(static_cast<std::size_t>(dk)));
        for (int i = 0; i < n; ++i) {
            for (int d = 0; d < dk; ++d) {
                input.keys[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)] =
                    2.0 * rng.uniform() - 1.0;
                input.values[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)] =
                    2.0 * rng.uniform() - 1.0;
            }
        }
        const attn::Vec dense = attn::dense_attention(input);

        const int block_sizes[] = {1, 2, 4, 8, 16};
        const int bs = block_sizes[rng.uniform_int(0, 4)];
        std::vector<attn::KvBlock> blocks;
        for (int i = 0; i < n; i += bs) {
            const int j = std::min(n, i + bs);
            attn::KvBlock b;
            b.keys.assign(input.keys.begin() + i, input.keys.begin() + j);
            b.values.assign(input.values.begin() + i, input.values.begin() + j);
            blocks.push_back(std::move(b));
        }
        const attn::Vec paged = attn::paged_attention(input.q, blocks);

        std::vector<attn::MicroAttentionPartial> partials;
        for (int i = 0; i < n;) {
            const int j = i + static_cast<int>(rng.uniform_int(1, n - i));
            partials.push_back(attn::micro_attention_partial(
                input.q, attn::Mat(input.keys.begin() + i, input.keys.begin() + j),
                attn::Mat(input.values.begin() + i, input.values.begin() + j)));
            i = j;
        }
        const attn::Vec micro = attn::aggregate_micro(partials);

        for (int d = 0; d < dk; ++d) {
            const auto ud = static_cast<std::size_t>(d);
            sweep.max_paged_err = std::max(sweep.max_paged_err, std::abs(paged[ud] - dense[ud]));
            sweep.max_micro_err = std::max(sweep.max_micro_err, std::abs(micro[ud] - dense[ud]));
        }
    }
    return sweep;
}

int run_attn_check(const std::optional<std::uint64_t>& cli_seed, const std::string& out) {
    const std::uint64_t seed = resolve_seed(cli_seed, nullptr);
    const AttnSweep sweep = attention_sweep(seed, 300);
    const bool ok = sweep.max_paged_err <= 1e-9 && sweep.max_micro_err <= 1e-9;
    std::string text;
    text += "instances: " + std::to_string(sweep.instances) + "\n";
    text += "max_paged_err: " + eng::format_double(sweep.max_paged_err) + "\n";
    text += "max_micro_err: " + eng::format_double(sweep.max_micro_err) + "\n";
    text += "tolerance: 1e-09\n";
    text += std::string("status: ") + (ok ? "ok" : "fail") + "\n";
    std::cout << text;
    if (!out.empty()) write_atomic(out, text);
    return ok ? 0 : 2;
}

// Re-measures every tuned threshold the test suite pins, as data.
int run_oracle(const std::optional<std::uint64_t>& cli_seed, const std::string& out) {
    const std::uint64_t seed = resolve_seed(cli_seed, nullptr);
    bool all_pass = true;
    std::string text = "check,value,threshold,pass\n";
    const auto add = [&](const std::string& name, double value, const std::string& threshold,
                         bool pass) {
        text += name + "," + eng::format_double(value) + "," + threshold + "," +
                (pass ? "true" : "false") + "\n";
        all_pass = all_pass && pass;
    };

    {
        const eng::Comparison cmp =
            eng::compare_modes(eng::make_preset("frag"), {"paged", "contiguous"});
        const double paged = cmp.reports[0].kv_utilization_pct;
        const double contiguous = cmp.reports[1].kv_utilization_pct;
        add("frag_paged_util_pct", paged, ">85", paged > 85.0);
        add("frag_contiguous_util_pct", contiguous, "[8;40]",
            contiguous >= 8.0 && contiguous <= 40.0);
    }
    {
        const eng::Comparison cmp =
            eng::compare_modes(eng::make_preset("heavy_tail"), {"iteration", "batch"});
        const double ratio = cmp.ratios[0][1];  // mean normalized latency, batch vs iteration
        add("heavy_tail_mean_latency_ratio", ratio, ">1.3", ratio > 1.3);
    }
    {
        const eng::Comparison cmp =
            eng::compare_modes(eng::make_preset("r1r2"), {"iteration", "batch"});
        const double ratio = cmp.ratios[0][1];
        add("r1r2_mean_latency_ratio", ratio, ">1", ratio > 1.0);
    }
    {
        long long pressure_on = 0;
        long long pressure_off = 0;
        for (const std::uint64_t s : {1, 2, 3, 7, 11, 16, 42}) {
            eng::Scenario sc = eng::make_preset("borrow");
            sc.seed = s;
            const auto on = eng::run_scenario(eng::apply_mode(sc, "distmem")).report;
            const auto off = eng::run_scenario(eng::apply_mode(sc, "local")).report;
            pressure_on += on.rejected + on.queued_admissions;
            pressure_off += off.rejected + off.queued_admissions;
        }
        const double reduction =
            100.0 * (1.0 - static_cast<double>(pressure_on) / static_cast<double>(pressure_off));
        add("borrow_pressure_reduction_pct", reduction, ">=30", reduction >= 30.0);
    }
    {
        const AttnSweep sweep = attention_sweep(seed, 300);
        const double err = std::max(sweep.max_paged_err, sweep.max_micro_err);
        add("attention_max_abs_err", err, "<=1e-09", err <= 1e-9);
    }

    std::cout << text;
    if (!out.empty()) write_atomic(out, text);
    return all_pass ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"deterministic distributed-LLM-serving simulator"};
    app.require_subcommand(1);

    std::optional<std::uint64_t> seed;
    std::string scenario;
    std::string mode;
    std::string out;
    std::string trace;
    int generations = 200;
    int pop = 100;

    auto* route = app.add_subcommand("route", "pick a pipeline chain through a server swarm");
    route->add_option("--scenario", scenario, "scenario JSON file")->required();
    route->add_option("--mode", mode,
                      "min_latency | max_throughput | latency_throughput_tradeoff");
    route->add_option("--seed", seed, "RNG seed (tradeoff mode)");
    route->add_option("--out", out, "write the chain CSV here");
    route->add_option("--generations", generations, "NSGA-II generations (tradeoff mode)");
    route->add_option("--pop", pop, "NSGA-II population size (tradeoff mode)");

    auto* pareto = app.add_subcommand("pareto", "latency/throughput Pareto front over chains");
    pareto->add_option("--scenario", scenario, "scenario JSON file")->required();
    pareto->add_option("--seed", seed, "RNG seed");
    pareto->add_option("--out", out, "write the front CSV here");
    pareto->add_option("--generations", generations, "NSGA-II generations");
    pareto->add_option("--pop", pop, "NSGA-II population size");

    auto* serve = app.add_subcommand("serve-sim", "run one serving scenario");
    serve->add_option("--scenario", scenario, "scenario JSON file")->required();
    serve->add_option("--mode", mode,
                      "override, '+'-joined: iteration|batch|paged|contiguous|distmem|local");
    serve->add_option("--seed", seed, "override the scenario seed");
    serve->add_option("--out", out, "write the report CSV here");
    serve->add_option("--trace", trace, "write the per-iteration trace CSV here");

    auto* compare = app.add_subcommand("compare", "run several modes over one workload stream");
    compare->add_option("--scenario", scenario, "scenario JSON file")->required();
    compare->add_option("--mode", mode, "comma-separated mode list (at least 2)")->required();
    compare->add_option("--seed", seed, "override the scenario seed");
    compare->add_option("--out", out, "write the comparison CSV here");

    auto* attn = app.add_subcommand("attn-check", "attention kernel equivalence sweep");
    attn->add_option("--seed", seed, "sweep seed");
    attn->add_option("--out", out, "write the summary here");

    auto* oracle = app.add_subcommand("oracle", "re-measure every tuned threshold");
    oracle->add_option("--seed", seed, "attention sweep seed");
    oracle->add_option("--out", out, "write the measurement CSV here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
        std::cerr << e.what() << "\n";
        return 1;
    }

    try {
        if (route->parsed()) {
            if (mode.empty()) throw ConfigError("--mode: required for route");
            return run_route(scenario, mode, seed, out, generations, pop);
        }
        if (pareto->parsed()) return run_pareto(scenario, seed, out, generations, pop);
        if (serve->parsed()) return run_serve_sim(scenario, mode, seed, out, trace);
        if (compare->parsed()) return run_compare(scenario, mode, seed, out);
        if (attn->parsed()) return run_attn_check(seed, out);
        return run_oracle(seed, out);
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }
}
