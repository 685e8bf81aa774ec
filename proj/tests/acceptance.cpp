// Acceptance checks, one line per criterion, exit 0 iff all pass.
// Oracles here are written independently of the library code they judge:
// chain enumeration is a fresh recursion, ledger conservation is re-derived
// from a shadow debt model, and thresholds are the pre-verified constants.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "servesim/attention.hpp"
#include "servesim/distmem.hpp"
#include "servesim/engine.hpp"
#include "servesim/rng.hpp"
#include "servesim/routing.hpp"

using namespace servesim;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) { return eng::format_double(v); }

// 1. Paged and micro-aggregated attention match the dense kernel exactly
//    (within 1e-9) across >= 1000 random instances, under 10 s.
Outcome check_attention() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng = Rng(20260816).split("acceptance-attn");
    const int instances = 1200;
    double max_err = 0.0;
    for (int t = 0; t < instances; ++t) {
        const int n = static_cast<int>(rng.uniform_int(1, 64));
        const int dk = static_cast<int>(rng.uniform_int(1, 16));
        attn::AttentionInput in;
        in.q.resize(static_cast<std::size_t>(dk));
        for (auto& x : in.q) x = 4.0 * rng.uniform() - 2.0;
        in.keys.assign(static_cast<std::size_t>(n), attn::Vec(static_cast<std::size_t>(dk)));
        in.values.assign(static_cast<std::size_t>(n), attn::Vec(static_cast<std::size_t>(dk)));
        for (auto& row : in.keys)
            for (auto& x : row) x = 4.0 * rng.uniform() - 2.0;
        for (auto& row : in.values)
            for (auto& x : row) x = 4.0 * rng.uniform() - 2.0;
        const attn::Vec dense = attn::dense_attention(in);

        const int sizes[] = {1, 2, 4, 8, 16};
        const int bs = sizes[rng.uniform_int(0, 4)];
        std::vector<attn::KvBlock> blocks;
        for (int i = 0; i < n; i += bs) {
            const int j = std::min(n, i + bs);
            blocks.push_back({attn::Mat(in.keys.begin() + i, in.keys.begin() + j),
                              attn::Mat(in.values.begin() + i, in.values.begin() + j)});
        }
        const attn::Vec paged = attn::paged_attention(in.q, blocks);

        std::vector<attn::MicroAttentionPartial> parts;
        for (int i = 0; i < n;) {
            const int j = i + static_cast<int>(rng.uniform_int(1, n - i));
            parts.push_back(attn::micro_attention_partial(
                in.q, attn::Mat(in.keys.begin() + i, in.keys.begin() + j),
                attn::Mat(in.values.begin() + i, in.values.begin() + j)));
            i = j;
        }
        const attn::Vec micro = attn::aggregate_micro(parts);

        for (int d = 0; d < dk; ++d) {
            const auto u = static_cast<std::size_t>(d);
            max_err = std::max(max_err, std::abs(paged[u] - dense[u]));
            max_err = std::max(max_err, std::abs(micro[u] - dense[u]));
        }
    }
    const double secs = seconds_since(t0);
    return {max_err <= 1e-9 && secs < 10.0,
            "max_abs_err=" + fmt(max_err) + " over " + std::to_string(instances) +
                " instances in " + fmt(secs) + "s (need <=1e-09, <10s)"};
}

SwarmTopology random_topology(Rng& rng, int max_extra_servers, int max_blocks) {
    SwarmTopology topo;
    topo.num_blocks = 1 + static_cast<int>(rng.uniform_int(0, max_blocks - 1));
    const int n = 1 + static_cast<int>(rng.uniform_int(0, max_extra_servers - 1));
    for (int i = 0; i < n; ++i) {
        ServerSpec s;
        s.id = i;
        s.rtt_ms = 1.0 + 99.0 * rng.uniform();
        s.per_block_ms = 0.5 + 9.5 * rng.uniform();
        s.block_start = static_cast<int>(rng.uniform_int(0, topo.num_blocks - 1));
        s.block_end = 1 + static_cast<int>(rng.uniform_int(s.block_start, topo.num_blocks - 1));
        topo.servers.push_back(s);
    }
    topo.servers.push_back(
        {n, 1.0 + 99.0 * rng.uniform(), 0.5 + 9.5 * rng.uniform(), 0, topo.num_blocks});
    return topo;
}

// 2. NSGA-II recovers the exact brute-force front on >= 19 of 20 seeded
//    topologies small enough to enumerate, under 60 s total.
Outcome check_nsga2_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng = Rng(20260816).split("acceptance-nsga2");
    int exact = 0;
    const int runs = 20;
    for (int t = 0; t < runs; ++t) {
        SwarmTopology topo = random_topology(rng, 3, 5);
        const routing::BruteForceResult bf = routing::brute_force_pareto(topo);
        const routing::ParetoFrontResult res =
            routing::pareto_chains(topo, {100, 200}, rng.split("run" + std::to_string(t)));
        if (res.front_points == bf.front_points) ++exact;
    }
    const double secs = seconds_since(t0);
    return {exact >= 19 && secs < 60.0,
            std::to_string(exact) + "/" + std::to_string(runs) + " exact fronts in " + fmt(secs) +
                "s (need >=19, <60s)"};
}

// Independent chain enumeration: at block b try every hosting server with
// every cut point, summing rtt + span * per_block.
double enumerate_best_ms(const SwarmTopology& topo, int at) {
    if (at == topo.num_blocks) return 0.0;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& s : topo.servers) {
        if (s.block_start > at || s.block_end <= at) continue;
        for (int end = at + 1; end <= s.block_end; ++end) {
            const double seg = s.rtt_ms + static_cast<double>(end - at) * s.per_block_ms;
            best = std::min(best, seg + enumerate_best_ms(topo, end));
        }
    }
    return best;
}

// 3. shortest_chain equals exhaustive enumeration on 100 random topologies.
Outcome check_shortest_chain() {
    Rng rng = Rng(20260816).split("acceptance-route");
    int matched = 0;
    const int runs = 100;
    for (int t = 0; t < runs; ++t) {
        SwarmTopology topo = random_topology(rng, 4, 5);
        const routing::RoutedChain rc = routing::shortest_chain(topo);
        const double want = enumerate_best_ms(topo, 0);
        if (rc.total_ms == want && routing::chain_total_ms(rc.chain, topo) == want) ++matched;
    }
    return {matched == runs,
            std::to_string(matched) + "/" + std::to_string(runs) + " exact matches (need all)"};
}

// 4. Iteration-level scheduling dominates batch-level per request on 50
//    randomized single-wave workloads, and the heavy-tail preset shows the
//    batch/iteration mean normalized latency ratio above 1.3.
Outcome check_scheduling_dominance() {
    Rng rng = Rng(20260816).split("acceptance-sched");
    int violations = 0;
    int compared = 0;
    const int runs = 50;
    for (int t = 0; t < runs; ++t) {
        eng::Scenario sc;
        sc.name = "wave" + std::to_string(t);
        sc.has_workload = true;
        const int n = 2 + static_cast<int>(rng.uniform_int(0, 14));
        for (int i = 0; i < n; ++i) {
            Request r;
            r.id = i + 1;
            r.arrival_ms = 0.0;
            r.prompt_len = 1 + static_cast<int>(rng.uniform_int(0, 31));
            r.output_len = 1 + static_cast<int>(rng.uniform_int(0, 63));
            sc.explicit_requests.push_back(r);
        }
        sc.kv = {kv::Policy::Paged, 512, 16, 2048};
        sc.scheduler.max_batch = 16;
        const eng::RunOutput iter = eng::run_scenario(eng::apply_mode(sc, "iteration"));
        const eng::RunOutput batch = eng::run_scenario(eng::apply_mode(sc, "batch"));
        if (iter.completed.size() != static_cast<std::size_t>(n) ||
            batch.completed.size() != static_cast<std::size_t>(n)) {
            ++violations;
            continue;
        }
        for (std::size_t i = 0; i < iter.completed.size(); ++i) {
            ++compared;
            if (*iter.completed[i].completion_ms > *batch.completed[i].completion_ms + 1e-9) {
                ++violations;
            }
        }
    }
    const eng::Comparison cmp =
        eng::compare_modes(eng::make_preset("heavy_tail"), {"iteration", "batch"});
    const double ratio = cmp.ratios[0][1];
    return {violations == 0 && ratio > 1.3,
            std::to_string(violations) + " dominance violations over " + std::to_string(compared) +
                " requests (need 0); heavy-tail mean latency ratio " + fmt(ratio) + " (need >1.3)"};
}

// 5. Contiguous max_len reservation wastes the pool on the lognormal preset
//    while paged allocation keeps utilization high.
Outcome check_fragmentation_gap() {
    const eng::Comparison cmp =
        eng::compare_modes(eng::make_preset("frag"), {"paged", "contiguous"});
    const double paged = cmp.reports[0].kv_utilization_pct;
    const double contiguous = cmp.reports[1].kv_utilization_pct;
    const bool ok = paged > 85.0 && contiguous >= 8.0 && contiguous <= 40.0;
    return {ok, "paged " + fmt(paged) + "% (need >85), contiguous " + fmt(contiguous) +
                    "% (need in [8, 40])"};
}

// 6. A 10^4-operation fuzz keeps the debt ledger double-entry consistent and
//    conservative after every operation, and a scripted scenario puts one
//    instance in the creditor and debtor roles at once.
Outcome check_ledger_integrity() {
    dist::DistConfig cfg;
    cfg.instances = {
        {.id = 0, .device = 0, .node = 0, .capacity_rblocks = 8, .extra_ms = 0.0},
        {.id = 1, .device = 0, .node = 0, .capacity_rblocks = 12, .extra_ms = 0.1},
        {.id = 2, .device = 1, .node = 0, .capacity_rblocks = 16, .extra_ms = 0.0},
        {.id = 3, .device = 2, .node = 1, .capacity_rblocks = 24, .extra_ms = 0.3},
        {.id = 4, .device = 3, .node = 1, .capacity_rblocks = 32, .extra_ms = 0.0},
    };
    dist::DistMem dm{cfg};
    Rng rng = Rng(20260816).split("acceptance-ledger");
    std::map<std::pair<int, int>, int> debt;  // (debtor, creditor) -> count
    double now = 0.0;
    int violations = 0;
    int grants = 0;
    const int ops = 10000;

    const auto audit = [&] {
        const auto rows = dm.ledger_snapshot();
        long long lent_sum = 0;
        long long borrowed_sum = 0;
        std::map<std::pair<int, int>, int> seen;
        for (const auto& row : rows) {
            if (row.free < 0 || row.locally_used < 0 || row.lent_total < 0 ||
                row.borrowed_total < 0) {
                ++violations;
            }
            if (row.free + row.locally_used + row.lent_total != row.capacity) ++violations;
            long long lt = 0;
            for (const auto& [to, n] : row.lent_to) lt += n;
            long long bt = 0;
            for (const auto& [from, n] : row.borrowed_from) {
                bt += n;
                seen[{row.instance_id, from}] = n;
            }
            if (lt != row.lent_total || bt != row.borrowed_total) ++violations;
            lent_sum += row.lent_total;
            borrowed_sum += row.borrowed_total;
        }
        if (lent_sum != borrowed_sum) ++violations;
        std::map<std::pair<int, int>, int> model;
        for (const auto& [k, n] : debt) {
            if (n > 0) model[k] = n;
        }
        if (model != seen) ++violations;
        for (const auto& a : rows) {
            for (const auto& [to, n] : a.lent_to) {
                bool mirrored = false;
                for (const auto& b : rows) {
                    if (b.instance_id != to) continue;
                    const auto it = b.borrowed_from.find(a.instance_id);
                    mirrored = it != b.borrowed_from.end() && it->second == n;
                }
                if (!mirrored) ++violations;
            }
        }
    };

    for (int op = 0; op < ops; ++op) {
        now += rng.uniform();
        const int what = static_cast<int>(rng.uniform_int(0, 9));
        const int who = static_cast<int>(rng.uniform_int(0, 4));
        if (what <= 2) {
            dm.heartbeat(who, dm.free_rblocks(who), now);
        } else if (what <= 4) {
            dm.set_now(now);
            (void)dm.alloc_local(who, 1 + static_cast<int>(rng.uniform_int(0, 3)));
        } else if (what <= 6) {
            dm.set_now(now);
            const int used = dm.locally_used(who);
            if (used > 0) dm.free_local(who, 1 + static_cast<int>(rng.uniform_int(0, used - 1)));
        } else if (what <= 8) {
            dm.heartbeat(who, dm.free_rblocks(who), now);  // a borrower is alive
            for (const auto& g :
                 dm.borrow(who, 1 + static_cast<int>(rng.uniform_int(0, 3)))) {
                debt[{who, g.creditor}] += g.count;
                grants += g.count;
            }
        } else {
            std::vector<std::pair<std::pair<int, int>, int>> open;
            for (const auto& [k, n] : debt) {
                if (n > 0) open.push_back({k, n});
            }
            if (!open.empty()) {
                const auto& [key, n] = open[rng.uniform_int(0, static_cast<int>(open.size()) - 1)];
                const int give = 1 + static_cast<int>(rng.uniform_int(0, n - 1));
                dm.set_now(now);
                dm.reclaim(key.first, key.second, give);
                debt[key] -= give;
            }
        }
        audit();
    }

    // Dual role: 0 borrows from 1, then 1 fills up and borrows from 2.
    dist::DistConfig small;
    small.instances = {
        {.id = 0, .device = 0, .node = 0, .capacity_rblocks = 8, .extra_ms = 0.0},
        {.id = 1, .device = 0, .node = 0, .capacity_rblocks = 8, .extra_ms = 0.0},
        {.id = 2, .device = 5, .node = 3, .capacity_rblocks = 8, .extra_ms = 0.0},
    };
    dist::DistMem duo{small};
    for (int i = 0; i < 3; ++i) duo.heartbeat(i, duo.free_rblocks(i), 0.0);
    bool dual = true;
    dual = dual && duo.alloc_local(0, 8).has_value();
    const auto g1 = duo.borrow(0, 2);
    dual = dual && g1.size() == 1 && g1[0].creditor == 1 && g1[0].count == 2;
    dual = dual && duo.alloc_local(1, 6).has_value();
    for (int i = 0; i < 3; ++i) duo.heartbeat(i, duo.free_rblocks(i), 1.0);
    const auto g2 = duo.borrow(1, 3);
    int from2 = 0;
    for (const auto& g : g2) {
        if (g.creditor == 2) from2 += g.count;
    }
    dual = dual && from2 == 3 && duo.lent_total(1) == 2 && duo.borrowed_total(1) == 3;
    dual = dual && duo.free_rblocks(1) == 0 && duo.locally_used(1) == 6;

    return {violations == 0 && grants > 0 && dual,
            std::to_string(violations) + " invariant violations over " + std::to_string(ops) +
                " ops, " + std::to_string(grants) + " blocks granted (need 0 violations); " +
                "dual creditor/debtor role " + (dual ? "reproduced" : "NOT reproduced")};
}

// 7. Every CLI subcommand, run twice with the same scenario and seed,
//    produces byte-identical stdout and output files.
Outcome check_cli_determinism() {
    const fs::path dir =
        fs::temp_directory_path() / ("servesim-accept-" + std::to_string(::getpid()));
    fs::create_directories(dir);

    const fs::path swarm = dir / "swarm.json";
    {
        std::ofstream f(swarm);
        f << R"({"num_blocks": 6, "servers": [)"
          << R"({"id": 0, "rtt_ms": 9.0, "per_block_ms": 1.5, "blocks": [0, 6]},)"
          << R"({"id": 1, "rtt_ms": 4.0, "per_block_ms": 0.5, "blocks": [0, 3]},)"
          << R"({"id": 2, "rtt_ms": 4.0, "per_block_ms": 0.5, "blocks": [3, 6]}],)"
          << R"("seed": 5})";
    }
    const fs::path serve = dir / "serve.json";
    {
        std::ofstream f(serve);
        f << R"({"workload": {"num_requests": 40, "arrivals": {"kind": "poisson",)"
          << R"( "rate_per_s": 400.0}, "prompt": {"kind": "uniform", "lo": 4, "hi": 48},)"
          << R"( "output": {"kind": "uniform", "lo": 2, "hi": 24}},)"
          << R"( "kv": {"policy": "paged", "capacity_blocks": 96, "block_size": 16,)"
          << R"( "max_len": 2048}, "scheduler": {"max_batch": 8},)"
          << R"( "distmem": {"instances": [)"
          << R"({"id": 0, "device": 0, "node": 0, "capacity_rblocks": 48},)"
          << R"({"id": 1, "device": 1, "node": 0, "capacity_rblocks": 48}],)"
          << R"( "tier_ms": [0.05, 0.1, 1.0]}, "seed": 9})";
    }

    const std::string bin = SIMCTL_PATH;
    const auto run = [&](const std::string& args, const fs::path& stdout_to) {
        const std::string cmd = "\"" + bin + "\" " + args + " > \"" + stdout_to.string() +
                                "\" 2> /dev/null";
        return std::system(cmd.c_str()) == 0;
    };
    const auto slurp = [](const fs::path& p) {
        std::ifstream f(p, std::ios::binary);
        std::ostringstream ss;
        ss << f.rdbuf();
        return ss.str();
    };

    int mismatches = 0;
    int checked = 0;
    std::string first_bad;
    const auto twice = [&](const std::string& name, const std::string& args_template,
                           const std::vector<std::string>& file_slots) {
        std::vector<std::string> blobs[2];
        for (int r = 0; r < 2; ++r) {
            std::string args = args_template;
            std::vector<fs::path> outs;
            for (const auto& slot : file_slots) {
                const fs::path p = dir / (name + "-" + slot + std::to_string(r));
                args += " --" + slot + " \"" + p.string() + "\"";
                outs.push_back(p);
            }
            const fs::path so = dir / (name + "-stdout" + std::to_string(r));
            if (!run(args, so)) {
                ++mismatches;
                if (first_bad.empty()) first_bad = name + " (nonzero exit)";
                return;
            }
            blobs[r].push_back(slurp(so));
            for (const auto& p : outs) blobs[r].push_back(slurp(p));
        }
        ++checked;
        if (blobs[0] != blobs[1]) {
            ++mismatches;
            if (first_bad.empty()) first_bad = name;
        }
    };

    const std::string sq = "\"" + swarm.string() + "\"";
    const std::string vq = "\"" + serve.string() + "\"";
    twice("route", "route --scenario " + sq + " --mode min_latency", {"out"});
    twice("pareto", "pareto --scenario " + sq + " --seed 5 --generations 60 --pop 40", {"out"});
    twice("serve-sim", "serve-sim --scenario " + vq + " --mode distmem", {"out", "trace"});
    twice("compare", "compare --scenario " + vq + " --mode distmem,local --seed 9", {"out"});
    twice("attn-check", "attn-check --seed 5", {"out"});
    twice("oracle", "oracle --seed 5", {"out"});

    fs::remove_all(dir);
    return {mismatches == 0 && checked == 6,
            std::to_string(checked) + "/6 subcommands byte-identical across reruns" +
                (first_bad.empty() ? "" : " (first failure: " + first_bad + ")")};
}

// 8. Borrowing relieves admission pressure on the tight-memory preset:
//    rejected + queued admissions drop by at least 30% when distmem is on,
//    aggregated over a fixed seed set.
Outcome check_borrowing_benefit() {
    long long on_sum = 0;
    long long off_sum = 0;
    for (const std::uint64_t s : {1, 2, 3, 7, 11, 16, 42}) {
        eng::Scenario sc = eng::make_preset("borrow");
        sc.seed = s;
        const auto on = eng::run_scenario(eng::apply_mode(sc, "distmem")).report;
        const auto off = eng::run_scenario(eng::apply_mode(sc, "local")).report;
        on_sum += on.rejected + on.queued_admissions;
        off_sum += off.rejected + off.queued_admissions;
    }
    if (off_sum == 0) return {false, "baseline shows no admission pressure; preset is broken"};
    const double reduction =
        100.0 * (1.0 - static_cast<double>(on_sum) / static_cast<double>(off_sum));
    return {reduction >= 30.0, "rejected+queued " + std::to_string(on_sum) + " with borrowing vs " +
                                   std::to_string(off_sum) + " without, reduction " +
                                   fmt(reduction) + "% (need >=30%)"};
}

}  // namespace

int main() {
    struct Row {
        const char* name;
        Outcome (*fn)();
    };
    const Row rows[] = {
        {"attention exactness", check_attention},
        {"NSGA-II oracle equivalence", check_nsga2_oracle},
        {"baseline routing optimality", check_shortest_chain},
        {"scheduling dominance", check_scheduling_dominance},
        {"fragmentation gap", check_fragmentation_gap},
        {"ledger integrity", check_ledger_integrity},
        {"CLI determinism", check_cli_determinism},
        {"borrowing benefit", check_borrowing_benefit},
    };
    bool all = true;
    int idx = 1;
    for (const auto& row : rows) {
        Outcome out;
        try {
            out = row.fn();
        } catch (const std::exception& e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        all = all && out.pass;
        std::printf("%s criterion %d (%s): %s\n", out.pass ? "PASS" : "FAIL", idx, row.name,
                    out.detail.c_str());
        std::fflush(stdout);
        ++idx;
    }
    return all ? 0 : 1;
}
