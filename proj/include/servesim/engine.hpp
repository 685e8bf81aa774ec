#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "servesim/distmem.hpp"
#include "servesim/kvcache.hpp"
#include "servesim/scheduler.hpp"
#include "servesim/types.hpp"

namespace servesim::eng {

struct SchedulerConfig {
    sched::Mode mode = sched::Mode::IterationLevel;
    int max_batch = 16;
};

struct DistSection {
    bool enabled = true;
    dist::DistConfig config;
};

// A fully described experiment: workload + serving stack + seed. The
// workload is either an explicit request list or a generator spec; the
// distmem section, when present, switches the run to one scheduler/cache
// pair per configured instance (borrowing only if enabled).
struct Scenario {
    std::string name = "inline";
    std::uint64_t seed = 1;
    std::optional<SwarmTopology> topology;
    bool has_workload = false;
    std::optional<WorkloadSpec> workload_spec;
    std::vector<Request> explicit_requests;
    kv::KvConfig kv;
    SchedulerConfig scheduler;
    sched::CostModel cost;
    std::optional<DistSection> distmem;
};

// Strict parser: unknown keys anywhere are errors, and every message names
// the offending field path ("workload.output.sigma: must be > 0").
Scenario parse_scenario_json(const std::string& text, const std::string& name = "inline");
Scenario load_scenario_file(const std::string& path);

// Built-in scenarios used by the demo files and the acceptance suite.
Scenario make_preset(const std::string& name);
std::vector<std::string> preset_names();

// Explicit list verbatim; generator spec expanded with Rng(scenario.seed).
// Sorted by (arrival_ms, id).
std::vector<Request> materialize_workload(const Scenario& sc);

struct MetricsReport {
    std::string scenario = "inline";
    std::uint64_t seed = 1;
    std::string mode;
    long long num_requests = 0;
    long long completed = 0;
    long long rejected = 0;
    long long queued_admissions = 0;
    double mean_norm_latency_ms_per_tok = 0.0;
    double p50_norm_latency_ms_per_tok = 0.0;
    double p99_norm_latency_ms_per_tok = 0.0;
    double throughput_tok_s = 0.0;
    double kv_utilization_pct = 100.0;
    long long generated_tokens = 0;
    double makespan_ms = 0.0;
    long long borrow_events = 0;
    double remote_ms = 0.0;
};

struct InstanceTrace {
    int instance = 0;
    std::vector<sched::IterationRecord> iterations;
};

struct RunOutput {
    MetricsReport report;
    std::vector<InstanceTrace> traces;
    std::vector<Request> completed;  // merged across instances, sorted by id
    std::vector<Request> rejected;
    std::string ledger_csv;  // post-run debt ledger; empty without distmem
};

// Applies a '+'-joined mode override: "iteration"/"batch" pick the
// scheduler, "paged"/"contiguous" the cache policy, "distmem"/"local"
// toggle borrowing (the scenario must carry a distmem section).
Scenario apply_mode(Scenario sc, const std::string& mode);
std::string mode_label(const Scenario& sc);

RunOutput run_scenario(const Scenario& sc);

struct Comparison {
    std::vector<std::string> modes;
    std::vector<MetricsReport> reports;       // one per mode
    std::vector<std::string> metric_names;    // ratio-table rows
    std::vector<std::vector<double>> values;  // [metric][mode]
    std::vector<std::vector<double>> ratios;  // [metric][mode], vs modes[0]
};

// Runs every mode over the identical workload stream (same seed).
Comparison compare_modes(const Scenario& sc, const std::vector<std::string>& modes);

// a == base compares equal to exactly 1.0; 0/0 counts as equal.
double metric_ratio(double a, double base);

// Shortest round-trip decimal form, locale-independent.
std::string format_double(double v);

std::string report_csv_header();
std::string report_csv_row(const MetricsReport& r);
std::string reports_csv(std::span<const MetricsReport> rs);
std::string report_json(const MetricsReport& r);
std::string comparison_csv(const Comparison& c);

// One row per iteration: iter_index, start_ms, cost_ms, batch composition
// ("reqid:phase:tokens:ctx" semicolon-joined), plus the instance id.
std::string trace_csv(const RunOutput& out);

}  // namespace servesim::eng
