#pragma once

#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "servesim/kvcache.hpp"
#include "servesim/types.hpp"

namespace servesim::sched {

struct CostModel {
    double c0_ms = 1.0;               // fixed per-iteration overhead
    double c1_ms_per_token = 0.01;    // flattened linear/MLP cost
    double c2_ms_per_ctx_token = 0.001;  // per-request attention cost
};

enum class Phase { Initiation, Increment };
enum class Mode { IterationLevel, BatchLevel };

struct BatchEntry {
    int request_id = 0;
    Phase phase = Phase::Initiation;
    int tokens = 0;       // tokens processed this iteration (0 for a finished slot)
    int context_len = 0;  // tokens attended over
};

// Selective: c0 + c1 * sum(tokens) + c2 * sum(ctx).
// Padded:    c0 + c1 * |batch| * max(tokens) + c2 * sum(ctx).
double iteration_cost(std::span<const BatchEntry> batch, const CostModel& cm, bool padded);

struct IterationRecord {
    int iter_index = 0;
    double start_ms = 0.0;
    double cost_ms = 0.0;
    std::vector<BatchEntry> entries;
};

// Optional distributed-memory integration. place_remote is consulted when a
// local append runs out of blocks: it places the token on a remote block
// (borrowing a fresh one when the current remote tail is full) or returns
// nullopt when no creditor can help. access_ms is the per-iteration surcharge
// for a request whose KV is partly remote. on_free releases that request's
// remote blocks.
struct RemotePlacement {
    double transfer_ms = 0.0;
    bool new_borrow = false;
};

struct RemoteHooks {
    std::function<std::optional<RemotePlacement>(int request_id)> place_remote;
    std::function<double(int request_id)> access_ms;
    std::function<void(int request_id)> on_free;
    explicit operator bool() const { return static_cast<bool>(place_remote); }
};

struct RunResult {
    std::vector<Request> completed;  // completion_ms set, sorted by id
    std::vector<Request> rejected;   // sorted by id
    std::vector<IterationRecord> trace;
    double makespan_ms = 0.0;
    long long generated_tokens = 0;
    long long queued_admissions = 0;  // head-of-line "does not fit yet" events
    long long borrow_events = 0;
    double remote_ms = 0.0;
    double busy_ms = 0.0;
    double util_weighted = 0.0;  // integral of utilization over iteration time

    double time_weighted_utilization_pct() const {
        return busy_ms == 0.0 ? 100.0 : util_weighted / busy_ms;
    }
};

// Single-instance scheduling state machine. The caller owns the clock:
// submit() arrived requests, then step(now) to run one iteration.
class InstanceScheduler {
public:
    InstanceScheduler(Mode mode, int max_batch, const CostModel& cm, kv::KvCacheManager& kv,
                      RemoteHooks hooks = {});

    void submit(const Request& r);
    bool has_work() const { return !active_.empty() || !queue_.empty(); }

    // Runs one iteration starting at now_ms, admitting queued requests
    // first. Returns nullopt when nothing is runnable (queue blocked on
    // capacity or empty).
    std::optional<IterationRecord> step(double now_ms);

    const std::vector<Request>& completed() const { return completed_; }
    const std::vector<Request>& rejected() const { return rejected_; }
    long long queued_admissions() const { return queued_admissions_; }
    long long borrow_events() const { return borrow_events_; }
    long long generated_tokens() const { return generated_tokens_; }
    double remote_ms() const { return remote_ms_; }
    double busy_ms() const { return busy_ms_; }
    double util_weighted() const { return util_weighted_; }

private:
    struct Active {
        Request req;
        kv::SeqId seq = -1;
        bool initiated = false;
        int increments_done = 0;
        int remote_tokens = 0;
        bool finished = false;  // batch mode: finished slot kept until batch end
        int admit_order = 0;

        int produced() const { return (initiated ? 1 : 0) + increments_done; }
        int final_context() const { return req.prompt_len + req.output_len - 1; }
    };

    bool admissible_ever(const Request& r) const;
    bool try_admit(const Request& r);
    void reject(const Request& r);
    void release(Active& a);

    Mode mode_;
    int max_batch_;
    CostModel cm_;
    kv::KvCacheManager& kv_;
    RemoteHooks hooks_;

    std::deque<Request> queue_;
    std::vector<Active> active_;
    bool batch_open_ = false;  // batch mode: a formed batch is running
    int next_iter_ = 0;
    int admit_counter_ = 0;

    std::vector<Request> completed_;
    std::vector<Request> rejected_;
    long long queued_admissions_ = 0;
    long long borrow_events_ = 0;
    long long generated_tokens_ = 0;
    double remote_ms_ = 0.0;
    double busy_ms_ = 0.0;
    double util_weighted_ = 0.0;
};

RunResult run_iteration_level(const std::vector<Request>& workload, int max_batch,
                              const CostModel& cm, kv::KvCacheManager& kv,
                              RemoteHooks hooks = {});

RunResult run_batch_level(const std::vector<Request>& workload, int max_batch,
                          const CostModel& cm, kv::KvCacheManager& kv, RemoteHooks hooks = {});

// Mean over requests of (completion - arrival) / output_len.
double normalized_latency(std::span<const Request> requests);

}  // namespace servesim::sched
