#include "servesim/scheduler.hpp"

#include <algorithm>
#include <cstddef>
#include <string>
#include <utility>

#include "servesim/errors.hpp"

namespace servesim::sched {

double iteration_cost(std::span<const BatchEntry> batch, const CostModel& cm, bool padded) {
    if (batch.empty()) throw ContractError("iteration_cost: empty batch");
    long long tok_sum = 0;
    long long ctx_sum = 0;
    int tok_max = 0;
    for (const BatchEntry& e : batch) {
        if (e.tokens < 0) throw ContractError("iteration_cost: negative token count");
        if (e.context_len < 0) throw ContractError("iteration_cost: negative context length");
        tok_sum += e.tokens;
        ctx_sum += e.context_len;
        tok_max = std::max(tok_max, e.tokens);
    }
    const double linear =
        padded ? cm.c1_ms_per_token * static_cast<double>(batch.size()) * static_cast<double>(tok_max)
               : cm.c1_ms_per_token * static_cast<double>(tok_sum);
    return cm.c0_ms + linear + cm.c2_ms_per_ctx_token * static_cast<double>(ctx_sum);
}

InstanceScheduler::InstanceScheduler(Mode mode, int max_batch, const CostModel& cm,
                                     kv::KvCacheManager& kv, RemoteHooks hooks)
    : mode_(mode), max_batch_(max_batch), cm_(cm), kv_(kv), hooks_(std::move(hooks)) {
    if (max_batch_ < 1) throw ConfigError("scheduler.max_batch: must be >= 1");
    if (cm_.c0_ms < 0.0 || cm_.c1_ms_per_token < 0.0 || cm_.c2_ms_per_ctx_token < 0.0)
        throw ConfigError("cost: coefficients must be >= 0");
}

void InstanceScheduler::submit(const Request& r) {
    if (r.prompt_len < 1)
        throw ContractError("request " + std::to_string(r.id) + ": prompt_len must be >= 1");
    if (r.output_len < 1)
        throw ContractError("request " + std::to_string(r.id) + ": output_len must be >= 1");
    queue_.push_back(r);
}

bool InstanceScheduler::admissible_ever(const Request& r) const {
    const int total = r.prompt_len + r.output_len - 1;
    if (kv_.policy() == kv::Policy::Contiguous)
        return total <= kv_.max_len() && kv_.max_len() <= kv_.capacity_tokens();
    if (kv_.blocks_needed(r.prompt_len) > kv_.capacity_blocks()) return false;
    if (mode_ == Mode::IterationLevel && hooks_) return true;  // tail may spill remote
    return kv_.blocks_needed(total) <= kv_.capacity_blocks();
}

bool InstanceScheduler::try_admit(const Request& r) {
    const auto seq = kv_.admit_sequence(r.prompt_len);
    if (!seq) return false;
    Active a;
    a.req = r;
    a.seq = *seq;
    a.admit_order = admit_counter_++;
    active_.push_back(std::move(a));
    return true;
}

void InstanceScheduler::reject(const Request& r) { rejected_.push_back(r); }

void InstanceScheduler::release(Active& a) {
    kv_.free_sequence(a.seq);
    if (a.remote_tokens > 0 && hooks_.on_free) hooks_.on_free(a.req.id);
}

std::optional<IterationRecord> InstanceScheduler::step(double now_ms) {
    if (mode_ == Mode::IterationLevel) {
        while (static_cast<int>(active_.size()) < max_batch_ && !queue_.empty()) {
            const Request head = queue_.front();
            if (!admissible_ever(head)) {
                queue_.pop_front();
                reject(head);
                continue;
            }
            if (!try_admit(head)) {
                ++queued_admissions_;
                break;  // head of line blocks to preserve FCFS
            }
            queue_.pop_front();
        }
    } else if (!batch_open_) {
        // A batch reserves the projected final footprint of every member up
        // front so in-flight appends can never run out of blocks.
        const bool paged = kv_.policy() == kv::Policy::Paged;
        const int budget = paged ? kv_.free_blocks() : 0;
        int projected = 0;
        while (static_cast<int>(active_.size()) < max_batch_ && !queue_.empty()) {
            const Request head = queue_.front();
            if (!admissible_ever(head)) {
                queue_.pop_front();
                reject(head);
                continue;
            }
            if (paged) {
                const int need = kv_.blocks_needed(head.prompt_len + head.output_len - 1);
                if (projected + need > budget) {
                    ++queued_admissions_;
                    break;
                }
                if (!try_admit(head))
                    throw ContractError("batch admission: reserved projection but admit failed");
                projected += need;
            } else if (!try_admit(head)) {
                ++queued_admissions_;
                break;
            }
            queue_.pop_front();
        }
        if (!active_.empty()) batch_open_ = true;
    }

    std::vector<BatchEntry> entries;
    std::vector<std::size_t> scheduled;
    double surcharge = 0.0;
    for (;;) {
        entries.clear();
        scheduled.clear();
        surcharge = 0.0;
        std::vector<std::size_t> stalled;
        for (std::size_t i = 0; i < active_.size(); ++i) {
            Active& a = active_[i];
            if (a.finished) {
                // Finished slot rides along until the whole batch drains.
                entries.push_back({a.req.id, Phase::Increment, 0, a.final_context()});
                continue;
            }
            if (!a.initiated) {
                entries.push_back(
                    {a.req.id, Phase::Initiation, a.req.prompt_len, a.req.prompt_len});
                scheduled.push_back(i);
            } else {
                // The KV slot for this step is appended before compute runs.
                bool ok = a.remote_tokens == 0 && kv_.append_token(a.seq);
                if (!ok && hooks_) {
                    if (const auto placed = hooks_.place_remote(a.req.id)) {
                        ++a.remote_tokens;
                        surcharge += placed->transfer_ms;
                        if (placed->new_borrow) ++borrow_events_;
                        ok = true;
                    }
                }
                if (!ok) {
                    stalled.push_back(i);
                    continue;
                }
                entries.push_back(
                    {a.req.id, Phase::Increment, 1, a.req.prompt_len + a.increments_done + 1});
                scheduled.push_back(i);
            }
            if (a.remote_tokens > 0 && hooks_.access_ms) surcharge += hooks_.access_ms(a.req.id);
        }
        if (!scheduled.empty()) break;
        if (stalled.empty()) return std::nullopt;
        // Full stall: no request could take a block. Evict the most recently
        // admitted stalled request, free its memory, and retry. A failed
        // append mutates nothing, so the retry is clean.
        std::size_t victim = stalled.front();
        for (const std::size_t i : stalled)
            if (active_[i].admit_order > active_[victim].admit_order) victim = i;
        Active v = std::move(active_[victim]);
        active_.erase(active_.begin() + static_cast<std::ptrdiff_t>(victim));
        release(v);
        reject(v.req);
    }

    const bool padded = mode_ == Mode::BatchLevel;
    const double cost = iteration_cost(entries, cm_, padded) + surcharge;
    remote_ms_ += surcharge;
    const double end_ms = now_ms + cost;

    // Memory sampled after admissions and appends is what the iteration holds.
    util_weighted_ += kv_.utilization_pct() * cost;
    busy_ms_ += cost;

    IterationRecord rec;
    rec.iter_index = next_iter_++;
    rec.start_ms = now_ms;
    rec.cost_ms = cost;
    rec.entries = entries;

    for (const std::size_t i : scheduled) {
        Active& a = active_[i];
        if (!a.initiated)
            a.initiated = true;
        else
            ++a.increments_done;
        ++generated_tokens_;
        if (a.produced() == a.req.output_len) a.finished = true;
    }

    if (mode_ == Mode::IterationLevel) {
        for (auto it = active_.begin(); it != active_.end();) {
            if (it->finished) {
                it->req.completion_ms = end_ms;
                completed_.push_back(it->req);
                release(*it);
                it = active_.erase(it);
            } else {
                ++it;
            }
        }
    } else if (std::all_of(active_.begin(), active_.end(),
                           [](const Active& a) { return a.finished; })) {
        for (Active& a : active_) {
            a.req.completion_ms = end_ms;
            completed_.push_back(a.req);
            release(a);
        }
        active_.clear();
        batch_open_ = false;
    }
    return rec;
}

namespace {

RunResult run_mode(Mode mode, const std::vector<Request>& workload, int max_batch,
                   const CostModel& cm, kv::KvCacheManager& kv, RemoteHooks hooks) {
    std::vector<Request> arrivals = workload;
    std::stable_sort(arrivals.begin(), arrivals.end(),
                     [](const Request& a, const Request& b) { return a.arrival_ms < b.arrival_ms; });

    InstanceScheduler sched(mode, max_batch, cm, kv, std::move(hooks));
    RunResult out;
    double now = 0.0;
    std::size_t next = 0;
    while (next < arrivals.size() || sched.has_work()) {
        while (next < arrivals.size() && arrivals[next].arrival_ms <= now)
            sched.submit(arrivals[next++]);
        if (auto rec = sched.step(now)) {
            now = rec->start_ms + rec->cost_ms;
            out.trace.push_back(std::move(*rec));
        } else if (next < arrivals.size()) {
            now = std::max(now, arrivals[next].arrival_ms);
        } else if (sched.has_work()) {
            throw ContractError("scheduler: queue blocked with no future arrivals");
        }
    }

    out.completed = sched.completed();
    out.rejected = sched.rejected();
    const auto by_id = [](const Request& a, const Request& b) { return a.id < b.id; };
    std::sort(out.completed.begin(), out.completed.end(), by_id);
    std::sort(out.rejected.begin(), out.rejected.end(), by_id);
    out.generated_tokens = sched.generated_tokens();
    out.queued_admissions = sched.queued_admissions();
    out.borrow_events = sched.borrow_events();
    out.remote_ms = sched.remote_ms();
    out.busy_ms = sched.busy_ms();
    out.util_weighted = sched.util_weighted();
    if (!out.trace.empty()) out.makespan_ms = out.trace.back().start_ms + out.trace.back().cost_ms;
    return out;
}

}  // namespace

RunResult run_iteration_level(const std::vector<Request>& workload, int max_batch,
                              const CostModel& cm, kv::KvCacheManager& kv, RemoteHooks hooks) {
    return run_mode(Mode::IterationLevel, workload, max_batch, cm, kv, std::move(hooks));
}

RunResult run_batch_level(const std::vector<Request>& workload, int max_batch, const CostModel& cm,
                          kv::KvCacheManager& kv, RemoteHooks hooks) {
    return run_mode(Mode::BatchLevel, workload, max_batch, cm, kv, std::move(hooks));
}

double normalized_latency(std::span<const Request> requests) {
    if (requests.empty()) throw ContractError("normalized_latency: empty request set");
    double sum = 0.0;
    for (const Request& r : requests) {
        if (!r.completion_ms)
            throw ContractError("normalized_latency: request " + std::to_string(r.id) +
                                " has no completion");
        sum += (*r.completion_ms - r.arrival_ms) / static_cast<double>(r.output_len);
    }
    return sum / static_cast<double>(requests.size());
}

}  // namespace servesim::sched
