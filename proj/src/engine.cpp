#include "servesim/engine.hpp"

#include <algorithm>
#include <charconv>
#include <climits>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <queue>
#include <set>
#include <sstream>
#include <string_view>
#include <tuple>
#include <utility>

#include "json.hpp"
#include "servesim/errors.hpp"
#include "servesim/rng.hpp"
#include "servesim/workload.hpp"

namespace servesim::eng {

namespace {

using njson = nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw ConfigError(path + ": " + what);
}

void check_keys(const njson& j, const std::string& path,
                std::initializer_list<std::string_view> allowed) {
    if (!j.is_object()) fail(path, "must be an object");
    for (const auto& item : j.items()) {
        bool known = false;
        for (const auto a : allowed) {
            if (item.key() == a) {
                known = true;
                break;
            }
        }
        if (!known) fail(path + "." + item.key(), "unknown key");
    }
}

const njson* find(const njson& j, const char* key) {
    const auto it = j.find(key);
    return it == j.end() ? nullptr : &*it;
}

double as_double(const njson& v, const std::string& path) {
    if (!v.is_number()) fail(path, "must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail(path, "must be finite");
    return d;
}

int as_int(const njson& v, const std::string& path) {
    if (!v.is_number_integer()) fail(path, "must be an integer");
    const auto wide = v.get<long long>();
    if (wide < INT_MIN || wide > INT_MAX) fail(path, "out of range");
    return static_cast<int>(wide);
}

bool as_bool(const njson& v, const std::string& path) {
    if (!v.is_boolean()) fail(path, "must be true or false");
    return v.get<bool>();
}

std::string as_string(const njson& v, const std::string& path) {
    if (!v.is_string()) fail(path, "must be a string");
    return v.get<std::string>();
}

double req_double(const njson& j, const std::string& path, const char* key) {
    const auto* v = find(j, key);
    if (!v) fail(path + "." + key, "missing required field");
    return as_double(*v, path + "." + key);
}

double opt_double(const njson& j, const std::string& path, const char* key, double def) {
    const auto* v = find(j, key);
    return v ? as_double(*v, path + "." + key) : def;
}

int req_int(const njson& j, const std::string& path, const char* key) {
    const auto* v = find(j, key);
    if (!v) fail(path + "." + key, "missing required field");
    return as_int(*v, path + "." + key);
}

int opt_int(const njson& j, const std::string& path, const char* key, int def) {
    const auto* v = find(j, key);
    return v ? as_int(*v, path + "." + key) : def;
}

std::string req_string(const njson& j, const std::string& path, const char* key) {
    const auto* v = find(j, key);
    if (!v) fail(path + "." + key, "missing required field");
    return as_string(*v, path + "." + key);
}

void forbid(const njson& j, const std::string& path, const char* key, const char* why) {
    if (find(j, key)) fail(path + "." + key, why);
}

LengthDist parse_length(const njson& j, const std::string& path) {
    check_keys(j, path, {"kind", "lo", "hi", "mu", "sigma", "max_len"});
    LengthDist d;
    const std::string kind = req_string(j, path, "kind");
    if (kind == "uniform") {
        forbid(j, path, "mu", "only valid for kind \"lognormal\"");
        forbid(j, path, "sigma", "only valid for kind \"lognormal\"");
        d.kind = LengthDist::Kind::Uniform;
        d.lo = req_int(j, path, "lo");
        d.hi = req_int(j, path, "hi");
        d.max_len = opt_int(j, path, "max_len", d.hi);
    } else if (kind == "lognormal") {
        forbid(j, path, "lo", "only valid for kind \"uniform\"");
        forbid(j, path, "hi", "only valid for kind \"uniform\"");
        d.kind = LengthDist::Kind::Lognormal;
        d.mu = req_double(j, path, "mu");
        d.sigma = req_double(j, path, "sigma");
        d.max_len = req_int(j, path, "max_len");
    } else {
        fail(path + ".kind", "must be \"uniform\" or \"lognormal\"");
    }
    return d;
}

ArrivalProcess parse_arrivals(const njson& j, const std::string& path) {
    check_keys(j, path, {"kind", "interval_ms", "rate_per_s"});
    ArrivalProcess a;
    const std::string kind = req_string(j, path, "kind");
    if (kind == "fixed") {
        forbid(j, path, "rate_per_s", "only valid for kind \"poisson\"");
        a.kind = ArrivalProcess::Kind::Fixed;
        a.interval_ms = req_double(j, path, "interval_ms");
    } else if (kind == "poisson") {
        forbid(j, path, "interval_ms", "only valid for kind \"fixed\"");
        a.kind = ArrivalProcess::Kind::Poisson;
        a.rate_per_s = req_double(j, path, "rate_per_s");
    } else {
        fail(path + ".kind", "must be \"fixed\" or \"poisson\"");
    }
    return a;
}

void parse_workload(const njson& j, Scenario& sc) {
    const std::string path = "workload";
    if (find(j, "requests")) {
        check_keys(j, path, {"requests"});
        const auto& arr = j.at("requests");
        if (!arr.is_array()) fail(path + ".requests", "must be an array");
        std::set<int> ids;
        int idx = 0;
        for (const auto& rj : arr) {
            const std::string rp = path + ".requests[" + std::to_string(idx) + "]";
            check_keys(rj, rp, {"id", "arrival_ms", "prompt_len", "output_len"});
            Request r;
            r.id = opt_int(rj, rp, "id", idx);
            r.arrival_ms = opt_double(rj, rp, "arrival_ms", 0.0);
            r.prompt_len = req_int(rj, rp, "prompt_len");
            r.output_len = req_int(rj, rp, "output_len");
            if (r.arrival_ms < 0.0) fail(rp + ".arrival_ms", "must be >= 0");
            if (r.prompt_len < 1) fail(rp + ".prompt_len", "must be >= 1");
            if (r.output_len < 1) fail(rp + ".output_len", "must be >= 1");
            if (!ids.insert(r.id).second) fail(rp + ".id", "duplicate request id");
            sc.explicit_requests.push_back(r);
            ++idx;
        }
    } else {
        check_keys(j, path, {"num_requests", "arrivals", "prompt", "output"});
        WorkloadSpec spec;
        spec.num_requests = req_int(j, path, "num_requests");
        const auto* arrivals = find(j, "arrivals");
        if (!arrivals) fail(path + ".arrivals", "missing required field");
        spec.arrivals = parse_arrivals(*arrivals, path + ".arrivals");
        const auto* prompt = find(j, "prompt");
        if (!prompt) fail(path + ".prompt", "missing required field");
        spec.prompt = parse_length(*prompt, path + ".prompt");
        const auto* output = find(j, "output");
        if (!output) fail(path + ".output", "missing required field");
        spec.output = parse_length(*output, path + ".output");
        validate_workload_spec(spec);
        sc.workload_spec = spec;
    }
    sc.has_workload = true;
}

void parse_kv(const njson& j, Scenario& sc) {
    check_keys(j, "kv", {"policy", "capacity_blocks", "block_size", "max_len"});
    if (const auto* p = find(j, "policy")) {
        const std::string policy = as_string(*p, "kv.policy");
        if (policy == "paged") {
            sc.kv.policy = kv::Policy::Paged;
        } else if (policy == "contiguous") {
            sc.kv.policy = kv::Policy::Contiguous;
        } else {
            fail("kv.policy", "must be \"paged\" or \"contiguous\"");
        }
    }
    sc.kv.capacity_blocks = opt_int(j, "kv", "capacity_blocks", sc.kv.capacity_blocks);
    sc.kv.block_size = opt_int(j, "kv", "block_size", sc.kv.block_size);
    sc.kv.max_len = opt_int(j, "kv", "max_len", sc.kv.max_len);
    if (sc.kv.capacity_blocks < 1) fail("kv.capacity_blocks", "must be >= 1");
    if (sc.kv.block_size < 1) fail("kv.block_size", "must be >= 1");
    if (sc.kv.max_len < 1) fail("kv.max_len", "must be >= 1");
}

void parse_scheduler(const njson& j, Scenario& sc) {
    check_keys(j, "scheduler", {"mode", "max_batch"});
    if (const auto* m = find(j, "mode")) {
        const std::string mode = as_string(*m, "scheduler.mode");
        if (mode == "iteration") {
            sc.scheduler.mode = sched::Mode::IterationLevel;
        } else if (mode == "batch") {
            sc.scheduler.mode = sched::Mode::BatchLevel;
        } else {
            fail("scheduler.mode", "must be \"iteration\" or \"batch\"");
        }
    }
    sc.scheduler.max_batch = opt_int(j, "scheduler", "max_batch", sc.scheduler.max_batch);
    if (sc.scheduler.max_batch < 1) fail("scheduler.max_batch", "must be >= 1");
}

void parse_cost(const njson& j, Scenario& sc) {
    check_keys(j, "cost", {"c0_ms", "c1_ms_per_token", "c2_ms_per_ctx_token"});
    sc.cost.c0_ms = opt_double(j, "cost", "c0_ms", sc.cost.c0_ms);
    sc.cost.c1_ms_per_token = opt_double(j, "cost", "c1_ms_per_token", sc.cost.c1_ms_per_token);
    sc.cost.c2_ms_per_ctx_token =
        opt_double(j, "cost", "c2_ms_per_ctx_token", sc.cost.c2_ms_per_ctx_token);
    if (sc.cost.c0_ms < 0.0) fail("cost.c0_ms", "must be >= 0");
    if (sc.cost.c1_ms_per_token < 0.0) fail("cost.c1_ms_per_token", "must be >= 0");
    if (sc.cost.c2_ms_per_ctx_token < 0.0) fail("cost.c2_ms_per_ctx_token", "must be >= 0");
}

void parse_distmem(const njson& j, Scenario& sc) {
    check_keys(j, "distmem",
               {"enabled", "instances", "tier_ms", "heartbeat_interval_ms", "rblock_tokens"});
    DistSection ds;
    if (const auto* e = find(j, "enabled")) ds.enabled = as_bool(*e, "distmem.enabled");
    const auto* arr = find(j, "instances");
    if (!arr) fail("distmem.instances", "missing required field");
    if (!arr->is_array() || arr->empty()) fail("distmem.instances", "must be a non-empty array");
    int idx = 0;
    for (const auto& ij : *arr) {
        const std::string ip = "distmem.instances[" + std::to_string(idx) + "]";
        check_keys(ij, ip, {"id", "device", "node", "capacity_rblocks", "extra_ms"});
        dist::InstanceSpec spec;
        spec.id = req_int(ij, ip, "id");
        spec.device = req_int(ij, ip, "device");
        spec.node = req_int(ij, ip, "node");
        spec.capacity_rblocks = req_int(ij, ip, "capacity_rblocks");
        spec.extra_ms = opt_double(ij, ip, "extra_ms", 0.0);
        ds.config.instances.push_back(spec);
        ++idx;
    }
    if (const auto* t = find(j, "tier_ms")) {
        if (!t->is_array() || t->size() != 3) fail("distmem.tier_ms", "must be an array of 3 numbers");
        for (std::size_t k = 0; k < 3; ++k) {
            ds.config.tier_ms[k] =
                as_double((*t)[k], "distmem.tier_ms[" + std::to_string(k) + "]");
        }
    }
    ds.config.heartbeat_interval_ms =
        opt_double(j, "distmem", "heartbeat_interval_ms", ds.config.heartbeat_interval_ms);
    ds.config.rblock_tokens = opt_int(j, "distmem", "rblock_tokens", sc.kv.block_size);
    const dist::DistMem probe{ds.config};  // surface config errors at load time
    (void)probe;
    sc.distmem = std::move(ds);
}

void parse_topology(const njson& root, Scenario& sc) {
    const auto* servers = find(root, "servers");
    const auto* num_blocks = find(root, "num_blocks");
    if (!servers && !num_blocks) return;
    if (!servers) fail("servers", "required when num_blocks is present");
    if (!num_blocks) fail("num_blocks", "required when servers is present");
    SwarmTopology topo;
    topo.num_blocks = as_int(*num_blocks, "num_blocks");
    if (!servers->is_array()) fail("servers", "must be an array");
    int idx = 0;
    for (const auto& sj : *servers) {
        const std::string sp = "servers[" + std::to_string(idx) + "]";
        check_keys(sj, sp, {"id", "rtt_ms", "per_block_ms", "blocks"});
        ServerSpec s;
        s.id = req_int(sj, sp, "id");
        s.rtt_ms = req_double(sj, sp, "rtt_ms");
        s.per_block_ms = req_double(sj, sp, "per_block_ms");
        const auto* blocks = find(sj, "blocks");
        if (!blocks) fail(sp + ".blocks", "missing required field");
        if (!blocks->is_array() || blocks->size() != 2) {
            fail(sp + ".blocks", "must be a [start, end] pair");
        }
        s.block_start = as_int((*blocks)[0], sp + ".blocks[0]");
        s.block_end = as_int((*blocks)[1], sp + ".blocks[1]");
        topo.servers.push_back(s);
        ++idx;
    }
    validate_topology(topo);
    sc.topology = std::move(topo);
}

std::uint64_t parse_seed(const njson& v) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer()) {
        const auto s = v.get<long long>();
        if (s < 0) fail("seed", "must be >= 0");
        return static_cast<std::uint64_t>(s);
    }
    fail("seed", "must be an integer");
}

}  // namespace

Scenario parse_scenario_json(const std::string& text, const std::string& name) {
    njson j;
    try {
        j = njson::parse(text);
    } catch (const njson::parse_error& e) {
        throw ConfigError(name + ": invalid JSON: " + std::string(e.what()));
    }
    if (!j.is_object()) fail(name, "scenario root must be an object");
    check_keys(j, "scenario",
               {"num_blocks", "servers", "workload", "kv", "scheduler", "distmem", "cost", "seed"});
    Scenario sc;
    sc.name = name;
    if (const auto* s = find(j, "seed")) sc.seed = parse_seed(*s);
    if (const auto* k = find(j, "kv")) parse_kv(*k, sc);
    if (const auto* s = find(j, "scheduler")) parse_scheduler(*s, sc);
    if (const auto* c = find(j, "cost")) parse_cost(*c, sc);
    if (const auto* w = find(j, "workload")) parse_workload(*w, sc);
    if (const auto* d = find(j, "distmem")) parse_distmem(*d, sc);
    parse_topology(j, sc);
    return sc;
}

Scenario load_scenario_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("scenario: cannot open \"" + path + "\"");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_scenario_json(buf.str(), std::filesystem::path(path).stem().string());
}

std::vector<Request> materialize_workload(const Scenario& sc) {
    if (!sc.has_workload) throw ConfigError("workload: required to materialize requests");
    std::vector<Request> reqs;
    if (sc.workload_spec) {
        Rng rng(sc.seed);
        reqs = generate_workload(*sc.workload_spec, rng);
    } else {
        reqs = sc.explicit_requests;
    }
    std::stable_sort(reqs.begin(), reqs.end(), [](const Request& a, const Request& b) {
        return std::tie(a.arrival_ms, a.id) < std::tie(b.arrival_ms, b.id);
    });
    return reqs;
}

Scenario apply_mode(Scenario sc, const std::string& mode) {
    std::string_view rest = mode;
    while (!rest.empty()) {
        const auto plus = rest.find('+');
        const std::string_view tok = rest.substr(0, plus);
        rest = plus == std::string_view::npos ? std::string_view{} : rest.substr(plus + 1);
        if (tok == "iteration") {
            sc.scheduler.mode = sched::Mode::IterationLevel;
        } else if (tok == "batch") {
            sc.scheduler.mode = sched::Mode::BatchLevel;
        } else if (tok == "paged") {
            sc.kv.policy = kv::Policy::Paged;
        } else if (tok == "contiguous") {
            sc.kv.policy = kv::Policy::Contiguous;
        } else if (tok == "distmem") {
            if (!sc.distmem) {
                throw ConfigError("mode: \"distmem\" needs a distmem section in the scenario");
            }
            sc.distmem->enabled = true;
        } else if (tok == "local") {
            if (sc.distmem) sc.distmem->enabled = false;
        } else {
            throw ConfigError("mode: unknown token \"" + std::string(tok) +
                              "\" (expected iteration|batch|paged|contiguous|distmem|local)");
        }
    }
    return sc;
}

std::string mode_label(const Scenario& sc) {
    std::string label =
        sc.scheduler.mode == sched::Mode::IterationLevel ? "iteration" : "batch";
    label += sc.kv.policy == kv::Policy::Paged ? "+paged" : "+contiguous";
    if (sc.distmem) label += sc.distmem->enabled ? "+distmem" : "+local";
    return label;
}

namespace {

struct RemoteReqState {
    int fill = 0;  // tokens already placed remotely
    std::vector<std::pair<int, int>> blocks;  // (creditor dist id, lent kv block id)
    std::set<int> creditors;
};

struct Inst {
    int dist_id = 0;
    std::unique_ptr<kv::KvCacheManager> kv;
    std::unique_ptr<sched::InstanceScheduler> sch;
    double busy_until = 0.0;
    bool idle = true;
    int mirrored_used = 0;
    std::map<int, RemoteReqState> remote;  // request id -> remote footprint
};

double percentile(const std::vector<double>& sorted_vals, double q) {
    if (sorted_vals.empty()) return 0.0;
    auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted_vals.size())));
    if (rank == 0) rank = 1;
    if (rank > sorted_vals.size()) rank = sorted_vals.size();
    return sorted_vals[rank - 1];
}

}  // namespace

RunOutput run_scenario(const Scenario& sc) {
    if (!sc.has_workload) throw ConfigError("workload: required to run a scenario");
    if (sc.scheduler.max_batch < 1) throw ConfigError("scheduler.max_batch: must be >= 1");
    const bool multi = sc.distmem.has_value();
    const bool borrowing = multi && sc.distmem->enabled;
    if (multi && sc.kv.policy != kv::Policy::Paged) {
        throw ConfigError("distmem: requires kv.policy \"paged\"");
    }
    if (borrowing && sc.distmem->config.rblock_tokens != sc.kv.block_size) {
        throw ConfigError("distmem.rblock_tokens: must equal kv.block_size");
    }

    std::vector<Request> reqs = materialize_workload(sc);

    std::optional<dist::DistMem> dm;
    std::vector<int> dist_ids;
    if (multi) {
        dm.emplace(sc.distmem->config);
        dist_ids = dm->instance_ids();
        if (!borrowing) dm.reset();
    } else {
        dist_ids = {0};
    }
    const int K = static_cast<int>(dist_ids.size());

    std::map<int, int> capacity_of;
    if (multi) {
        for (const auto& spec : sc.distmem->config.instances) {
            capacity_of[spec.id] = spec.capacity_rblocks;
        }
    }
    std::vector<Inst> insts(static_cast<std::size_t>(K));
    std::map<int, int> index_of;
    for (int i = 0; i < K; ++i) {
        insts[i].dist_id = dist_ids[i];
        kv::KvConfig cfg = sc.kv;
        if (multi) cfg.capacity_blocks = capacity_of.at(dist_ids[i]);
        insts[i].kv = std::make_unique<kv::KvCacheManager>(cfg);
        index_of[dist_ids[i]] = i;
    }

    // Mirrors each instance's pool into the ledger and refreshes heartbeats,
    // so lending decisions made during the next step see current truth.
    const auto sync_and_beat = [&](double now) {
        dm->set_now(now);
        for (auto& in : insts) {
            const int used = in.kv->allocated_blocks();
            if (used > in.mirrored_used) {
                if (!dm->alloc_local(in.dist_id, used - in.mirrored_used)) {
                    throw ContractError("engine: ledger free disagrees with kv pool");
                }
            } else if (used < in.mirrored_used) {
                dm->free_local(in.dist_id, in.mirrored_used - used);
            }
            in.mirrored_used = used;
            dm->heartbeat(in.dist_id, dm->free_rblocks(in.dist_id), now);
        }
    };

    for (int i = 0; i < K; ++i) {
        sched::RemoteHooks hooks;
        if (borrowing) {
            const int di = insts[i].dist_id;
            const int rbt = sc.distmem->config.rblock_tokens;
            hooks.place_remote = [&insts, &dm, &index_of, i, di,
                                  rbt](int rid) -> std::optional<sched::RemotePlacement> {
                auto& remote = insts[i].remote;
                const auto it = remote.find(rid);
                if (it != remote.end() && it->second.fill % rbt != 0) {
                    ++it->second.fill;
                    return sched::RemotePlacement{0.0, false};
                }
                const auto grants = dm->borrow(di, 1);
                if (grants.empty()) return std::nullopt;  // nothing mutated for this request
                const int creditor = grants.front().creditor;
                const auto lent = insts[index_of.at(creditor)].kv->lend_blocks(1);
                if (!lent) throw ContractError("engine: ledger free disagrees with kv pool");
                auto& st = remote[rid];
                st.blocks.emplace_back(creditor, lent->front());
                st.creditors.insert(creditor);
                ++st.fill;
                return sched::RemotePlacement{dm->comm_ms(di, creditor), true};
            };
            hooks.access_ms = [&insts, &dm, i, di](int rid) {
                const auto it = insts[i].remote.find(rid);
                if (it == insts[i].remote.end()) return 0.0;
                double total = 0.0;
                for (const int c : it->second.creditors) total += dm->comm_ms(di, c);
                return total;
            };
            hooks.on_free = [&insts, &dm, &index_of, i, di](int rid) {
                const auto it = insts[i].remote.find(rid);
                if (it == insts[i].remote.end()) return;
                std::map<int, std::vector<int>> by_creditor;
                for (const auto& [creditor, block] : it->second.blocks) {
                    by_creditor[creditor].push_back(block);
                }
                for (const auto& [creditor, blocks] : by_creditor) {
                    dm->reclaim(di, creditor, static_cast<int>(blocks.size()));
                    insts[index_of.at(creditor)].kv->return_blocks(blocks);
                }
                insts[i].remote.erase(it);
            };
        }
        insts[i].sch = std::make_unique<sched::InstanceScheduler>(
            sc.scheduler.mode, sc.scheduler.max_batch, sc.cost, *insts[i].kv, std::move(hooks));
    }

    // Single global event queue; (time, seq) keeps ties deterministic.
    struct Ev {
        double t = 0.0;
        long long seq = 0;
        int kind = 0;  // 0 arrival, 1 instance ready
        int inst = 0;
        int ridx = -1;
    };
    const auto later = [](const Ev& a, const Ev& b) {
        return std::tie(a.t, a.seq) > std::tie(b.t, b.seq);
    };
    std::priority_queue<Ev, std::vector<Ev>, decltype(later)> events(later);
    long long seq = 0;
    for (std::size_t idx = 0; idx < reqs.size(); ++idx) {
        events.push({reqs[idx].arrival_ms, seq++, 0, static_cast<int>(idx) % K,
                     static_cast<int>(idx)});
    }

    std::vector<InstanceTrace> traces(static_cast<std::size_t>(K));
    for (int i = 0; i < K; ++i) traces[i].instance = dist_ids[i];
    double makespan = 0.0;

    while (!events.empty()) {
        const Ev ev = events.top();
        events.pop();
        Inst& in = insts[ev.inst];
        if (ev.kind == 0) {
            in.sch->submit(reqs[static_cast<std::size_t>(ev.ridx)]);
            if (in.idle) events.push({ev.t, seq++, 1, ev.inst, -1});
            continue;
        }
        if (in.busy_until > ev.t) continue;  // superseded by a later ready event
        if (!in.sch->has_work()) {
            in.idle = true;
            continue;
        }
        if (dm) sync_and_beat(ev.t);
        auto rec = in.sch->step(ev.t);
        if (!rec) {
            in.idle = true;
            continue;
        }
        in.idle = false;
        const double end = rec->start_ms + rec->cost_ms;
        in.busy_until = end;
        makespan = std::max(makespan, end);
        traces[ev.inst].iterations.push_back(std::move(*rec));
        events.push({end, seq++, 1, ev.inst, -1});
        // Completions may have freed or reclaimed space another queue waits on.
        for (int j = 0; j < K; ++j) {
            if (j != ev.inst && insts[j].idle && insts[j].sch->has_work()) {
                events.push({end, seq++, 1, j, -1});
            }
        }
    }

    for (const auto& in : insts) {
        if (in.sch->has_work()) {
            throw ContractError("engine: simulation stalled with queued work");
        }
    }
    if (dm) sync_and_beat(makespan);  // fold the final frees into the ledger

    RunOutput out;
    out.traces = std::move(traces);
    double busy = 0.0;
    double util_weighted = 0.0;
    MetricsReport rep;
    rep.scenario = sc.name;
    rep.seed = sc.seed;
    rep.mode = mode_label(sc);
    rep.num_requests = static_cast<long long>(reqs.size());
    for (const auto& in : insts) {
        out.completed.insert(out.completed.end(), in.sch->completed().begin(),
                             in.sch->completed().end());
        out.rejected.insert(out.rejected.end(), in.sch->rejected().begin(),
                            in.sch->rejected().end());
        rep.queued_admissions += in.sch->queued_admissions();
        rep.generated_tokens += in.sch->generated_tokens();
        rep.borrow_events += in.sch->borrow_events();
        rep.remote_ms += in.sch->remote_ms();
        busy += in.sch->busy_ms();
        util_weighted += in.sch->util_weighted();
    }
    const auto by_id = [](const Request& a, const Request& b) { return a.id < b.id; };
    std::sort(out.completed.begin(), out.completed.end(), by_id);
    std::sort(out.rejected.begin(), out.rejected.end(), by_id);
    rep.completed = static_cast<long long>(out.completed.size());
    rep.rejected = static_cast<long long>(out.rejected.size());
    rep.makespan_ms = makespan;
    rep.kv_utilization_pct = busy == 0.0 ? 100.0 : util_weighted / busy;
    if (!out.completed.empty()) {
        rep.mean_norm_latency_ms_per_tok = sched::normalized_latency(out.completed);
        std::vector<double> norms;
        norms.reserve(out.completed.size());
        for (const auto& r : out.completed) {
            norms.push_back((*r.completion_ms - r.arrival_ms) / r.output_len);
        }
        std::sort(norms.begin(), norms.end());
        rep.p50_norm_latency_ms_per_tok = percentile(norms, 0.50);
        rep.p99_norm_latency_ms_per_tok = percentile(norms, 0.99);
    }
    if (makespan > 0.0) {
        rep.throughput_tok_s =
            static_cast<double>(rep.generated_tokens) / (makespan / 1000.0);
    }
    out.report = std::move(rep);
    if (dm) out.ledger_csv = dm->ledger_csv();
    return out;
}

double metric_ratio(double a, double base) {
    if (a == base) return 1.0;
    return a / base;
}

Comparison compare_modes(const Scenario& sc, const std::vector<std::string>& modes) {
    if (modes.size() < 2) throw ConfigError("compare: needs at least 2 modes");
    Comparison cmp;
    cmp.modes = modes;
    for (const auto& mode : modes) {
        RunOutput out = run_scenario(apply_mode(sc, mode));
        out.report.mode = mode;
        cmp.reports.push_back(std::move(out.report));
    }
    cmp.metric_names = {"mean_norm_latency_ms_per_tok",
                        "p50_norm_latency_ms_per_tok",
                        "p99_norm_latency_ms_per_tok",
                        "throughput_tok_s",
                        "kv_utilization_pct",
                        "completed",
                        "rejected",
                        "queued_admissions",
                        "generated_tokens",
                        "borrow_events",
                        "remote_ms",
                        "makespan_ms"};
    const auto value_of = [](const MetricsReport& r, const std::string& name) -> double {
        if (name == "mean_norm_latency_ms_per_tok") return r.mean_norm_latency_ms_per_tok;
        if (name == "p50_norm_latency_ms_per_tok") return r.p50_norm_latency_ms_per_tok;
        if (name == "p99_norm_latency_ms_per_tok") return r.p99_norm_latency_ms_per_tok;
        if (name == "throughput_tok_s") return r.throughput_tok_s;
        if (name == "kv_utilization_pct") return r.kv_utilization_pct;
        if (name == "completed") return static_cast<double>(r.completed);
        if (name == "rejected") return static_cast<double>(r.rejected);
        if (name == "queued_admissions") return static_cast<double>(r.queued_admissions);
        if (name == "generated_tokens") return static_cast<double>(r.generated_tokens);
        if (name == "borrow_events") return static_cast<double>(r.borrow_events);
        if (name == "remote_ms") return r.remote_ms;
        return r.makespan_ms;
    };
    for (const auto& name : cmp.metric_names) {
        std::vector<double> vals;
        std::vector<double> rats;
        for (const auto& rep : cmp.reports) vals.push_back(value_of(rep, name));
        for (const double v : vals) rats.push_back(metric_ratio(v, vals.front()));
        cmp.values.push_back(std::move(vals));
        cmp.ratios.push_back(std::move(rats));
    }
    return cmp;
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string report_csv_header() {
    return "scenario,seed,mode,mean_norm_latency_ms_per_tok,p50,p99,throughput_tok_s,"
           "kv_utilization_pct,rejected,borrow_events,remote_ms";
}

std::string report_csv_row(const MetricsReport& r) {
    std::string row;
    row += r.scenario;
    row += ',';
    row += std::to_string(r.seed);
    row += ',';
    row += r.mode;
    row += ',';
    row += format_double(r.mean_norm_latency_ms_per_tok);
    row += ',';
    row += format_double(r.p50_norm_latency_ms_per_tok);
    row += ',';
    row += format_double(r.p99_norm_latency_ms_per_tok);
    row += ',';
    row += format_double(r.throughput_tok_s);
    row += ',';
    row += format_double(r.kv_utilization_pct);
    row += ',';
    row += std::to_string(r.rejected);
    row += ',';
    row += std::to_string(r.borrow_events);
    row += ',';
    row += format_double(r.remote_ms);
    return row;
}

std::string reports_csv(std::span<const MetricsReport> rs) {
    std::string csv = report_csv_header();
    csv += '\n';
    for (const auto& r : rs) {
        csv += report_csv_row(r);
        csv += '\n';
    }
    return csv;
}

std::string report_json(const MetricsReport& r) {
    nlohmann::ordered_json j;
    j["scenario"] = r.scenario;
    j["seed"] = r.seed;
    j["mode"] = r.mode;
    j["num_requests"] = r.num_requests;
    j["completed"] = r.completed;
    j["rejected"] = r.rejected;
    j["queued_admissions"] = r.queued_admissions;
    j["mean_norm_latency_ms_per_tok"] = r.mean_norm_latency_ms_per_tok;
    j["p50_norm_latency_ms_per_tok"] = r.p50_norm_latency_ms_per_tok;
    j["p99_norm_latency_ms_per_tok"] = r.p99_norm_latency_ms_per_tok;
    j["throughput_tok_s"] = r.throughput_tok_s;
    j["kv_utilization_pct"] = r.kv_utilization_pct;
    j["generated_tokens"] = r.generated_tokens;
    j["makespan_ms"] = r.makespan_ms;
    j["borrow_events"] = r.borrow_events;
    j["remote_ms"] = r.remote_ms;
    return j.dump(2) + "\n";
}

std::string comparison_csv(const Comparison& c) {
    std::string csv = "metric";
    for (const auto& m : c.modes) csv += "," + m;
    for (const auto& m : c.modes) csv += ",ratio_" + m;
    csv += '\n';
    for (std::size_t row = 0; row < c.metric_names.size(); ++row) {
        csv += c.metric_names[row];
        for (const double v : c.values[row]) csv += "," + format_double(v);
        for (const double v : c.ratios[row]) csv += "," + format_double(v);
        csv += '\n';
    }
    return csv;
}

std::string trace_csv(const RunOutput& out) {
    std::string csv = "iter_index,start_ms,cost_ms,batch,instance\n";
    for (const auto& tr : out.traces) {
        for (const auto& rec : tr.iterations) {
            csv += std::to_string(rec.iter_index);
            csv += ',';
            csv += format_double(rec.start_ms);
            csv += ',';
            csv += format_double(rec.cost_ms);
            csv += ',';
            bool first = true;
            for (const auto& e : rec.entries) {
                if (!first) csv += ';';
                first = false;
                csv += std::to_string(e.request_id);
                csv += e.phase == sched::Phase::Initiation ? ":init:" : ":inc:";
                csv += std::to_string(e.tokens);
                csv += ':';
                csv += std::to_string(e.context_len);
            }
            csv += ',';
            csv += std::to_string(tr.instance);
            csv += '\n';
        }
    }
    return csv;
}

namespace {

Scenario preset_empty() {
    Scenario sc;
    sc.name = "empty";
    sc.has_workload = true;
    sc.kv = {kv::Policy::Paged, 64, 16, 2048};
    return sc;
}

Scenario preset_r1r2() {
    Scenario sc;
    sc.name = "r1r2";
    sc.has_workload = true;
    sc.explicit_requests = {
        {.id = 1, .arrival_ms = 0.0, .prompt_len = 1, .output_len = 2},
        {.id = 2, .arrival_ms = 0.0, .prompt_len = 1, .output_len = 6},
    };
    sc.kv = {kv::Policy::Paged, 64, 16, 2048};
    sc.scheduler.max_batch = 8;
    return sc;
}

Scenario preset_heavy_tail() {
    Scenario sc;
    sc.name = "heavy_tail";
    sc.has_workload = true;
    for (int i = 1; i <= 12; ++i) {
        sc.explicit_requests.push_back(
            {.id = i, .arrival_ms = 0.0, .prompt_len = 4, .output_len = i <= 10 ? 2 : 64});
    }
    sc.kv = {kv::Policy::Paged, 64, 16, 2048};
    sc.scheduler.max_batch = 16;
    return sc;
}

Scenario preset_frag() {
    Scenario sc;
    sc.name = "frag";
    sc.has_workload = true;
    WorkloadSpec spec;
    spec.num_requests = 64;
    spec.arrivals = {ArrivalProcess::Kind::Fixed, 1.0, 1.0};
    spec.prompt = {LengthDist::Kind::Lognormal, 1, 1, std::log(200.0), 0.5, 2048};
    spec.output = {LengthDist::Kind::Uniform, 1, 8, 0.0, 1.0, 8};
    sc.workload_spec = spec;
    sc.kv = {kv::Policy::Paged, 2048, 16, 2048};
    sc.scheduler.max_batch = 16;
    sc.seed = 2024;
    return sc;
}

Scenario preset_borrow() {
    // Every request fits a single instance on its own (worst case 24 + 224 - 1
    // = 247 of 384 tokens), so disabling distmem changes no admission verdict;
    // the tail (a few percent of outputs reach 150+) only decides whether
    // concurrent growth stalls locally or spills to a neighbor.
    Scenario sc;
    sc.name = "borrow";
    sc.has_workload = true;
    WorkloadSpec spec;
    spec.num_requests = 240;
    spec.arrivals = {ArrivalProcess::Kind::Poisson, 0.0, 600.0};
    spec.prompt = {LengthDist::Kind::Uniform, 8, 24, 0.0, 1.0, 24};
    spec.output = {LengthDist::Kind::Lognormal, 1, 1, std::log(8.0), 1.6, 224};
    sc.workload_spec = spec;
    sc.kv = {kv::Policy::Paged, 24, 16, 2048};
    sc.scheduler.max_batch = 4;
    DistSection ds;
    ds.config.instances = {
        {.id = 0, .device = 0, .node = 0, .capacity_rblocks = 24, .extra_ms = 0.0},
        {.id = 1, .device = 1, .node = 0, .capacity_rblocks = 24, .extra_ms = 0.0},
        {.id = 2, .device = 2, .node = 0, .capacity_rblocks = 24, .extra_ms = 0.0},
        {.id = 3, .device = 3, .node = 0, .capacity_rblocks = 24, .extra_ms = 0.0},
    };
    ds.config.tier_ms = {0.05, 0.1, 1.0};
    ds.config.rblock_tokens = 16;
    sc.distmem = ds;
    sc.seed = 7;
    return sc;
}

}  // namespace

Scenario make_preset(const std::string& name) {
    if (name == "empty") return preset_empty();
    if (name == "r1r2") return preset_r1r2();
    if (name == "heavy_tail") return preset_heavy_tail();
    if (name == "frag") return preset_frag();
    if (name == "borrow") return preset_borrow();
    throw ConfigError("preset: unknown name \"" + name +
                      "\" (expected empty|r1r2|heavy_tail|frag|borrow)");
}

std::vector<std::string> preset_names() {
    return {"empty", "r1r2", "heavy_tail", "frag", "borrow"};
}

}  // namespace servesim::eng
