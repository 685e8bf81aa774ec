#include "servesim/distmem.hpp"

#include <algorithm>
#include <tuple>

#include "servesim/errors.hpp"

namespace servesim::dist {

DistMem::DistMem(const DistConfig& cfg) : cfg_(cfg) {
    if (cfg.instances.empty()) throw ConfigError("distmem.instances: must not be empty");
    if (cfg.heartbeat_interval_ms <= 0.0)
        throw ConfigError("distmem.heartbeat_interval_ms: must be > 0");
    if (cfg.rblock_tokens < 1) throw ConfigError("distmem.rblock_tokens: must be >= 1");
    for (const double ms : cfg.tier_ms)
        if (ms < 0.0) throw ConfigError("distmem.tier_ms: must be >= 0");
    for (const InstanceSpec& spec : cfg.instances) {
        if (spec.capacity_rblocks < 0)
            throw ConfigError("distmem.instances: capacity_rblocks must be >= 0");
        if (spec.extra_ms < 0.0) throw ConfigError("distmem.instances: extra_ms must be >= 0");
        if (instances_.count(spec.id))
            throw ConfigError("distmem.instances: duplicate id " + std::to_string(spec.id));
        Instance in;
        in.spec = spec;
        in.available = spec.capacity_rblocks;
        instances_[spec.id] = std::move(in);
    }
    for (const auto& [ai, a] : instances_)
        for (const auto& [bi, b] : instances_)
            if (a.spec.device == b.spec.device && a.spec.node != b.spec.node)
                throw ConfigError("distmem.instances: one device cannot span two nodes");
}

const DistMem::Instance& DistMem::inst(int id) const {
    const auto it = instances_.find(id);
    if (it == instances_.end())
        throw ConfigError("distmem: unknown instance " + std::to_string(id));
    return it->second;
}

DistMem::Instance& DistMem::inst(int id) {
    const auto it = instances_.find(id);
    if (it == instances_.end())
        throw ConfigError("distmem: unknown instance " + std::to_string(id));
    return it->second;
}

void DistMem::set_now(double now_ms) { now_ = std::max(now_, now_ms); }

void DistMem::heartbeat(int instance, int free_rblocks, double now_ms) {
    if (free_rblocks < 0) throw ContractError("heartbeat: free_rblocks must be >= 0");
    Instance& in = inst(instance);
    set_now(now_ms);
    in.available = free_rblocks;
    in.last_heartbeat_ms = now_ms;
}

bool DistMem::is_live(int instance) const {
    const Instance& in = inst(instance);
    return now_ - in.last_heartbeat_ms <= 3.0 * cfg_.heartbeat_interval_ms;
}

int DistMem::locality_tier(int a, int b) const {
    const Instance& ia = inst(a);
    const Instance& ib = inst(b);
    if (ia.spec.device == ib.spec.device) return 0;
    if (ia.spec.node == ib.spec.node) return 1;
    return 2;
}

double DistMem::comm_ms(int debtor, int creditor) const {
    return cfg_.tier_ms[static_cast<size_t>(locality_tier(debtor, creditor))] +
           inst(creditor).spec.extra_ms;
}

std::vector<int> DistMem::recommend_creditors(int debtor, int demand) const {
    if (demand < 1) throw ContractError("recommend_creditors: demand must be >= 1");
    if (!is_live(debtor))
        throw ContractError("recommend_creditors: debtor " + std::to_string(debtor) +
                            " is stale");
    std::vector<int> candidates;
    for (const auto& [id, in] : instances_) {
        if (id == debtor || in.available <= 0 || !is_live(id)) continue;
        candidates.push_back(id);
    }
    std::sort(candidates.begin(), candidates.end(), [&](int a, int b) {
        return std::make_tuple(locality_tier(debtor, a), comm_ms(debtor, a),
                               -inst(a).available, a) <
               std::make_tuple(locality_tier(debtor, b), comm_ms(debtor, b),
                               -inst(b).available, b);
    });
    if (candidates.size() > 3) candidates.resize(3);
    return candidates;
}

std::vector<Grant> DistMem::borrow(int debtor, int demand) {
    if (demand < 1) throw ContractError("borrow: demand must be >= 1");
    Instance& d = inst(debtor);
    std::vector<Grant> grants;
    int remaining = demand;
    for (const int cid : recommend_creditors(debtor, demand)) {
        Instance& c = inst(cid);
        const int give = std::min(actual_free(c), remaining);
        if (give <= 0) continue;  // recommendation went stale, skip untouched
        c.lent_out += give;
        c.lent_to[debtor] += give;
        c.available = actual_free(c);
        d.borrowed_in += give;
        d.borrowed_from[cid] += give;
        for (int k = 0; k < give; ++k) {
            Mapped m;
            m.block.rblock_id = next_rblock_++;
            m.block.instance_id = debtor;
            m.block.device_id = c.spec.device;
            m.block.physical_id = c.next_physical++;
            m.host_instance = cid;
            d.borrow_order.push_back(m.block.rblock_id);
            d.mapping[m.block.rblock_id] = m;
        }
        grants.push_back({cid, give});
        remaining -= give;
        if (remaining == 0) break;
    }
    return grants;
}

void DistMem::reclaim(int debtor, int creditor, int count) {
    if (count < 0) throw ContractError("reclaim: negative count");
    if (count == 0) return;
    Instance& d = inst(debtor);
    Instance& c = inst(creditor);
    const auto lent = c.lent_to.find(debtor);
    if (lent == c.lent_to.end() || lent->second < count)
        throw ContractError("reclaim: instance " + std::to_string(creditor) +
                            " has not lent " + std::to_string(count) + " blocks to " +
                            std::to_string(debtor));
    lent->second -= count;
    if (lent->second == 0) c.lent_to.erase(lent);
    c.lent_out -= count;
    c.available = actual_free(c);
    const auto borrowed = d.borrowed_from.find(creditor);
    borrowed->second -= count;
    if (borrowed->second == 0) d.borrowed_from.erase(borrowed);
    d.borrowed_in -= count;
    int left = count;
    for (auto it = d.borrow_order.rbegin(); it != d.borrow_order.rend() && left > 0;) {
        const int id = *it;
        if (d.mapping.at(id).host_instance == creditor) {
            d.mapping.erase(id);
            it = std::make_reverse_iterator(
                d.borrow_order.erase(std::next(it).base()));
            --left;
        } else {
            ++it;
        }
    }
}

std::optional<std::vector<int>> DistMem::alloc_local(int instance, int count) {
    if (count < 0) throw ContractError("alloc_local: negative count");
    Instance& in = inst(instance);
    if (actual_free(in) < count) return std::nullopt;
    std::vector<int> ids;
    ids.reserve(static_cast<size_t>(count));
    for (int k = 0; k < count; ++k) {
        Mapped m;
        m.block.rblock_id = next_rblock_++;
        m.block.instance_id = instance;
        m.block.device_id = in.spec.device;
        m.block.physical_id = in.next_physical++;
        m.host_instance = instance;
        in.local_order.push_back(m.block.rblock_id);
        in.mapping[m.block.rblock_id] = m;
        ids.push_back(m.block.rblock_id);
    }
    in.locally_used += count;
    return ids;
}

void DistMem::free_local(int instance, int count) {
    if (count < 0) throw ContractError("free_local: negative count");
    Instance& in = inst(instance);
    if (count > in.locally_used)
        throw ContractError("free_local: freeing more than locally used");
    for (int k = 0; k < count; ++k) {
        in.mapping.erase(in.local_order.back());
        in.local_order.pop_back();
    }
    in.locally_used -= count;
}

Resolution DistMem::resolve_rblock(int instance, int rblock_id) const {
    const Instance& in = inst(instance);
    const auto it = in.mapping.find(rblock_id);
    if (it == in.mapping.end())
        throw ContractError("resolve_rblock: rblock " + std::to_string(rblock_id) +
                            " is not mapped on instance " + std::to_string(instance));
    const Mapped& m = it->second;
    Resolution r;
    r.device = m.block.device_id;
    r.physical_id = m.block.physical_id;
    r.host_instance = m.host_instance;
    r.remote = m.host_instance != instance;
    r.access_ms = r.remote ? comm_ms(instance, m.host_instance) : 0.0;
    return r;
}

int DistMem::capacity(int instance) const { return inst(instance).spec.capacity_rblocks; }
int DistMem::free_rblocks(int instance) const { return actual_free(inst(instance)); }
int DistMem::locally_used(int instance) const { return inst(instance).locally_used; }
int DistMem::lent_total(int instance) const { return inst(instance).lent_out; }
int DistMem::borrowed_total(int instance) const { return inst(instance).borrowed_in; }

std::vector<int> DistMem::instance_ids() const {
    std::vector<int> ids;
    ids.reserve(instances_.size());
    for (const auto& [id, in] : instances_) ids.push_back(id);
    return ids;
}

std::vector<RBlock> DistMem::borrowed_blocks(int debtor) const {
    const Instance& d = inst(debtor);
    std::vector<RBlock> blocks;
    blocks.reserve(d.borrow_order.size());
    for (const int id : d.borrow_order) blocks.push_back(d.mapping.at(id).block);
    return blocks;
}

std::vector<int> DistMem::creditors_of(int debtor) const {
    const Instance& d = inst(debtor);
    std::vector<int> out;
    out.reserve(d.borrowed_from.size());
    for (const auto& [id, cnt] : d.borrowed_from) out.push_back(id);
    return out;
}

std::vector<LedgerRow> DistMem::ledger_snapshot() const {
    std::vector<LedgerRow> rows;
    rows.reserve(instances_.size());
    for (const auto& [id, in] : instances_) {
        LedgerRow row;
        row.instance_id = id;
        row.capacity = in.spec.capacity_rblocks;
        row.free = actual_free(in);
        row.available = in.available;
        row.locally_used = in.locally_used;
        row.lent_total = in.lent_out;
        row.borrowed_total = in.borrowed_in;
        row.last_heartbeat_ms = in.last_heartbeat_ms;
        row.lent_to = in.lent_to;
        row.borrowed_from = in.borrowed_from;
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string DistMem::ledger_csv() const {
    std::string out = "instance_id,capacity,free,locally_used,lent_total,borrowed_total\n";
    for (const auto& [id, in] : instances_) {
        out += std::to_string(id) + ',' + std::to_string(in.spec.capacity_rblocks) + ',' +
               std::to_string(actual_free(in)) + ',' + std::to_string(in.locally_used) + ',' +
               std::to_string(in.lent_out) + ',' + std::to_string(in.borrowed_in) + '\n';
    }
    out += "creditor,debtor,count\n";
    for (const auto& [id, in] : instances_)
        for (const auto& [debtor, cnt] : in.lent_to)
            out += std::to_string(id) + ',' + std::to_string(debtor) + ',' +
                   std::to_string(cnt) + '\n';
    return out;
}

}  // namespace servesim::dist
