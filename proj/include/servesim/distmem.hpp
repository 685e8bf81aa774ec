#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace servesim::dist {

struct InstanceSpec {
    int id = 0;
    int device = 0;  // instances on one device share locality tier 0
    int node = 0;    // devices on one node share tier 1; otherwise tier 2
    int capacity_rblocks = 0;
    double extra_ms = 0.0;  // congestion toward this instance, added to link cost
};

struct DistConfig {
    std::vector<InstanceSpec> instances;
    std::array<double, 3> tier_ms = {0.05, 0.5, 5.0};  // ms per rBlock by tier
    double heartbeat_interval_ms = 10.0;
    int rblock_tokens = 16;  // fixed token capacity per rBlock, deployment-wide
};

struct RBlock {
    int rblock_id = 0;
    int instance_id = 0;  // debtor whose sequence the block belongs to
    int device_id = 0;
    int physical_id = 0;
};

struct Resolution {
    int device = 0;
    int physical_id = 0;
    bool remote = false;
    int host_instance = 0;
    double access_ms = 0.0;  // communication cost of touching the block
};

struct Grant {
    int creditor = 0;
    int count = 0;
};

struct LedgerRow {
    int instance_id = 0;
    int capacity = 0;
    int free = 0;          // authoritative: capacity - locally_used - lent
    int available = 0;     // as last reported by heartbeat (may be stale)
    int locally_used = 0;
    int lent_total = 0;
    int borrowed_total = 0;
    double last_heartbeat_ms = 0.0;
    std::map<int, int> lent_to;
    std::map<int, int> borrowed_from;
};

// Distributed KV memory authority: per-instance rManagers and the global
// debt ledger, serialized on the simulation clock. Availability used for
// creditor recommendation comes from heartbeats and can lag behind the
// authoritative per-instance counts; borrow() re-checks the truth and skips
// stale candidates. A failed or partial borrow never mutates skipped rows.
class DistMem {
public:
    explicit DistMem(const DistConfig& cfg);

    void set_now(double now_ms);  // clock only moves forward
    double now_ms() const { return now_; }

    void heartbeat(int instance, int free_rblocks, double now_ms);
    bool is_live(int instance) const;  // heard from within 3 intervals

    // Up to 3 live candidates with reported space, ordered by locality tier,
    // then link cost, then reported availability (descending), then id.
    std::vector<int> recommend_creditors(int debtor, int demand) const;

    // Walks the recommendations in order; each creditor grants
    // min(actual free, remaining demand). Partial fulfillment allowed;
    // empty result when nobody can help.
    std::vector<Grant> borrow(int debtor, int demand);

    // Returns count blocks from debtor to creditor: both ledger entries
    // decrement (erased at zero) and the debtor unmaps the blocks.
    void reclaim(int debtor, int creditor, int count);

    // Local pool traffic, mirrored here so lending decisions see the truth.
    std::optional<std::vector<int>> alloc_local(int instance, int count);
    void free_local(int instance, int count);  // unmaps the newest local blocks

    Resolution resolve_rblock(int instance, int rblock_id) const;

    int capacity(int instance) const;
    int free_rblocks(int instance) const;
    int locally_used(int instance) const;
    int lent_total(int instance) const;
    int borrowed_total(int instance) const;
    int locality_tier(int a, int b) const;
    double comm_ms(int debtor, int creditor) const;
    int rblock_tokens() const { return cfg_.rblock_tokens; }
    double heartbeat_interval_ms() const { return cfg_.heartbeat_interval_ms; }
    std::vector<int> instance_ids() const;

    // Debtor-side views for remote attention and engine bookkeeping.
    std::vector<RBlock> borrowed_blocks(int debtor) const;
    std::vector<int> creditors_of(int debtor) const;

    std::vector<LedgerRow> ledger_snapshot() const;
    std::string ledger_csv() const;

private:
    struct Mapped {
        RBlock block;
        int host_instance = 0;
    };
    struct Instance {
        InstanceSpec spec;
        int locally_used = 0;
        int lent_out = 0;
        int borrowed_in = 0;
        int next_physical = 0;
        int available = 0;  // heartbeat-reported
        double last_heartbeat_ms = 0.0;
        std::map<int, int> lent_to;
        std::map<int, int> borrowed_from;
        std::map<int, Mapped> mapping;  // this instance's logical rBlocks
        std::vector<int> local_order;   // local logical ids, oldest first
        std::vector<int> borrow_order;  // borrowed logical ids, oldest first
    };

    const Instance& inst(int id) const;
    Instance& inst(int id);
    int actual_free(const Instance& in) const {
        return in.spec.capacity_rblocks - in.locally_used - in.lent_out;
    }

    DistConfig cfg_;
    std::map<int, Instance> instances_;
    double now_ = 0.0;
    int next_rblock_ = 0;
};

}  // namespace servesim::dist
