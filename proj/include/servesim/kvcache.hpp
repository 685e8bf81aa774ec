#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <vector>

namespace servesim::kv {

enum class Policy { Paged, Contiguous };

struct KvConfig {
    Policy policy = Policy::Paged;
    int capacity_blocks = 64;  // pool size; contiguous gets the same token budget
    int block_size = 16;       // tokens per block
    int max_len = 2048;        // contiguous per-sequence reservation
};

struct PoolSnapshot {
    Policy policy = Policy::Paged;
    int capacity_blocks = 0;
    int block_size = 0;
    int allocated_blocks = 0;  // paged: refcount > 0; contiguous: reservations in blocks
    int free_blocks = 0;
    long long stored_tokens = 0;  // physical token states, shared blocks counted once
    long long held_tokens = 0;    // slots tied up: allocated * block_size, or reservations
    double utilization_pct = 100.0;
    long long internal_frag_tokens = 0;  // held - stored
    int live_sequences = 0;
    int lent_blocks = 0;  // paged blocks loaned to remote borrowers
};

using SeqId = int;

// Single-owner KV cache bookkeeping for one instance. Token contents are
// per-token tags, written once and expected to survive copy-on-write moves.
// Capacity misses come back as nullopt/false, never as exceptions; the
// caller decides whether to queue, stall, or reject.
class KvCacheManager {
public:
    explicit KvCacheManager(const KvConfig& cfg);

    // Allocates ceil(prompt_len / block_size) blocks (paged) or a max_len
    // reservation (contiguous) and writes the prompt token tags.
    std::optional<SeqId> admit_sequence(int prompt_len);

    // Appends one token. Copy-on-write when the tail block is shared.
    // Returns false when no block is free (paged only).
    bool append_token(SeqId seq);

    // Child shares every parent block (refcount + 1, zero allocation).
    // Contiguous reservations cannot share; that call is a contract error.
    SeqId fork_sequence(SeqId seq);

    void free_sequence(SeqId seq);

    bool is_live(SeqId seq) const;
    int seq_len(SeqId seq) const;
    std::uint64_t read_tag(SeqId seq, int pos) const;

    int capacity_blocks() const { return cfg_.capacity_blocks; }
    int block_size() const { return cfg_.block_size; }
    int max_len() const { return cfg_.max_len; }
    Policy policy() const { return cfg_.policy; }
    long long capacity_tokens() const {
        return static_cast<long long>(cfg_.capacity_blocks) * cfg_.block_size;
    }

    int allocated_blocks() const;
    int free_blocks() const;
    int blocks_needed(int token_count) const;  // ceil(token_count / block_size)

    double utilization_pct() const;
    PoolSnapshot snapshot() const;

    // Takes n free blocks out of local circulation for a remote borrower
    // (lowest ids first). nullopt when fewer than n are free. Paged only.
    std::optional<std::vector<int>> lend_blocks(int n);
    // Puts previously lent blocks back on the free list.
    void return_blocks(const std::vector<int>& block_ids);
    int lent_blocks() const { return static_cast<int>(lent_.size()); }

    // Paged introspection for tests and remote-extension bookkeeping.
    const std::vector<int>& block_table(SeqId seq) const;
    int block_refcount(int block_id) const;

private:
    struct Block {
        int refcount = 0;
        int fill = 0;
        std::vector<std::uint64_t> tags;
    };
    struct PagedSeq {
        std::vector<int> blocks;
        int len = 0;
    };
    struct ContigSeq {
        std::vector<std::uint64_t> tags;  // used slots; reserved = max_len
    };

    int allocate_block();  // -1 when the pool is exhausted
    void release_block(int id);
    static std::uint64_t make_tag(SeqId seq, int pos) {
        return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(seq)) << 32) |
               static_cast<std::uint32_t>(pos);
    }

    KvConfig cfg_;
    std::vector<Block> blocks_;
    std::set<int> free_;  // lowest id first
    std::set<int> lent_;
    std::map<SeqId, PagedSeq> paged_;
    std::map<SeqId, ContigSeq> contig_;
    long long contig_free_slots_ = 0;
    SeqId next_seq_ = 0;
};

}  // namespace servesim::kv
