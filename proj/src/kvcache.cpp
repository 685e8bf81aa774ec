#include "servesim/kvcache.hpp"

#include <string>

#include "servesim/errors.hpp"

namespace servesim::kv {

KvCacheManager::KvCacheManager(const KvConfig& cfg) : cfg_(cfg) {
    if (cfg.capacity_blocks < 1) throw ConfigError("kv.capacity_blocks: must be >= 1");
    if (cfg.block_size < 1) throw ConfigError("kv.block_size: must be >= 1");
    if (cfg.max_len < 1) throw ConfigError("kv.max_len: must be >= 1");
    if (cfg.policy == Policy::Paged) {
        blocks_.resize(static_cast<size_t>(cfg.capacity_blocks));
        for (int i = 0; i < cfg.capacity_blocks; ++i) free_.insert(i);
    } else {
        contig_free_slots_ = capacity_tokens();
    }
}

int KvCacheManager::allocate_block() {
    if (free_.empty()) return -1;
    const int id = *free_.begin();
    free_.erase(free_.begin());
    Block& b = blocks_[static_cast<size_t>(id)];
    b.refcount = 1;
    b.fill = 0;
    b.tags.assign(static_cast<size_t>(cfg_.block_size), 0);
    return id;
}

void KvCacheManager::release_block(int id) {
    Block& b = blocks_[static_cast<size_t>(id)];
    if (--b.refcount == 0) {
        b.fill = 0;
        b.tags.clear();
        free_.insert(id);
    }
}

int KvCacheManager::blocks_needed(int token_count) const {
    return (token_count + cfg_.block_size - 1) / cfg_.block_size;
}

std::optional<SeqId> KvCacheManager::admit_sequence(int prompt_len) {
    if (prompt_len < 1) throw ContractError("admit_sequence: prompt_len must be >= 1");
    if (cfg_.policy == Policy::Contiguous) {
        if (prompt_len > cfg_.max_len) {
            throw ContractError("admit_sequence: prompt exceeds the max_len reservation");
        }
        if (contig_free_slots_ < cfg_.max_len) return std::nullopt;
        contig_free_slots_ -= cfg_.max_len;
        const SeqId id = next_seq_++;
        ContigSeq& seq = contig_[id];
        seq.tags.reserve(static_cast<size_t>(prompt_len));
        for (int pos = 0; pos < prompt_len; ++pos) seq.tags.push_back(make_tag(id, pos));
        return id;
    }

    const int need = blocks_needed(prompt_len);
    if (static_cast<int>(free_.size()) < need) return std::nullopt;
    const SeqId id = next_seq_++;
    PagedSeq& seq = paged_[id];
    for (int i = 0; i < need; ++i) seq.blocks.push_back(allocate_block());
    for (int pos = 0; pos < prompt_len; ++pos) {
        Block& b = blocks_[static_cast<size_t>(seq.blocks[static_cast<size_t>(pos / cfg_.block_size)])];
        b.tags[static_cast<size_t>(pos % cfg_.block_size)] = make_tag(id, pos);
        ++b.fill;
    }
    seq.len = prompt_len;
    return id;
}

bool KvCacheManager::append_token(SeqId seq) {
    if (cfg_.policy == Policy::Contiguous) {
        auto it = contig_.find(seq);
        if (it == contig_.end()) throw ContractError("append_token: unknown sequence");
        ContigSeq& s = it->second;
        if (static_cast<int>(s.tags.size()) >= cfg_.max_len) {
            throw ContractError("append_token: past the max_len reservation");
        }
        s.tags.push_back(make_tag(seq, static_cast<int>(s.tags.size())));
        return true;
    }

    auto it = paged_.find(seq);
    if (it == paged_.end()) throw ContractError("append_token: unknown sequence");
    PagedSeq& s = it->second;
    const int offset = s.len % cfg_.block_size;
    if (offset == 0) {
        const int fresh = allocate_block();
        if (fresh < 0) return false;
        s.blocks.push_back(fresh);
    } else {
        const int last = s.blocks.back();
        Block& shared = blocks_[static_cast<size_t>(last)];
        if (shared.refcount > 1) {
            const int fresh = allocate_block();
            if (fresh < 0) return false;
            Block& copy = blocks_[static_cast<size_t>(fresh)];
            copy.fill = shared.fill;
            copy.tags = shared.tags;
            shared.refcount -= 1;
            s.blocks.back() = fresh;
        }
    }
    Block& tail = blocks_[static_cast<size_t>(s.blocks.back())];
    tail.tags[static_cast<size_t>(offset)] = make_tag(seq, s.len);
    ++tail.fill;
    ++s.len;
    return true;
}

SeqId KvCacheManager::fork_sequence(SeqId seq) {
    if (cfg_.policy == Policy::Contiguous) {
        throw ContractError("fork_sequence: contiguous reservations cannot share blocks");
    }
    auto it = paged_.find(seq);
    if (it == paged_.end()) throw ContractError("fork_sequence: unknown sequence");
    const SeqId child = next_seq_++;
    PagedSeq copy = it->second;
    for (int id : copy.blocks) ++blocks_[static_cast<size_t>(id)].refcount;
    paged_[child] = std::move(copy);
    return child;
}

void KvCacheManager::free_sequence(SeqId seq) {
    if (cfg_.policy == Policy::Contiguous) {
        auto it = contig_.find(seq);
        if (it == contig_.end()) throw ContractError("free_sequence: unknown or already freed");
        contig_free_slots_ += cfg_.max_len;
        contig_.erase(it);
        return;
    }
    auto it = paged_.find(seq);
    if (it == paged_.end()) throw ContractError("free_sequence: unknown or already freed");
    for (int id : it->second.blocks) release_block(id);
    paged_.erase(it);
}

bool KvCacheManager::is_live(SeqId seq) const {
    return paged_.count(seq) > 0 || contig_.count(seq) > 0;
}

int KvCacheManager::seq_len(SeqId seq) const {
    if (cfg_.policy == Policy::Contiguous) {
        auto it = contig_.find(seq);
        if (it == contig_.end()) throw ContractError("seq_len: unknown sequence");
        return static_cast<int>(it->second.tags.size());
    }
    auto it = paged_.find(seq);
    if (it == paged_.end()) throw ContractError("seq_len: unknown sequence");
    return it->second.len;
}

std::uint64_t KvCacheManager::read_tag(SeqId seq, int pos) const {
    if (cfg_.policy == Policy::Contiguous) {
        auto it = contig_.find(seq);
        if (it == contig_.end()) throw ContractError("read_tag: unknown sequence");
        if (pos < 0 || pos >= static_cast<int>(it->second.tags.size())) {
            throw ContractError("read_tag: position out of range");
        }
        return it->second.tags[static_cast<size_t>(pos)];
    }
    auto it = paged_.find(seq);
    if (it == paged_.end()) throw ContractError("read_tag: unknown sequence");
    if (pos < 0 || pos >= it->second.len) throw ContractError("read_tag: position out of range");
    const int block = it->second.blocks[static_cast<size_t>(pos / cfg_.block_size)];
    return blocks_[static_cast<size_t>(block)].tags[static_cast<size_t>(pos % cfg_.block_size)];
}

int KvCacheManager::allocated_blocks() const {
    if (cfg_.policy == Policy::Contiguous) {
        return static_cast<int>((capacity_tokens() - contig_free_slots_) / cfg_.block_size);
    }
    return cfg_.capacity_blocks - static_cast<int>(free_.size()) - static_cast<int>(lent_.size());
}

std::optional<std::vector<int>> KvCacheManager::lend_blocks(int n) {
    if (cfg_.policy == Policy::Contiguous) {
        throw ContractError("lend_blocks: contiguous pools cannot lend");
    }
    if (n < 0) throw ContractError("lend_blocks: negative count");
    if (static_cast<int>(free_.size()) < n) return std::nullopt;
    std::vector<int> ids;
    ids.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int id = *free_.begin();
        free_.erase(free_.begin());
        lent_.insert(id);
        ids.push_back(id);
    }
    return ids;
}

void KvCacheManager::return_blocks(const std::vector<int>& block_ids) {
    if (cfg_.policy == Policy::Contiguous) {
        throw ContractError("return_blocks: contiguous pools cannot lend");
    }
    for (const int id : block_ids) {
        const auto it = lent_.find(id);
        if (it == lent_.end()) {
            throw ContractError("return_blocks: block " + std::to_string(id) + " is not lent");
        }
        lent_.erase(it);
        free_.insert(id);
    }
}

int KvCacheManager::free_blocks() const {
    if (cfg_.policy == Policy::Contiguous) {
        return static_cast<int>(contig_free_slots_ / cfg_.block_size);
    }
    return static_cast<int>(free_.size());
}

double KvCacheManager::utilization_pct() const {
    const PoolSnapshot s = snapshot();
    return s.utilization_pct;
}

PoolSnapshot KvCacheManager::snapshot() const {
    PoolSnapshot s;
    s.policy = cfg_.policy;
    s.capacity_blocks = cfg_.capacity_blocks;
    s.block_size = cfg_.block_size;
    if (cfg_.policy == Policy::Contiguous) {
        s.live_sequences = static_cast<int>(contig_.size());
        s.held_tokens = capacity_tokens() - contig_free_slots_;
        for (const auto& [id, seq] : contig_) {
            s.stored_tokens += static_cast<long long>(seq.tags.size());
        }
        s.allocated_blocks = static_cast<int>(s.held_tokens / cfg_.block_size);
        s.free_blocks = static_cast<int>(contig_free_slots_ / cfg_.block_size);
    } else {
        s.live_sequences = static_cast<int>(paged_.size());
        s.allocated_blocks = allocated_blocks();
        s.free_blocks = static_cast<int>(free_.size());
        s.lent_blocks = static_cast<int>(lent_.size());
        s.held_tokens = static_cast<long long>(s.allocated_blocks) * cfg_.block_size;
        for (const auto& b : blocks_) {
            if (b.refcount > 0) s.stored_tokens += b.fill;
        }
    }
    s.internal_frag_tokens = s.held_tokens - s.stored_tokens;
    s.utilization_pct = s.held_tokens == 0
                            ? 100.0
                            : 100.0 * static_cast<double>(s.stored_tokens) /
                                  static_cast<double>(s.held_tokens);
    return s;
}

const std::vector<int>& KvCacheManager::block_table(SeqId seq) const {
    auto it = paged_.find(seq);
    if (it == paged_.end()) throw ContractError("block_table: unknown sequence");
    return it->second.blocks;
}

int KvCacheManager::block_refcount(int block_id) const {
    if (block_id < 0 || block_id >= static_cast<int>(blocks_.size())) {
        throw ContractError("block_refcount: bad block id " + std::to_string(block_id));
    }
    return blocks_[static_cast<size_t>(block_id)].refcount;
}

}  // namespace servesim::kv
