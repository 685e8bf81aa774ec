#include <map>
#include <vector>

#include "doctest.h"
#include "servesim/errors.hpp"
#include "servesim/kvcache.hpp"
#include "servesim/rng.hpp"

using namespace servesim;
using namespace servesim::kv;

namespace {

KvConfig paged_cfg(int capacity_blocks, int block_size) {
    KvConfig cfg;
    cfg.policy = Policy::Paged;
    cfg.capacity_blocks = capacity_blocks;
    cfg.block_size = block_size;
    return cfg;
}

KvConfig contig_cfg(int capacity_blocks, int block_size, int max_len) {
    KvConfig cfg;
    cfg.policy = Policy::Contiguous;
    cfg.capacity_blocks = capacity_blocks;
    cfg.block_size = block_size;
    cfg.max_len = max_len;
    return cfg;
}

std::uint64_t tag(SeqId seq, int pos) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(seq)) << 32) |
           static_cast<std::uint32_t>(pos);
}

}  // namespace

TEST_CASE("paged admission uses ceiling arithmetic") {
    KvCacheManager kv(paged_cfg(8, 4));
    auto seq = kv.admit_sequence(5);
    REQUIRE(seq.has_value());
    CHECK(kv.block_table(*seq).size() == 2);
    CHECK(kv.allocated_blocks() == 2);
    CHECK(kv.free_blocks() == 6);
    CHECK(kv.seq_len(*seq) == 5);
    auto snap = kv.snapshot();
    CHECK(snap.stored_tokens == 5);
    CHECK(snap.held_tokens == 8);
}

TEST_CASE("contiguous admission reserves max_len slots") {
    KvCacheManager kv(contig_cfg(128, 16, 2048));
    auto seq = kv.admit_sequence(5);
    REQUIRE(seq.has_value());
    auto snap = kv.snapshot();
    CHECK(snap.held_tokens == 2048);
    CHECK(snap.stored_tokens == 5);
    CHECK(kv.seq_len(*seq) == 5);
}

TEST_CASE("admission fails cleanly when the pool is too small") {
    KvCacheManager kv(paged_cfg(1, 4));
    CHECK_FALSE(kv.admit_sequence(5).has_value());
    CHECK(kv.allocated_blocks() == 0);

    KvCacheManager contig(contig_cfg(64, 16, 2048));  // 1024 slots < one reservation
    CHECK_FALSE(contig.admit_sequence(5).has_value());
}

TEST_CASE("append allocates only on block boundaries") {
    KvCacheManager kv(paged_cfg(8, 4));
    SeqId a = *kv.admit_sequence(4);
    CHECK(kv.allocated_blocks() == 1);
    CHECK(kv.append_token(a));  // len 4 -> 5 crosses the boundary
    CHECK(kv.allocated_blocks() == 2);

    SeqId b = *kv.admit_sequence(3);
    const int before = kv.allocated_blocks();
    CHECK(kv.append_token(b));  // fills to 4, no allocation
    CHECK(kv.allocated_blocks() == before);
    CHECK(kv.seq_len(b) == 4);
}

TEST_CASE("append reports exhaustion without mutating") {
    KvCacheManager kv(paged_cfg(1, 2));
    SeqId a = *kv.admit_sequence(2);
    CHECK_FALSE(kv.append_token(a));
    CHECK(kv.seq_len(a) == 2);
    CHECK(kv.allocated_blocks() == 1);
}

TEST_CASE("fork shares blocks and CoW splits them on write") {
    KvCacheManager kv(paged_cfg(8, 4));
    SeqId parent = *kv.admit_sequence(5);  // blocks [x, y], y holds 1 token
    SeqId child = kv.fork_sequence(parent);
    CHECK(kv.allocated_blocks() == 2);
    CHECK(kv.block_refcount(kv.block_table(parent)[0]) == 2);
    CHECK(kv.block_refcount(kv.block_table(parent)[1]) == 2);
    CHECK(kv.block_table(child) == kv.block_table(parent));

    const auto child_table = kv.block_table(child);
    REQUIRE(kv.append_token(parent));  // copy-on-write of the shared tail
    CHECK(kv.allocated_blocks() == 3);
    CHECK(kv.block_table(child) == child_table);
    CHECK(kv.block_table(parent)[1] != child_table[1]);
    CHECK(kv.block_refcount(child_table[1]) == 1);

    REQUIRE(kv.append_token(child));  // tail no longer shared: no further copy
    CHECK(kv.allocated_blocks() == 3);

    // Divergent tails, shared prefix intact.
    CHECK(kv.read_tag(parent, 5) == tag(parent, 5));
    CHECK(kv.read_tag(child, 5) == tag(child, 5));
    for (int pos = 0; pos < 5; ++pos) {
        CHECK(kv.read_tag(parent, pos) == tag(parent, pos));
        CHECK(kv.read_tag(child, pos) == tag(parent, pos));
    }
}

TEST_CASE("fork then free child restores the pre-fork pool") {
    KvCacheManager kv(paged_cfg(8, 4));
    SeqId parent = *kv.admit_sequence(6);
    const auto before = kv.snapshot();
    SeqId child = kv.fork_sequence(parent);
    CHECK(kv.allocated_blocks() == before.allocated_blocks);
    kv.free_sequence(child);
    const auto after = kv.snapshot();
    CHECK(after.allocated_blocks == before.allocated_blocks);
    CHECK(after.stored_tokens == before.stored_tokens);
    CHECK(kv.block_refcount(kv.block_table(parent)[0]) == 1);
}

TEST_CASE("k-way fork counts sharers") {
    KvCacheManager kv(paged_cfg(8, 4));
    SeqId parent = *kv.admit_sequence(4);
    for (int k = 0; k < 3; ++k) kv.fork_sequence(parent);
    CHECK(kv.block_refcount(kv.block_table(parent)[0]) == 4);
}

TEST_CASE("free semantics follow refcounts") {
    KvCacheManager kv(paged_cfg(8, 4));
    SeqId a = *kv.admit_sequence(7);
    CHECK(kv.allocated_blocks() == 2);
    kv.free_sequence(a);
    CHECK(kv.allocated_blocks() == 0);
    CHECK(kv.free_blocks() == 8);

    SeqId b = *kv.admit_sequence(5);
    SeqId c = kv.fork_sequence(b);
    kv.free_sequence(b);
    CHECK(kv.allocated_blocks() == 2);  // c still holds both
    kv.free_sequence(c);
    CHECK(kv.allocated_blocks() == 0);

    CHECK_THROWS_AS(kv.free_sequence(c), ContractError);
}

TEST_CASE("fork is unsupported under the contiguous policy") {
    KvCacheManager kv(contig_cfg(256, 16, 64));
    SeqId a = *kv.admit_sequence(5);
    CHECK_THROWS_AS(kv.fork_sequence(a), ContractError);
}

TEST_CASE("utilization matches the worked examples") {
    KvCacheManager contig(contig_cfg(128, 16, 2048));
    SeqId a = *contig.admit_sequence(500);
    CHECK(contig.utilization_pct() == doctest::Approx(24.4140625).epsilon(1e-12));
    contig.free_sequence(a);
    CHECK(contig.utilization_pct() == 100.0);  // empty denominator rule

    KvCacheManager paged(paged_cfg(8, 4));
    SeqId b = *paged.admit_sequence(5);
    CHECK(paged.utilization_pct() == doctest::Approx(62.5).epsilon(1e-12));
    paged.free_sequence(b);
    CHECK(paged.utilization_pct() == 100.0);
}

TEST_CASE("single-sequence paged utilization respects the tail bound") {
    for (int bs : {1, 4, 16}) {
        for (int len = 1; len <= 40; ++len) {
            KvCacheManager kv(paged_cfg(64, bs));
            kv.admit_sequence(len);
            const double bound = 100.0 * len / (len + bs - 1.0);
            CHECK(kv.utilization_pct() >= bound - 1e-9);
        }
    }
}

TEST_CASE("paged beats contiguous on utilization for short outputs") {
    Rng rng(51);
    for (int trial = 0; trial < 20; ++trial) {
        KvCacheManager paged(paged_cfg(256, 16));
        KvCacheManager contig(contig_cfg(256, 16, 512));
        for (int i = 0; i < 6; ++i) {
            const int len = 1 + static_cast<int>(rng.uniform_int(0, 199));
            paged.admit_sequence(len);
            contig.admit_sequence(len);
        }
        CHECK(paged.utilization_pct() >= contig.utilization_pct());
    }
}

TEST_CASE("randomized ops keep refcounts, conservation, and tags exact") {
    Rng rng(52);
    KvCacheManager kv(paged_cfg(96, 4));
    // Model: expected tag vector per live sequence.
    std::map<SeqId, std::vector<std::uint64_t>> model;

    for (int step = 0; step < 4000; ++step) {
        const double roll = rng.uniform();
        if (roll < 0.35 || model.empty()) {
            const int len = 1 + static_cast<int>(rng.uniform_int(0, 12));
            auto seq = kv.admit_sequence(len);
            if (seq) {
                auto& tags = model[*seq];
                for (int pos = 0; pos < len; ++pos) tags.push_back(tag(*seq, pos));
            }
        } else {
            auto it = model.begin();
            std::advance(it, rng.uniform_int(0, static_cast<std::int64_t>(model.size()) - 1));
            const SeqId seq = it->first;
            if (roll < 0.65) {
                if (kv.append_token(seq)) {
                    it->second.push_back(tag(seq, static_cast<int>(it->second.size())));
                }
            } else if (roll < 0.8) {
                const SeqId child = kv.fork_sequence(seq);
                model[child] = it->second;
            } else {
                kv.free_sequence(seq);
                model.erase(it);
            }
        }

        CHECK(kv.allocated_blocks() + kv.free_blocks() == 96);
        CHECK(kv.allocated_blocks() <= 96);

        if (step % 16 != 0) continue;
        // Refcount of every block equals the number of tables referencing it.
        std::map<int, int> refs;
        for (const auto& [seq, tags] : model) {
            for (int b : kv.block_table(seq)) ++refs[b];
        }
        int allocated = 0;
        for (int b = 0; b < 96; ++b) {
            const int rc = kv.block_refcount(b);
            const auto it = refs.find(b);
            CHECK(rc == (it == refs.end() ? 0 : it->second));
            if (rc > 0) ++allocated;
        }
        CHECK(allocated == kv.allocated_blocks());
    }

    // Full tag read-back at the end.
    for (const auto& [seq, tags] : model) {
        REQUIRE(kv.seq_len(seq) == static_cast<int>(tags.size()));
        for (size_t pos = 0; pos < tags.size(); ++pos) {
            CHECK(kv.read_tag(seq, static_cast<int>(pos)) == tags[pos]);
        }
    }
}

TEST_CASE("contract violations throw") {
    KvCacheManager kv(paged_cfg(4, 4));
    CHECK_THROWS_AS(kv.append_token(99), ContractError);
    CHECK_THROWS_AS(kv.seq_len(99), ContractError);
    CHECK_THROWS_AS(kv.read_tag(99, 0), ContractError);
    SeqId a = *kv.admit_sequence(2);
    CHECK_THROWS_AS(kv.read_tag(a, 2), ContractError);
    CHECK_THROWS_AS(KvCacheManager(paged_cfg(0, 4)), ConfigError);

    KvCacheManager contig(contig_cfg(16, 4, 8));
    CHECK_THROWS_AS(contig.admit_sequence(9), ContractError);
    SeqId b = *contig.admit_sequence(8);
    CHECK_THROWS_AS(contig.append_token(b), ContractError);
}

TEST_CASE("lent blocks leave local circulation and come back on return") {
    KvCacheManager kv(paged_cfg(6, 4));
    const auto lent = kv.lend_blocks(2);
    REQUIRE(lent.has_value());
    CHECK(*lent == std::vector<int>{0, 1});  // lowest free ids first
    CHECK(kv.lent_blocks() == 2);
    CHECK(kv.free_blocks() == 4);
    CHECK(kv.allocated_blocks() == 0);

    // Local allocation can only use the remaining four blocks.
    const SeqId a = *kv.admit_sequence(16);  // 4 blocks
    CHECK(kv.free_blocks() == 0);
    CHECK(kv.block_table(a) == std::vector<int>{2, 3, 4, 5});
    CHECK_FALSE(kv.append_token(a));
    CHECK_FALSE(kv.lend_blocks(1).has_value());

    const auto snap = kv.snapshot();
    CHECK(snap.allocated_blocks + snap.free_blocks + snap.lent_blocks == 6);
    CHECK(snap.lent_blocks == 2);
    CHECK(snap.held_tokens == 16);  // lent blocks are the borrower's storage

    kv.return_blocks(*lent);
    CHECK(kv.lent_blocks() == 0);
    CHECK(kv.free_blocks() == 2);
    CHECK(kv.append_token(a));
    CHECK(kv.block_table(a).back() == 0);

    kv.free_sequence(a);
    CHECK(kv.free_blocks() == 6);
}

TEST_CASE("lend and return contract violations") {
    KvCacheManager kv(paged_cfg(4, 4));
    CHECK_THROWS_AS(kv.lend_blocks(-1), ContractError);
    CHECK(kv.lend_blocks(0)->empty());
    CHECK_THROWS_AS(kv.return_blocks({3}), ContractError);
    const auto lent = kv.lend_blocks(1);
    CHECK_THROWS_AS(kv.return_blocks({*lent->begin(), *lent->begin()}), ContractError);

    KvCacheManager contig(contig_cfg(16, 4, 8));
    CHECK_THROWS_AS(contig.lend_blocks(1), ContractError);
    CHECK_THROWS_AS(contig.return_blocks({0}), ContractError);
}
