#pragma once

#include <span>
#include <vector>

namespace servesim::attn {

using Vec = std::vector<double>;
using Mat = std::vector<std::vector<double>>;  // row-major: one row per token

// Single-query attention input. d_k is q.size(); keys are n x d_k, values
// n x d_v. Multi-head / batched forms are loops over this kernel.
struct AttentionInput {
    Vec q;
    Mat keys;
    Mat values;
};

// A KV block: a slice of consecutive (key, value) token pairs. Blocks need
// not be adjacent in any pool; only their order matters.
struct KvBlock {
    Mat keys;
    Mat values;
};

// Partial attention state over a token subset: local score max m, local
// sum s of exp(score - m), and the unnormalized output o.
struct MicroAttentionPartial {
    double m = 0.0;
    double s = 0.0;
    Vec o;
};

// softmax(q.K^T / sqrt(d_k)) V with max-subtraction. Throws NumericError on
// empty or non-finite input.
Vec dense_attention(const AttentionInput& input);

// Block-wise attention: a single streaming pass over the blocks keeping a
// running (max, sum, accumulator) that is rescaled as larger scores appear.
// Exactly equivalent to dense_attention on the concatenated tokens.
Vec paged_attention(const Vec& q, std::span<const KvBlock> blocks);

// Attention partial over one token subset.
MicroAttentionPartial micro_attention_partial(const Vec& q, const Mat& keys, const Mat& values);

// Merge partials from disjoint subsets into the exact full-set output.
// Permutation-invariant; log-sum-exp rescaling to the global max.
Vec aggregate_micro(std::span<const MicroAttentionPartial> partials);

}  // namespace servesim::attn
