#include "servesim/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "servesim/errors.hpp"

namespace servesim::attn {

namespace {

void check_finite(const Vec& v, const char* what) {
    for (double x : v) {
        if (!std::isfinite(x)) throw NumericError(std::string(what) + ": non-finite value");
    }
}

void check_rows(const Mat& m, size_t width, const char* what) {
    for (const auto& row : m) {
        if (row.size() != width) throw ContractError(std::string(what) + ": ragged row width");
        check_finite(row, what);
    }
}

double dot(const Vec& a, const Vec& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

void validate(const Vec& q, const Mat& keys, const Mat& values, const char* what) {
    if (q.empty()) throw NumericError(std::string(what) + ": d_k must be >= 1");
    if (keys.empty() || keys.size() != values.size()) {
        throw NumericError(std::string(what) + ": need n >= 1 matching key/value rows");
    }
    check_finite(q, what);
    check_rows(keys, q.size(), what);
    if (values[0].empty()) throw NumericError(std::string(what) + ": d_v must be >= 1");
    check_rows(values, values[0].size(), what);
}

}  // namespace

Vec dense_attention(const AttentionInput& input) {
    validate(input.q, input.keys, input.values, "dense_attention");
    const size_t n = input.keys.size();
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(input.q.size()));

    std::vector<double> scores(n);
    double m = -std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < n; ++j) {
        scores[j] = dot(input.q, input.keys[j]) * inv_scale;
        m = std::max(m, scores[j]);
    }
    double denom = 0.0;
    for (size_t j = 0; j < n; ++j) denom += std::exp(scores[j] - m);

    Vec out(input.values[0].size(), 0.0);
    for (size_t j = 0; j < n; ++j) {
        const double w = std::exp(scores[j] - m);
        for (size_t d = 0; d < out.size(); ++d) out[d] += w * input.values[j][d];
    }
    for (double& x : out) x /= denom;
    return out;
}

Vec paged_attention(const Vec& q, std::span<const KvBlock> blocks) {
    if (blocks.empty()) throw NumericError("paged_attention: empty block list");

    double run_m = -std::numeric_limits<double>::infinity();
    double run_s = 0.0;
    Vec run_o;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(q.size()));

    for (const KvBlock& block : blocks) {
        validate(q, block.keys, block.values, "paged_attention");
        if (run_o.empty()) run_o.assign(block.values[0].size(), 0.0);

        double blk_m = -std::numeric_limits<double>::infinity();
        std::vector<double> scores(block.keys.size());
        for (size_t j = 0; j < block.keys.size(); ++j) {
            scores[j] = dot(q, block.keys[j]) * inv_scale;
            blk_m = std::max(blk_m, scores[j]);
        }

        const double new_m = std::max(run_m, blk_m);
        const double carry = std::exp(run_m - new_m);  // 0 when run state is empty
        run_s *= carry;
        for (double& x : run_o) x *= carry;
        for (size_t j = 0; j < block.keys.size(); ++j) {
            const double w = std::exp(scores[j] - new_m);
            run_s += w;
            for (size_t d = 0; d < run_o.size(); ++d) run_o[d] += w * block.values[j][d];
        }
        run_m = new_m;
    }

    for (double& x : run_o) x /= run_s;
    return run_o;
}

MicroAttentionPartial micro_attention_partial(const Vec& q, const Mat& keys, const Mat& values) {
    validate(q, keys, values, "micro_attention_partial");
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(q.size()));

    MicroAttentionPartial p;
    p.m = -std::numeric_limits<double>::infinity();
    std::vector<double> scores(keys.size());
    for (size_t j = 0; j < keys.size(); ++j) {
        scores[j] = dot(q, keys[j]) * inv_scale;
        p.m = std::max(p.m, scores[j]);
    }
    p.o.assign(values[0].size(), 0.0);
    for (size_t j = 0; j < keys.size(); ++j) {
        const double w = std::exp(scores[j] - p.m);
        p.s += w;
        for (size_t d = 0; d < p.o.size(); ++d) p.o[d] += w * values[j][d];
    }
    return p;
}

Vec aggregate_micro(std::span<const MicroAttentionPartial> partials) {
    if (partials.empty()) throw NumericError("aggregate_micro: empty partial list");

    double g = -std::numeric_limits<double>::infinity();
    for (const auto& p : partials) {
        if (!(p.s > 0.0) || !std::isfinite(p.s) || !std::isfinite(p.m)) {
            throw NumericError("aggregate_micro: invalid partial");
        }
        g = std::max(g, p.m);
    }

    Vec num(partials.front().o.size(), 0.0);
    double denom = 0.0;
    for (const auto& p : partials) {
        if (p.o.size() != num.size()) throw ContractError("aggregate_micro: mismatched d_v");
        const double scale = std::exp(p.m - g);
        denom += p.s * scale;
        for (size_t d = 0; d < num.size(); ++d) num[d] += p.o[d] * scale;
    }
    for (double& x : num) x /= denom;
    return num;
}

}  // namespace servesim::attn
