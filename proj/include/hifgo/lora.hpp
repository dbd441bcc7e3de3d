#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "hifgo/matrix.hpp"

namespace hifgo {

struct LayerShape {
    std::size_t rows = 0;  // fan-out d
    std::size_t cols = 0;  // fan-in k
};

struct LoraConfig {
    std::size_t rank = 2;
    double scale = 1.0;      // effective delta is scale * B * A
    double init_std = 0.02;  // stddev of the Gaussian A-factor init
};

/// One low-rank factor pair per adapted layer. Only the factors are ever
/// optimized; base weights stay frozen.
struct LoraAdapter {
    std::vector<Matrix> b;  // d x r, zero-initialized
    std::vector<Matrix> a;  // r x k, Gaussian-initialized
    std::size_t rank = 0;
    double scale = 1.0;

    std::size_t layer_count() const { return b.size(); }
};

/// Frozen base weights, one matrix per layer. Immutable for a run.
struct BaseWeights {
    LayerMats w0;

    std::vector<LayerShape> shapes() const {
        std::vector<LayerShape> s;
        s.reserve(w0.size());
        for (const auto& m : w0) s.push_back({m.rows(), m.cols()});
        return s;
    }
};

/// Per-task effective update matrices, appended as tasks complete. Entries
/// are stored dense: sums of rank-r products are not themselves rank-r, and
/// rebasing onto the accumulated model needs closure under addition.
struct DeltaStack {
    std::vector<LayerMats> entries;

    std::size_t size() const { return entries.size(); }
    bool empty() const { return entries.empty(); }

    /// Stack restricted to the first `count` entries (tasks 1..count).
    DeltaStack prefix(std::size_t count) const {
        DeltaStack out;
        out.entries.assign(entries.begin(), entries.begin() + count);
        return out;
    }
};

inline BaseWeights zero_base(const std::vector<LayerShape>& arch) {
    BaseWeights base;
    base.w0.reserve(arch.size());
    for (const auto& s : arch) base.w0.emplace_back(s.rows, s.cols);
    return base;
}

/// B = 0, A ~ N(0, init_std): the effective delta starts exactly at zero,
/// so the pre-finetuning model equals the merged previous model.
inline LoraAdapter init_adapter(const std::vector<LayerShape>& arch,
                                const LoraConfig& cfg, RngStream rng) {
    if (cfg.rank == 0) throw ConfigError("lora rank must be positive");
    if (!(cfg.scale > 0.0)) throw ConfigError("lora scale must be positive");
    LoraAdapter ad;
    ad.rank = cfg.rank;
    ad.scale = cfg.scale;
    for (const auto& s : arch) {
        if (cfg.rank > std::min(s.rows, s.cols)) {
            throw ConfigError("lora rank " + std::to_string(cfg.rank) +
                              " exceeds min dimension of layer " +
                              std::to_string(s.rows) + "x" + std::to_string(s.cols));
        }
        ad.b.emplace_back(s.rows, cfg.rank);
        ad.a.push_back(gaussian_matrix(rng, cfg.rank, s.cols, cfg.init_std));
    }
    return ad;
}

/// Effective per-layer update: scale * B * A.
inline LayerMats effective_delta(const LoraAdapter& ad) {
    LayerMats out;
    out.reserve(ad.layer_count());
    for (std::size_t l = 0; l < ad.layer_count(); ++l) {
        Matrix d = matmul(ad.b[l], ad.a[l]);
        d *= ad.scale;
        out.push_back(std::move(d));
    }
    return out;
}

/// Merged weights: W0 + sum of stacked deltas + current adapter's delta,
/// summed in stack order (left fold, so iterated single merges match
/// bit-for-bit).
inline LayerMats merge(const BaseWeights& base, const DeltaStack& stack,
                       const LoraAdapter* current = nullptr) {
    LayerMats w = base.w0;
    for (const auto& entry : stack.entries) {
        if (entry.size() != w.size()) {
            throw DimError("merge: stack entry has " + std::to_string(entry.size()) +
                           " layers, base has " + std::to_string(w.size()));
        }
        for (std::size_t l = 0; l < w.size(); ++l) {
            check_same_shape(w[l], entry[l], "merge stack entry");
            w[l] += entry[l];
        }
    }
    if (current) {
        if (current->layer_count() != w.size()) {
            throw DimError("merge: adapter has " + std::to_string(current->layer_count()) +
                           " layers, base has " + std::to_string(w.size()));
        }
        LayerMats d = effective_delta(*current);
        for (std::size_t l = 0; l < w.size(); ++l) {
            check_same_shape(w[l], d[l], "merge adapter delta");
            w[l] += d[l];
        }
    }
    return w;
}

/// Sum over layers of the squared Frobenius norm of the effective delta.
inline double adapter_norm_sq(const LoraAdapter& ad) {
    double acc = 0.0;
    for (const auto& d : effective_delta(ad)) acc += frobenius_inner(d, d);
    return acc;
}

/// Appends the adapter's effective delta to the stack; the input stack is
/// left untouched (persistent-value semantics).
inline DeltaStack freeze_delta(const LoraAdapter& ad, const DeltaStack& stack) {
    DeltaStack out = stack;
    out.entries.push_back(effective_delta(ad));
    return out;
}

}  // namespace hifgo
