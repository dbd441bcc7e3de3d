#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "hifgo/models.hpp"
#include "hifgo/tasks.hpp"

namespace hifgo {

/// Regularization weights of the stage-2 objective
/// ce + lambda1 * orth + lambda2 * norm.
struct RegWeights {
    double lambda1 = 2e-2;
    double lambda2 = 1e-2;

    void validate() const {
        if (lambda1 < 0.0 || lambda2 < 0.0) {
            throw ConfigError("regularization weights must be non-negative");
        }
    }
};

/// Gradient of a previously merged model, captured on current-task data.
/// Captured once at stage-2 entry and frozen for the whole stage.
struct GpwcSnapshot {
    int task_id = 0;      // task whose stage 2 this snapshot constrains
    int source_task = 0;  // j: which merged model the gradient was taken at
    LayerMats grads;
    std::size_t sample_count = 0;

    std::vector<double> layer_norms() const {
        std::vector<double> out;
        out.reserve(grads.size());
        for (const auto& g : grads) out.push_back(frobenius_norm(g));
        return out;
    }
};

enum class OrthPenalty { abs, square };

/// Value and factor gradients of one regularization term.
struct RegTerm {
    double value = 0.0;
    LayerMats b_grads;
    LayerMats a_grads;
};

/// Previously merged weights together with that task's own retained data;
/// only the history-gradient comparison arm is allowed to keep these.
struct HistoryPair {
    LayerMats merged;
    Batch data;
};

/// Captures the gradient of the merged model W0 + sum of the stack prefix
/// on the given data. The prefix must end at a completed task j strictly
/// before the task being regularized.
inline GpwcSnapshot compute_gpwc(const ModelSpec& spec, const BaseWeights& base,
                                 const DeltaStack& prefix, const Batch& d2,
                                 int task_id, int source_task,
                                 bool normalize = false) {
    if (d2.size() == 0) throw InputError("compute_gpwc: empty D2 batch");
    const LayerMats w = merge(base, prefix, nullptr);
    GradReport rep = grad_wrt_merged(spec, w, d2);
    GpwcSnapshot snap;
    snap.task_id = task_id;
    snap.source_task = source_task;
    snap.sample_count = d2.size();
    snap.grads = std::move(rep.weight_grads);
    if (normalize) {
        for (auto& g : snap.grads) {
            const double norm = frobenius_norm(g);
            if (norm > 1e-12) g *= 1.0 / norm;
        }
    }
    return snap;
}

namespace detail {

/// Shared core of the orthogonality penalties: for every reference matrix
/// list R_j, every layer l, penalizes the Frobenius inner product
/// t = <R_{j,l}, scale*B_l*A_l> as |t| (default) or t^2, accumulating
/// factor gradients. Terms are summed j-major, layer-minor, so values
/// replay bit-for-bit.
inline RegTerm inner_product_penalty(const std::vector<const LayerMats*>& refs,
                                     const LoraAdapter& ad, OrthPenalty penalty) {
    RegTerm term;
    term.b_grads.reserve(ad.layer_count());
    term.a_grads.reserve(ad.layer_count());
    for (std::size_t l = 0; l < ad.layer_count(); ++l) {
        term.b_grads.emplace_back(ad.b[l].rows(), ad.b[l].cols());
        term.a_grads.emplace_back(ad.a[l].rows(), ad.a[l].cols());
    }
    const LayerMats delta = effective_delta(ad);
    for (const LayerMats* ref : refs) {
        if (ref->size() != delta.size()) {
            throw DimError("orthogonality reference has " + std::to_string(ref->size()) +
                           " layers, adapter has " + std::to_string(delta.size()));
        }
        for (std::size_t l = 0; l < delta.size(); ++l) {
            const Matrix& g = (*ref)[l];
            check_same_shape(g, delta[l], "orthogonality term");
            const double t = frobenius_inner(g, delta[l]);
            double coeff;  // d(penalty)/dt
            if (penalty == OrthPenalty::abs) {
                term.value += std::abs(t);
                coeff = t > 0.0 ? 1.0 : (t < 0.0 ? -1.0 : 0.0);
            } else {
                term.value += t * t;
                coeff = 2.0 * t;
            }
            if (coeff != 0.0) {
                // d t / dB = s*G*A^T, d t / dA = s*B^T*G
                Matrix db = matmul(g, transpose(ad.a[l]));
                db *= coeff * ad.scale;
                term.b_grads[l] += db;
                Matrix da = matmul(transpose(ad.b[l]), g);
                da *= coeff * ad.scale;
                term.a_grads[l] += da;
            }
        }
    }
    return term;
}

}  // namespace detail

/// Orthogonality loss against every previous task's snapshot:
/// sum over j and layers of the penalized inner product between the frozen
/// gradient and the adapter's effective delta.
inline RegTerm orth_loss_full(const std::vector<GpwcSnapshot>& snapshots,
                              const LoraAdapter& ad,
                              OrthPenalty penalty = OrthPenalty::abs) {
    std::vector<const LayerMats*> refs;
    refs.reserve(snapshots.size());
    for (const auto& s : snapshots) refs.push_back(&s.grads);
    return detail::inner_product_penalty(refs, ad, penalty);
}

/// Proxy form: a single constraint against the most recent merged model
/// stands in for the whole history, making the per-step cost O(1).
inline RegTerm orth_loss_proxy(const GpwcSnapshot& snapshot, const LoraAdapter& ad,
                               OrthPenalty penalty = OrthPenalty::abs) {
    return detail::inner_product_penalty({&snapshot.grads}, ad, penalty);
}

/// Parameter-orthogonality baseline: constrains the current delta against
/// the previous tasks' parameter deltas instead of their gradients.
inline RegTerm param_orth_loss(const DeltaStack& stack, const LoraAdapter& ad,
                               OrthPenalty penalty = OrthPenalty::abs) {
    std::vector<const LayerMats*> refs;
    refs.reserve(stack.entries.size());
    for (const auto& e : stack.entries) refs.push_back(&e);
    return detail::inner_product_penalty(refs, ad, penalty);
}

/// L2 penalty on the effective delta: sum over layers of |scale*B*A|_F^2,
/// with gradients dB = 2 s^2 (BA) A^T and dA = 2 s^2 B^T (BA).
inline RegTerm norm_loss(const LoraAdapter& ad) {
    RegTerm term;
    term.b_grads.reserve(ad.layer_count());
    term.a_grads.reserve(ad.layer_count());
    const double s2 = ad.scale * ad.scale;
    for (std::size_t l = 0; l < ad.layer_count(); ++l) {
        const Matrix ba = matmul(ad.b[l], ad.a[l]);
        term.value += s2 * frobenius_inner(ba, ba);
        Matrix db = matmul(ba, transpose(ad.a[l]));
        db *= 2.0 * s2;
        Matrix da = matmul(transpose(ad.b[l]), ba);
        da *= 2.0 * s2;
        term.b_grads.push_back(std::move(db));
        term.a_grads.push_back(std::move(da));
    }
    return term;
}

/// History-based comparison arm: snapshots are gradients of each previous
/// merged model on its own retained data. After those models converged,
/// these gradients are close to zero and the constraint goes slack.
inline std::vector<GpwcSnapshot> history_grad_snapshots(
    const ModelSpec& spec, const std::vector<HistoryPair>& pairs, int task_id) {
    std::vector<GpwcSnapshot> snaps;
    snaps.reserve(pairs.size());
    for (std::size_t j = 0; j < pairs.size(); ++j) {
        if (pairs[j].data.size() == 0) {
            throw ConfigError("history_grad: task " + std::to_string(j + 1) +
                              " has no retained data");
        }
        GradReport rep = grad_wrt_merged(spec, pairs[j].merged, pairs[j].data);
        GpwcSnapshot snap;
        snap.task_id = task_id;
        snap.source_task = static_cast<int>(j + 1);
        snap.sample_count = pairs[j].data.size();
        snap.grads = std::move(rep.weight_grads);
        snaps.push_back(std::move(snap));
    }
    return snaps;
}

inline RegTerm history_grad_orth_loss(const ModelSpec& spec,
                                      const std::vector<HistoryPair>& pairs,
                                      const LoraAdapter& ad,
                                      OrthPenalty penalty = OrthPenalty::abs) {
    const auto snaps = history_grad_snapshots(spec, pairs, 0);
    return orth_loss_full(snaps, ad, penalty);
}

}  // namespace hifgo
