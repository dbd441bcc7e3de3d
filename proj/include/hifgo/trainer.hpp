#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "hifgo/metrics.hpp"
#include "hifgo/regularizers.hpp"

namespace hifgo {

enum class OptimMethod { sgd, sgd_momentum };

struct OptimConfig {
    OptimMethod method = OptimMethod::sgd_momentum;
    double lr = 0.05;
    double momentum = 0.9;
    int epochs_stage1 = 1;
    int epochs_stage2 = 3;
    std::size_t batch_size = 16;

    void validate() const {
        if (lr < 0.0) throw ConfigError("learning rate must be >= 0");
        if (momentum < 0.0 || momentum >= 1.0) {
            throw ConfigError("momentum must lie in [0, 1)");
        }
        if (batch_size == 0) throw ConfigError("batch size must be >= 1");
        if (epochs_stage1 < 0 || epochs_stage2 < 0) {
            throw ConfigError("epoch counts must be >= 0");
        }
    }
};

enum class StrategyKind {
    hifgo_full,
    hifgo_proxy,
    seq_ft,
    param_orth,
    hist_grad_orth,
    multi_task,
};

enum class Stage2Init { copy, fresh };

struct Strategy {
    StrategyKind kind = StrategyKind::hifgo_proxy;
    RegWeights reg;
    bool two_stage = true;
    Stage2Init stage2_init = Stage2Init::copy;
    OrthPenalty orth_penalty = OrthPenalty::abs;
    bool normalize_gpwc = false;
};

/// Applies the per-kind invariants: seq-ft is plain sequential finetuning
/// (no regularizers, single stage), multi-task ignores staging and
/// regularization entirely.
inline Strategy normalized(Strategy s) {
    if (s.kind == StrategyKind::seq_ft) {
        s.reg.lambda1 = 0.0;
        s.reg.lambda2 = 0.0;
        s.two_stage = false;
    }
    if (s.kind == StrategyKind::multi_task) {
        s.reg.lambda1 = 0.0;
        s.reg.lambda2 = 0.0;
        s.two_stage = false;
    }
    s.reg.validate();
    return s;
}

struct TraceRow {
    int task = 0;  // 0 marks joint multi-task training
    int stage = 0;
    int step = 0;
    double ce = 0.0;
    double orth = 0.0;   // raw term value, before lambda1
    double norm = 0.0;   // raw term value, before lambda2
    double total = 0.0;  // ce + lambda1*orth + lambda2*norm
};

struct SnapshotNormRecord {
    int task = 0;
    int source = 0;
    std::vector<double> layer_norms;
};

/// Counters that make the per-step cost of the orthogonality constraint
/// inspectable: the full form evaluates one inner-product set per previous
/// task, the proxy form exactly one.
struct Accounting {
    std::vector<int> sets_per_step;        // per task, during its constrained stage
    std::vector<long long> stage2_steps;   // per task
    long long set_evals_total = 0;
    long long stage1_steps_total = 0;
    long long stage2_steps_total = 0;
};

struct RunArtifacts {
    int n_tasks = 0;
    DeltaStack stack;
    std::vector<LoraAdapter> stage1_adapters;  // empty when the run is single-stage
    std::vector<LoraAdapter> stage2_adapters;
    PerfMatrix perf;
    std::vector<TraceRow> trace;
    std::vector<SnapshotNormRecord> snapshot_norms;
    Accounting accounting;
    double wall_ms = 0.0;  // excluded from determinism comparisons
};

struct Experiment {
    ModelSpec spec;
    BaseWeights base;
    LoraConfig lora;
};

struct OptimState {
    LayerMats vb;
    LayerMats va;
};

/// One SGD step on the factors: v <- beta*v + g, p <- p - lr*v. Plain SGD
/// when beta is zero or the method is sgd.
inline void sgd_step(LoraAdapter& ad, const GradReport& grads, OptimState& state,
                     const OptimConfig& optim) {
    if (grads.b_grads.size() != ad.layer_count() ||
        grads.a_grads.size() != ad.layer_count()) {
        throw DimError("sgd_step: factor gradient layer count mismatch");
    }
    const double beta =
        optim.method == OptimMethod::sgd ? 0.0 : optim.momentum;
    if (state.vb.empty()) {
        for (std::size_t l = 0; l < ad.layer_count(); ++l) {
            state.vb.emplace_back(ad.b[l].rows(), ad.b[l].cols());
            state.va.emplace_back(ad.a[l].rows(), ad.a[l].cols());
        }
    }
    for (std::size_t l = 0; l < ad.layer_count(); ++l) {
        check_same_shape(grads.b_grads[l], ad.b[l], "sgd_step b gradient");
        check_same_shape(grads.a_grads[l], ad.a[l], "sgd_step a gradient");
        state.vb[l] *= beta;
        state.vb[l] += grads.b_grads[l];
        Matrix step_b = state.vb[l];
        step_b *= optim.lr;
        ad.b[l] -= step_b;

        state.va[l] *= beta;
        state.va[l] += grads.a_grads[l];
        Matrix step_a = state.va[l];
        step_a *= optim.lr;
        ad.a[l] -= step_a;
    }
}

struct StageObjective {
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    OrthPenalty penalty = OrthPenalty::abs;
    const std::vector<GpwcSnapshot>* snapshots = nullptr;  // gradient constraints
    const DeltaStack* param_refs = nullptr;                // parameter-orthogonality
};

/// Observer invoked after every optimizer step; used for trajectory dumps.
struct StepInfo {
    int task = 0;
    int stage = 0;
    int step = 0;
    const BaseWeights* base = nullptr;
    const DeltaStack* stack = nullptr;  // null during stage 1
    const LoraAdapter* adapter = nullptr;
};
using StepObserver = std::function<void(const StepInfo&)>;

namespace detail {

inline const DeltaStack& empty_stack() {
    static const DeltaStack s;
    return s;
}

/// Minibatch loop of one stage. The merge target is W0 plus `stack` when
/// given (stage 2) or W0 alone (stage 1). Batch order is a seeded shuffle
/// re-drawn per epoch from streams keyed on (task, stage, epoch), so
/// different strategies see identical batch schedules.
inline void train_stage(const ModelSpec& spec, const BaseWeights& base,
                        const DeltaStack* stack, LoraAdapter& ad,
                        const Batch& data, int epochs, const OptimConfig& optim,
                        const StageObjective& obj, const RngStream& shuffle_root,
                        int task, int stage, std::vector<TraceRow>* trace,
                        Accounting* acct, int sets_per_step,
                        const StepObserver* observer) {
    const DeltaStack& merged_stack = stack ? *stack : empty_stack();
    OptimState state;
    const std::size_t n = data.size();
    int step = 0;
    std::vector<std::size_t> order(n);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        RngStream rng = shuffle_root.derive(static_cast<std::uint64_t>(epoch));
        shuffle(order, rng);
        for (std::size_t start = 0; start < n; start += optim.batch_size) {
            const std::size_t stop = std::min(n, start + optim.batch_size);
            const std::vector<std::size_t> chunk(
                order.begin() + static_cast<std::ptrdiff_t>(start),
                order.begin() + static_cast<std::ptrdiff_t>(stop));
            const Batch mb = data.select(chunk);

            GradReport rep;
            double orth_val = 0.0, norm_val = 0.0;
            double total = 0.0;
            try {
                rep = grad_wrt_factors(spec, base, merged_stack, ad, mb);
                if (obj.lambda1 > 0.0) {
                    RegTerm term;
                    if (obj.param_refs) {
                        term = param_orth_loss(*obj.param_refs, ad, obj.penalty);
                    } else if (obj.snapshots) {
                        term = orth_loss_full(*obj.snapshots, ad, obj.penalty);
                    }
                    orth_val = term.value;
                    for (std::size_t l = 0; l < ad.layer_count(); ++l) {
                        if (term.b_grads.empty()) break;
                        Matrix gb = term.b_grads[l];
                        gb *= obj.lambda1;
                        rep.b_grads[l] += gb;
                        Matrix ga = term.a_grads[l];
                        ga *= obj.lambda1;
                        rep.a_grads[l] += ga;
                    }
                }
                if (obj.lambda2 > 0.0) {
                    RegTerm term = norm_loss(ad);
                    norm_val = term.value;
                    for (std::size_t l = 0; l < ad.layer_count(); ++l) {
                        Matrix gb = term.b_grads[l];
                        gb *= obj.lambda2;
                        rep.b_grads[l] += gb;
                        Matrix ga = term.a_grads[l];
                        ga *= obj.lambda2;
                        rep.a_grads[l] += ga;
                    }
                }
                total = rep.loss + obj.lambda1 * orth_val + obj.lambda2 * norm_val;
                if (!std::isfinite(total)) throw NumericError("non-finite loss");
            } catch (const NumericError& e) {
                throw NumericError("task " + std::to_string(task) + " stage " +
                                   std::to_string(stage) + " step " +
                                   std::to_string(step) + ": " + e.what());
            }
            if (trace) trace->push_back({task, stage, step, rep.loss, orth_val, norm_val, total});
            sgd_step(ad, rep, state, optim);
            if (acct) {
                if (stage == 1) {
                    ++acct->stage1_steps_total;
                } else {
                    ++acct->stage2_steps_total;
                    if (task >= 1) ++acct->stage2_steps[static_cast<std::size_t>(task - 1)];
                    acct->set_evals_total += sets_per_step;
                }
            }
            if (observer && *observer) {
                StepInfo info;
                info.task = task;
                info.stage = stage;
                info.step = step;
                info.base = &base;
                info.stack = stack;
                info.adapter = &ad;
                (*observer)(info);
            }
            ++step;
        }
    }
}

}  // namespace detail

/// Unconstrained adaptation on D1 against W0 plus the adapter's own delta.
/// The adapter is the stage-1 lane carried across tasks.
inline LoraAdapter stage1_finetune(const ModelSpec& spec, const BaseWeights& base,
                                   LoraAdapter adapter, const Batch& d1,
                                   const OptimConfig& optim, RngStream shuffle_rng,
                                   int task_id = 1,
                                   std::vector<TraceRow>* trace = nullptr) {
    detail::train_stage(spec, base, nullptr, adapter, d1, optim.epochs_stage1, optim,
                        StageObjective{}, shuffle_rng, task_id, 1, trace, nullptr, 0,
                        nullptr);
    return adapter;
}

/// Constrained refinement on D2 against W0 plus the accumulated stack:
/// minimizes ce + lambda1*orth + lambda2*norm with frozen snapshots.
inline LoraAdapter stage2_finetune(const ModelSpec& spec, const BaseWeights& base,
                                   const DeltaStack& stack, LoraAdapter adapter,
                                   const Batch& d2,
                                   const std::vector<GpwcSnapshot>& snapshots,
                                   const Strategy& strategy, const OptimConfig& optim,
                                   RngStream shuffle_rng, int task_id = 1,
                                   std::vector<TraceRow>* trace = nullptr) {
    const Strategy strat = normalized(strategy);
    StageObjective obj;
    obj.lambda1 = strat.reg.lambda1;
    obj.lambda2 = strat.reg.lambda2;
    obj.penalty = strat.orth_penalty;
    if (strat.reg.lambda1 > 0.0) {
        if (strat.kind == StrategyKind::param_orth) {
            obj.param_refs = &stack;
        } else {
            if (snapshots.empty() && !stack.empty()) {
                throw ConfigError("stage 2 with lambda1 > 0 requires snapshots of the "
                                  "previous tasks");
            }
            obj.snapshots = &snapshots;
        }
    }
    detail::train_stage(spec, base, &stack, adapter, d2, optim.epochs_stage2, optim,
                        obj, shuffle_rng, task_id, 2, trace, nullptr,
                        static_cast<int>(snapshots.size()), nullptr);
    return adapter;
}

namespace detail {

inline void validate_experiment(const Experiment& exp, const TaskStream& stream) {
    exp.spec.validate();
    if (stream.size() == 0) throw ConfigError("task stream is empty");
    if (exp.base.w0.size() != exp.spec.layers.size()) {
        throw ConfigError("base weights do not match the model layer count");
    }
    for (std::size_t l = 0; l < exp.base.w0.size(); ++l) {
        if (exp.base.w0[l].rows() != exp.spec.layers[l].rows ||
            exp.base.w0[l].cols() != exp.spec.layers[l].cols) {
            throw ConfigError("base weight shape " + shape_str(exp.base.w0[l]) +
                              " does not match model layer " + std::to_string(l));
        }
    }
    for (const auto& task : stream.tasks) {
        if (task.train.inputs.cols() != exp.spec.input_dim()) {
            throw ConfigError("task " + std::to_string(task.id) +
                              " input dim does not match the model");
        }
    }
}

inline Batch concat_train(const TaskStream& stream) {
    std::size_t total = 0;
    for (const auto& t : stream.tasks) total += t.train.size();
    const bool cls = stream.tasks.front().train.classification();
    Batch pool;
    pool.inputs = Matrix(total, stream.tasks.front().train.inputs.cols());
    if (!cls) {
        pool.targets = Matrix(total, stream.tasks.front().train.targets.cols());
    }
    std::size_t row = 0;
    for (const auto& t : stream.tasks) {
        for (std::size_t i = 0; i < t.train.size(); ++i, ++row) {
            for (std::size_t c = 0; c < pool.inputs.cols(); ++c) {
                pool.inputs(row, c) = t.train.inputs(i, c);
            }
            if (cls) {
                pool.labels.push_back(t.train.labels[i]);
            } else {
                for (std::size_t c = 0; c < pool.targets.cols(); ++c) {
                    pool.targets(row, c) = t.train.targets(i, c);
                }
            }
        }
    }
    return pool;
}

}  // namespace detail

/// Joint upper-bound reference: one adapter trained on the shuffled union
/// of every task's train set. Only the final performance row is defined.
inline RunArtifacts run_multitask(const Experiment& exp, const TaskStream& stream,
                                  const OptimConfig& optim, std::uint64_t seed,
                                  std::uint64_t rng_stream = 0,
                                  const StepObserver* observer = nullptr) {
    detail::validate_experiment(exp, stream);
    optim.validate();
    const auto start = std::chrono::steady_clock::now();
    const int n = static_cast<int>(stream.size());

    RunArtifacts art;
    art.n_tasks = n;
    art.perf = PerfMatrix(n);
    art.accounting.sets_per_step.assign(n, 0);
    art.accounting.stage2_steps.assign(n, 0);

    RngStream root(seed, rng_stream);
    const auto arch = exp.base.shapes();
    const Batch pool = detail::concat_train(stream);
    // rng keys mirror a single-task single-stage run so that a one-task
    // multi-task run reproduces sequential finetuning exactly
    LoraAdapter ad = init_adapter(arch, exp.lora, root.derive(100 + 1));
    detail::train_stage(exp.spec, exp.base, nullptr, ad, pool, optim.epochs_stage2,
                        optim, StageObjective{}, root.derive(2).derive(1).derive(2),
                        /*task=*/0, /*stage=*/2, &art.trace, &art.accounting, 0,
                        observer);
    art.stage2_adapters.push_back(ad);
    art.stack = freeze_delta(ad, DeltaStack{});

    const LayerMats w = merge(exp.base, art.stack);
    for (int j = 0; j < n; ++j) {
        art.perf.at(n - 1, j) = evaluate(exp.spec, w, stream.tasks[j].eval);
    }
    art.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - start)
                      .count();
    return art;
}

/// The full continual loop, one task at a time: subset selection,
/// unconstrained stage 1 on D1 (two-stage runs), snapshot capture,
/// constrained stage 2, delta freezing, then evaluation of every task.
/// Single-stage runs (two_stage off, which includes seq-ft) skip stage 1
/// and run the constrained stage exactly as specified: fresh adapter, D2
/// data, stage-2 epochs.
inline RunArtifacts run_continual(const Experiment& exp, const TaskStream& stream,
                                  const Strategy& strategy, const OptimConfig& optim,
                                  const SubsetPlan& plan, std::uint64_t seed,
                                  std::uint64_t rng_stream = 0,
                                  const StepObserver* observer = nullptr) {
    const Strategy strat = normalized(strategy);
    if (strat.kind == StrategyKind::multi_task) {
        return run_multitask(exp, stream, optim, seed, rng_stream, observer);
    }
    detail::validate_experiment(exp, stream);
    optim.validate();
    const auto start = std::chrono::steady_clock::now();
    const int n = static_cast<int>(stream.size());

    RunArtifacts art;
    art.n_tasks = n;
    art.perf = PerfMatrix(n);
    art.accounting.sets_per_step.assign(n, 0);
    art.accounting.stage2_steps.assign(n, 0);

    RngStream root(seed, rng_stream);
    const auto arch = exp.base.shapes();
    DeltaStack stack;
    LoraAdapter chain;  // stage-1 lane, initialized on first use
    std::vector<HistoryPair> retained;  // hist-grad-orth only

    for (int ti = 0; ti < n; ++ti) {
        const TaskSpec& task = stream.tasks[ti];
        const int i = ti + 1;
        auto [d1, d2] = select_subsets(task, plan);

        if (strat.two_stage) {
            if (i == 1) chain = init_adapter(arch, exp.lora, root.derive(1));
            detail::train_stage(exp.spec, exp.base, nullptr, chain, d1,
                                optim.epochs_stage1, optim, StageObjective{},
                                root.derive(2).derive(i).derive(1), i, 1, &art.trace,
                                &art.accounting, 0, observer);
            art.stage1_adapters.push_back(chain);
        }

        std::vector<GpwcSnapshot> snaps;
        if (strat.reg.lambda1 > 0.0 && i > 1) {
            switch (strat.kind) {
                case StrategyKind::hifgo_full:
                    for (int j = 1; j < i; ++j) {
                        snaps.push_back(compute_gpwc(exp.spec, exp.base,
                                                     stack.prefix(j), d2, i, j,
                                                     strat.normalize_gpwc));
                    }
                    break;
                case StrategyKind::hifgo_proxy:
                    snaps.push_back(compute_gpwc(exp.spec, exp.base,
                                                 stack.prefix(i - 1), d2, i, i - 1,
                                                 strat.normalize_gpwc));
                    break;
                case StrategyKind::hist_grad_orth:
                    snaps = history_grad_snapshots(exp.spec, retained, i);
                    break;
                default:
                    break;  // param-orth references the stack directly
            }
            for (const auto& s : snaps) {
                art.snapshot_norms.push_back({i, s.source_task, s.layer_norms()});
            }
        }

        LoraAdapter ad2 = (strat.two_stage && strat.stage2_init == Stage2Init::copy)
                              ? chain
                              : init_adapter(arch, exp.lora,
                                             root.derive(100 + static_cast<std::uint64_t>(i)));

        StageObjective obj;
        obj.lambda1 = strat.reg.lambda1;
        obj.lambda2 = strat.reg.lambda2;
        obj.penalty = strat.orth_penalty;
        int sets = 0;
        if (strat.reg.lambda1 > 0.0) {
            if (strat.kind == StrategyKind::param_orth) {
                obj.param_refs = &stack;
                sets = static_cast<int>(stack.size());
            } else {
                obj.snapshots = &snaps;
                sets = static_cast<int>(snaps.size());
            }
        }
        art.accounting.sets_per_step[static_cast<std::size_t>(ti)] = sets;
        detail::train_stage(exp.spec, exp.base, &stack, ad2, d2,
                            optim.epochs_stage2, optim, obj,
                            root.derive(2).derive(i).derive(2), i, 2, &art.trace,
                            &art.accounting, sets, observer);
        art.stage2_adapters.push_back(ad2);

        stack = freeze_delta(ad2, stack);
        if (strat.kind == StrategyKind::hist_grad_orth) {
            retained.push_back({merge(exp.base, stack), d2});
        }

        const LayerMats w = merge(exp.base, stack);
        for (int j = 0; j < n; ++j) {
            art.perf.at(ti, j) = evaluate(exp.spec, w, stream.tasks[j].eval);
        }
    }

    art.stack = std::move(stack);
    art.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - start)
                      .count();
    return art;
}

}  // namespace hifgo
