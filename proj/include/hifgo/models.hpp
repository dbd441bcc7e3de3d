#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "hifgo/lora.hpp"
#include "hifgo/matrix.hpp"

namespace hifgo {

enum class ModelKind { linear_regression, linear_softmax, mlp_1h };
enum class Activation { identity, tanh };
enum class LossKind { mse, cross_entropy };

/// Small differentiable predictors. All layers are bias-free linear maps so
/// every optimized parameter is matrix-shaped, which is what the
/// inner-product machinery assumes throughout.
struct ModelSpec {
    ModelKind kind = ModelKind::linear_softmax;
    std::vector<LayerShape> layers;  // layer l maps cols -> rows
    Activation activation = Activation::tanh;
    LossKind loss = LossKind::cross_entropy;

    static ModelSpec linear_regression(std::size_t in, std::size_t out) {
        ModelSpec s;
        s.kind = ModelKind::linear_regression;
        s.layers = {{out, in}};
        s.loss = LossKind::mse;
        return s;
    }

    static ModelSpec linear_softmax(std::size_t in, std::size_t classes) {
        ModelSpec s;
        s.kind = ModelKind::linear_softmax;
        s.layers = {{classes, in}};
        s.loss = LossKind::cross_entropy;
        return s;
    }

    static ModelSpec mlp_1h(std::size_t in, std::size_t hidden, std::size_t out,
                            LossKind loss = LossKind::cross_entropy,
                            Activation act = Activation::tanh) {
        ModelSpec s;
        s.kind = ModelKind::mlp_1h;
        s.layers = {{hidden, in}, {out, hidden}};
        s.loss = loss;
        s.activation = act;
        return s;
    }

    std::size_t input_dim() const { return layers.front().cols; }
    std::size_t output_dim() const { return layers.back().rows; }

    void validate() const {
        if (layers.empty()) throw ConfigError("model has no layers");
        if (kind == ModelKind::mlp_1h && layers.size() != 2) {
            throw ConfigError("mlp-1h requires exactly two layers");
        }
        if (kind != ModelKind::mlp_1h && layers.size() != 1) {
            throw ConfigError("linear models require exactly one layer");
        }
        for (std::size_t l = 1; l < layers.size(); ++l) {
            if (layers[l].cols != layers[l - 1].rows) {
                throw ConfigError("layer " + std::to_string(l) + " input dim " +
                                  std::to_string(layers[l].cols) +
                                  " does not match previous output dim " +
                                  std::to_string(layers[l - 1].rows));
            }
        }
        if (kind == ModelKind::linear_regression && loss != LossKind::mse) {
            throw ConfigError("linear-regression pairs with mse loss");
        }
        if (kind == ModelKind::linear_softmax && loss != LossKind::cross_entropy) {
            throw ConfigError("linear-softmax pairs with cross-entropy loss");
        }
    }
};

/// A batch of samples: dense inputs plus either class labels
/// (classification) or dense targets (regression).
struct Batch {
    Matrix inputs;            // n x d_in
    Matrix targets;           // n x d_out, regression only
    std::vector<int> labels;  // classification only

    bool classification() const { return !labels.empty(); }
    std::size_t size() const { return inputs.rows(); }

    Batch select(const std::vector<std::size_t>& idx) const {
        Batch out;
        out.inputs = Matrix(idx.size(), inputs.cols());
        if (classification()) {
            out.labels.reserve(idx.size());
        } else {
            out.targets = Matrix(idx.size(), targets.cols());
        }
        for (std::size_t r = 0; r < idx.size(); ++r) {
            for (std::size_t c = 0; c < inputs.cols(); ++c) {
                out.inputs(r, c) = inputs(idx[r], c);
            }
            if (classification()) {
                out.labels.push_back(labels[idx[r]]);
            } else {
                for (std::size_t c = 0; c < targets.cols(); ++c) {
                    out.targets(r, c) = targets(idx[r], c);
                }
            }
        }
        return out;
    }
};

struct GradReport {
    double loss = 0.0;
    LayerMats weight_grads;  // per layer, same shapes as the merged weights
    LayerMats b_grads;       // factor gradients, filled by grad_wrt_factors
    LayerMats a_grads;
};

namespace detail {

inline void check_model_batch(const ModelSpec& spec, const LayerMats& weights,
                              const Batch& batch) {
    if (weights.size() != spec.layers.size()) {
        throw DimError("weight count " + std::to_string(weights.size()) +
                       " does not match layer count " +
                       std::to_string(spec.layers.size()));
    }
    for (std::size_t l = 0; l < weights.size(); ++l) {
        if (weights[l].rows() != spec.layers[l].rows ||
            weights[l].cols() != spec.layers[l].cols) {
            throw DimError("layer " + std::to_string(l) + " weights " +
                           shape_str(weights[l]) + " do not match spec " +
                           std::to_string(spec.layers[l].rows) + "x" +
                           std::to_string(spec.layers[l].cols));
        }
    }
    if (batch.size() == 0) throw InputError("empty batch");
    if (batch.inputs.cols() != spec.input_dim()) {
        throw DimError("batch input dim " + std::to_string(batch.inputs.cols()) +
                       " does not match model input dim " +
                       std::to_string(spec.input_dim()));
    }
    if (batch.classification()) {
        if (spec.loss != LossKind::cross_entropy) {
            throw InputError("labelled batch fed to a regression loss");
        }
        for (int y : batch.labels) {
            if (y < 0 || static_cast<std::size_t>(y) >= spec.output_dim()) {
                throw InputError("class label " + std::to_string(y) +
                                 " out of range for " +
                                 std::to_string(spec.output_dim()) + " classes");
            }
        }
        if (batch.labels.size() != batch.size()) {
            throw DimError("label count does not match batch size");
        }
    } else {
        if (spec.loss != LossKind::mse) {
            throw InputError("regression batch fed to a classification loss");
        }
        if (batch.targets.rows() != batch.size() ||
            batch.targets.cols() != spec.output_dim()) {
            throw DimError("target shape " + shape_str(batch.targets) +
                           " does not match n x " +
                           std::to_string(spec.output_dim()));
        }
    }
}

struct Forward {
    Matrix hpre;  // mlp pre-activation, n x hidden
    Matrix h;     // mlp activation, n x hidden
    Matrix z;     // output logits/predictions, n x out
};

inline double act_apply(Activation a, double x) {
    return a == Activation::tanh ? std::tanh(x) : x;
}

inline double act_deriv(Activation a, double pre) {
    if (a == Activation::identity) return 1.0;
    const double t = std::tanh(pre);
    return 1.0 - t * t;
}

inline Forward forward(const ModelSpec& spec, const LayerMats& weights,
                       const Matrix& inputs) {
    Forward f;
    if (spec.kind == ModelKind::mlp_1h) {
        f.hpre = matmul(inputs, transpose(weights[0]));
        f.h = f.hpre;
        for (double& v : f.h.data()) v = act_apply(spec.activation, v);
        f.z = matmul(f.h, transpose(weights[1]));
    } else {
        f.z = matmul(inputs, transpose(weights[0]));
    }
    if (!all_finite(f.z)) throw NumericError("forward pass produced non-finite outputs");
    return f;
}

/// Batch-mean loss and its gradient with respect to the outputs z.
/// mse: (1/n) sum of 0.5 |z_k - y_k|^2.  ce: -(1/n) sum of log softmax[y_k].
inline double loss_and_dz(const ModelSpec& spec, const Batch& batch,
                          const Matrix& z, Matrix* dz) {
    const std::size_t n = batch.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    double loss = 0.0;
    if (spec.loss == LossKind::mse) {
        if (dz) *dz = Matrix(z.rows(), z.cols());
        for (std::size_t i = 0; i < z.rows(); ++i) {
            for (std::size_t j = 0; j < z.cols(); ++j) {
                const double r = z(i, j) - batch.targets(i, j);
                loss += 0.5 * r * r;
                if (dz) (*dz)(i, j) = r * inv_n;
            }
        }
    } else {
        if (dz) *dz = Matrix(z.rows(), z.cols());
        for (std::size_t i = 0; i < z.rows(); ++i) {
            double zmax = z(i, 0);
            for (std::size_t j = 1; j < z.cols(); ++j) zmax = std::max(zmax, z(i, j));
            double denom = 0.0;
            for (std::size_t j = 0; j < z.cols(); ++j) denom += std::exp(z(i, j) - zmax);
            const double lse = zmax + std::log(denom);
            const int y = batch.labels[i];
            loss += lse - z(i, static_cast<std::size_t>(y));
            if (dz) {
                for (std::size_t j = 0; j < z.cols(); ++j) {
                    double p = std::exp(z(i, j) - lse);
                    (*dz)(i, j) = (p - (static_cast<int>(j) == y ? 1.0 : 0.0)) * inv_n;
                }
            }
        }
    }
    loss *= inv_n;
    if (!std::isfinite(loss)) throw NumericError("non-finite loss value");
    return loss;
}

}  // namespace detail

/// Batch-mean loss of the model at the given merged weights.
inline double forward_loss(const ModelSpec& spec, const LayerMats& weights,
                           const Batch& batch) {
    detail::check_model_batch(spec, weights, batch);
    const auto f = detail::forward(spec, weights, batch.inputs);
    return detail::loss_and_dz(spec, batch, f.z, nullptr);
}

/// Analytic batch-mean gradient with respect to the merged layer weights.
inline GradReport grad_wrt_merged(const ModelSpec& spec, const LayerMats& weights,
                                  const Batch& batch) {
    detail::check_model_batch(spec, weights, batch);
    const auto f = detail::forward(spec, weights, batch.inputs);
    Matrix dz;
    GradReport rep;
    rep.loss = detail::loss_and_dz(spec, batch, f.z, &dz);
    if (spec.kind == ModelKind::mlp_1h) {
        rep.weight_grads.resize(2);
        rep.weight_grads[1] = matmul(transpose(dz), f.h);
        Matrix dh = matmul(dz, weights[1]);
        for (std::size_t i = 0; i < dh.rows(); ++i) {
            for (std::size_t j = 0; j < dh.cols(); ++j) {
                dh(i, j) *= detail::act_deriv(spec.activation, f.hpre(i, j));
            }
        }
        rep.weight_grads[0] = matmul(transpose(dh), batch.inputs);
    } else {
        rep.weight_grads.push_back(matmul(transpose(dz), batch.inputs));
    }
    return rep;
}

/// Gradient with respect to the LoRA factors at the merged point
/// W0 + stack + scale*B*A, via the chain rule through the bilinear map:
/// dB = s * G * A^T, dA = s * B^T * G.
inline GradReport grad_wrt_factors(const ModelSpec& spec, const BaseWeights& base,
                                   const DeltaStack& stack, const LoraAdapter& ad,
                                   const Batch& batch) {
    const LayerMats w = merge(base, stack, &ad);
    GradReport rep = grad_wrt_merged(spec, w, batch);
    rep.b_grads.reserve(w.size());
    rep.a_grads.reserve(w.size());
    for (std::size_t l = 0; l < w.size(); ++l) {
        Matrix db = matmul(rep.weight_grads[l], transpose(ad.a[l]));
        db *= ad.scale;
        Matrix da = matmul(transpose(ad.b[l]), rep.weight_grads[l]);
        da *= ad.scale;
        rep.b_grads.push_back(std::move(db));
        rep.a_grads.push_back(std::move(da));
    }
    return rep;
}

/// Hessian-vector product of the batch loss at the merged weights.
/// Linear regression uses the exact closed form (1/n) v (X^T X) per layer;
/// everything else uses a central difference of the analytic gradient.
inline LayerMats hessian_vector(const ModelSpec& spec, const LayerMats& weights,
                                const Batch& batch, const LayerMats& v) {
    detail::check_model_batch(spec, weights, batch);
    if (v.size() != weights.size()) {
        throw DimError("direction count does not match layer count");
    }
    double vnorm_sq = 0.0;
    for (std::size_t l = 0; l < v.size(); ++l) {
        check_same_shape(v[l], weights[l], "hessian_vector direction");
        vnorm_sq += frobenius_inner(v[l], v[l]);
    }
    const double vnorm = std::sqrt(vnorm_sq);
    if (vnorm <= 1e-12) {
        throw InputError("hessian_vector: direction norm " + std::to_string(vnorm) +
                         " is numerically zero");
    }

    if (spec.kind == ModelKind::linear_regression) {
        const double inv_n = 1.0 / static_cast<double>(batch.size());
        Matrix gram = matmul(transpose(batch.inputs), batch.inputs);
        gram *= inv_n;
        LayerMats out;
        out.push_back(matmul(v[0], gram));
        return out;
    }

    const double h = 1e-4 / vnorm;
    LayerMats wp = weights, wm = weights;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        Matrix step = v[l];
        step *= h;
        wp[l] += step;
        wm[l] -= step;
    }
    const GradReport gp = grad_wrt_merged(spec, wp, batch);
    const GradReport gm = grad_wrt_merged(spec, wm, batch);
    LayerMats out;
    out.reserve(weights.size());
    for (std::size_t l = 0; l < weights.size(); ++l) {
        Matrix d = gp.weight_grads[l] - gm.weight_grads[l];
        d *= 1.0 / (2.0 * h);
        if (!all_finite(d)) throw NumericError("hessian_vector: non-finite intermediate");
        out.push_back(std::move(d));
    }
    return out;
}

/// Score in [0, 100]: classification accuracy, or 100*exp(-mean loss) for
/// regression so that higher is always better.
inline double evaluate(const ModelSpec& spec, const LayerMats& weights,
                       const Batch& dataset) {
    if (dataset.size() == 0) throw InputError("evaluate: empty dataset");
    detail::check_model_batch(spec, weights, dataset);
    if (!dataset.classification()) {
        return 100.0 * std::exp(-forward_loss(spec, weights, dataset));
    }
    const auto f = detail::forward(spec, weights, dataset.inputs);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < f.z.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < f.z.cols(); ++j) {
            if (f.z(i, j) > f.z(i, best)) best = j;
        }
        if (static_cast<int>(best) == dataset.labels[i]) ++correct;
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(dataset.size());
}

}  // namespace hifgo
