#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "fndclip/errors.hpp"
#include "fndclip/rng.hpp"
#include "fndclip/tensor.hpp"

namespace fndclip {

enum class Mode { train, eval };

/// A trainable tensor with its gradient accumulator and Adam moments.
struct Param {
    std::string name;
    Tensor2 value;
    Tensor2 grad;
    Tensor2 adam_m;
    Tensor2 adam_v;
    std::uint64_t step_count = 0;
    // Coupled L2 decay applies only to weight matrices, never to biases or BN affine terms.
    bool decays = true;

    Param() = default;
    Param(std::string n, Tensor2 v, bool decay = true)
        : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()),
          adam_m(value.rows(), value.cols()), adam_v(value.rows(), value.cols()), decays(decay) {}

    void zero_grad() { grad.fill(0.0); }
};

// ---------------------------------------------------------------------------
// Linear

inline Tensor2 linear_forward(const Tensor2& x, const Param& w, const Param& b) {
    if (x.cols() != w.value.rows() || b.value.rows() != 1 || b.value.cols() != w.value.cols()) {
        throw DimensionError("linear_forward: x " + detail::shape_str(x) + ", w " +
                             detail::shape_str(w.value) + ", b " + detail::shape_str(b.value));
    }
    Tensor2 out = matmul(x, w.value);
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += b.value(0, c);
    }
    return out;
}

/// Accumulates dW = xᵀ·dout and db = Σ_rows dout. Returns dx = dout·Wᵀ, or an
/// empty tensor when need_input_grad is false (first layer of a frozen input).
inline Tensor2 linear_backward(const Tensor2& x, const Tensor2& dout, Param& w, Param& b,
                               bool need_input_grad = true) {
    if (x.empty() || x.rows() != dout.rows()) {
        throw StateError("linear_backward: missing or stale forward input");
    }
    if (dout.cols() != w.value.cols() || x.cols() != w.value.rows()) {
        throw DimensionError("linear_backward: dout " + detail::shape_str(dout) + ", w " +
                             detail::shape_str(w.value));
    }
    matmul_tn_accumulate(x, dout, w.grad);
    for (std::size_t r = 0; r < dout.rows(); ++r) {
        for (std::size_t c = 0; c < dout.cols(); ++c) b.grad(0, c) += dout(r, c);
    }
    if (!need_input_grad) return {};
    return matmul_nt(dout, w.value);
}

struct Linear {
    Param weight;  // in × out
    Param bias;    // 1 × out

    /// Kaiming-uniform (fan-in, ReLU gain) weights, zero bias.
    static Linear create(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
        if (in == 0 || out == 0) throw DimensionError("linear layer '" + name + "' needs positive widths");
        const double bound = std::sqrt(6.0 / static_cast<double>(in));
        Tensor2 w(in, out);
        for (auto& v : w.data()) v = rng.uniform(-bound, bound);
        return Linear{Param(name + ".weight", std::move(w), true),
                      Param(name + ".bias", Tensor2(1, out), false)};
    }

    std::size_t in_features() const noexcept { return weight.value.rows(); }
    std::size_t out_features() const noexcept { return weight.value.cols(); }

    Tensor2 forward(const Tensor2& x) const { return linear_forward(x, weight, bias); }
    Tensor2 backward(const Tensor2& x, const Tensor2& dout, bool need_input_grad = true) {
        return linear_backward(x, dout, weight, bias, need_input_grad);
    }
};

// ---------------------------------------------------------------------------
// Batch normalization over the batch (row) axis.

struct BatchNormState {
    Param gamma;
    Param beta;
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    double epsilon = 1e-5;

    static BatchNormState create(const std::string& name, std::size_t features) {
        if (features == 0) throw DimensionError("batchnorm '" + name + "' needs a positive width");
        BatchNormState s;
        s.gamma = Param(name + ".gamma", Tensor2(1, features, 1.0), false);
        s.beta = Param(name + ".beta", Tensor2(1, features, 0.0), false);
        s.running_mean.assign(features, 0.0);
        s.running_var.assign(features, 1.0);
        return s;
    }

    std::size_t features() const noexcept { return running_mean.size(); }
};

struct BatchNormCache {
    Tensor2 xhat;
    std::vector<double> inv_std;
};

/// Normalizes with frozen running statistics.
inline Tensor2 batchnorm_forward_eval(const Tensor2& x, const BatchNormState& s) {
    const std::size_t f = s.features();
    if (x.cols() != f) throw DimensionError("batchnorm: input width " + std::to_string(x.cols()) +
                                            " vs " + std::to_string(f));
    Tensor2 out(x.rows(), f);
    for (std::size_t c = 0; c < f; ++c) {
        const double inv = 1.0 / std::sqrt(s.running_var[c] + s.epsilon);
        const double g = s.gamma.value(0, c);
        const double b = s.beta.value(0, c);
        for (std::size_t r = 0; r < x.rows(); ++r) out(r, c) = g * (x(r, c) - s.running_mean[c]) * inv + b;
    }
    return out;
}

/// Normalizes with biased batch statistics and folds the unbiased batch
/// variance into the running estimate.
inline Tensor2 batchnorm_forward_train(const Tensor2& x, BatchNormState& s, BatchNormCache& cache) {
    const std::size_t f = s.features();
    const std::size_t n = x.rows();
    if (x.cols() != f) throw DimensionError("batchnorm: input width " + std::to_string(x.cols()) +
                                            " vs " + std::to_string(f));
    if (n < 2) throw BatchSizeError("batchnorm in train mode needs at least 2 rows, got " + std::to_string(n));

    const double nd = static_cast<double>(n);
    std::vector<double> mean(f, 0.0), var(f, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < f; ++c) mean[c] += x(r, c);
    }
    for (auto& m : mean) m /= nd;
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < f; ++c) {
            const double d = x(r, c) - mean[c];
            var[c] += d * d;
        }
    }
    for (auto& v : var) v /= nd;

    cache.xhat = Tensor2(n, f);
    cache.inv_std.assign(f, 0.0);
    Tensor2 out(n, f);
    for (std::size_t c = 0; c < f; ++c) {
        cache.inv_std[c] = 1.0 / std::sqrt(var[c] + s.epsilon);
        s.running_mean[c] = (1.0 - s.momentum) * s.running_mean[c] + s.momentum * mean[c];
        s.running_var[c] = (1.0 - s.momentum) * s.running_var[c] + s.momentum * var[c] * nd / (nd - 1.0);
    }
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < f; ++c) {
            const double xh = (x(r, c) - mean[c]) * cache.inv_std[c];
            cache.xhat(r, c) = xh;
            out(r, c) = s.gamma.value(0, c) * xh + s.beta.value(0, c);
        }
    }
    return out;
}

inline Tensor2 batchnorm_forward(const Tensor2& x, BatchNormState& s, Mode mode, BatchNormCache& cache) {
    return mode == Mode::train ? batchnorm_forward_train(x, s, cache) : batchnorm_forward_eval(x, s);
}

/// Train-mode backward; accumulates dγ, dβ and returns dx.
inline Tensor2 batchnorm_backward(const BatchNormCache& cache, const Tensor2& dout, BatchNormState& s) {
    if (cache.xhat.empty() || cache.inv_std.size() != s.features()) {
        throw StateError("batchnorm_backward: no train-mode forward cache");
    }
    require_same_shape(cache.xhat, dout, "batchnorm_backward");
    const std::size_t n = dout.rows();
    const std::size_t f = dout.cols();
    const double nd = static_cast<double>(n);
    Tensor2 dx(n, f);
    for (std::size_t c = 0; c < f; ++c) {
        double sum_dy = 0.0, sum_dy_xh = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            sum_dy += dout(r, c);
            sum_dy_xh += dout(r, c) * cache.xhat(r, c);
        }
        s.gamma.grad(0, c) += sum_dy_xh;
        s.beta.grad(0, c) += sum_dy;
        const double g = s.gamma.value(0, c);
        const double k = g * cache.inv_std[c] / nd;
        for (std::size_t r = 0; r < n; ++r) {
            dx(r, c) = k * (nd * dout(r, c) - sum_dy - cache.xhat(r, c) * sum_dy_xh);
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Activations

enum class Activation { relu, gelu, sigmoid };

inline double sigmoid(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// Exact GELU, x·Φ(x).
inline double gelu(double x) noexcept { return 0.5 * x * std::erfc(-x / std::numbers::sqrt2); }

inline double gelu_derivative(double x) noexcept {
    const double cdf = 0.5 * std::erfc(-x / std::numbers::sqrt2);
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

inline double activate(double x, Activation kind) noexcept {
    switch (kind) {
    case Activation::relu: return x > 0.0 || std::isnan(x) ? x : 0.0;  // NaN passes through
    case Activation::gelu: return gelu(x);
    case Activation::sigmoid: return sigmoid(x);
    }
    return x;
}

inline Tensor2 activation_forward(const Tensor2& x, Activation kind) {
    Tensor2 out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = activate(x.data()[i], kind);
    return out;
}

/// dout ⊙ f'(x), where x is the forward input.
inline Tensor2 activation_backward(const Tensor2& x, const Tensor2& dout, Activation kind) {
    if (x.empty() && !dout.empty()) throw StateError("activation_backward: missing forward input");
    require_same_shape(x, dout, "activation_backward");
    Tensor2 dx(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x.data()[i];
        double d = 0.0;
        switch (kind) {
        case Activation::relu: d = v > 0.0 ? 1.0 : 0.0; break;
        case Activation::gelu: d = gelu_derivative(v); break;
        case Activation::sigmoid: {
            const double s = sigmoid(v);
            d = s * (1.0 - s);
            break;
        }
        }
        dx.data()[i] = dout.data()[i] * d;
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Inverted dropout. The mask stores the per-entry scale (0 or 1/(1-rate)).

struct DropoutResult {
    Tensor2 out;
    Tensor2 mask;
};

inline void validate_dropout_rate(double rate) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    }
}

inline DropoutResult dropout_forward(const Tensor2& x, double rate, Rng& rng, Mode mode) {
    validate_dropout_rate(rate);
    if (mode == Mode::eval || rate == 0.0) return {x, Tensor2(x.rows(), x.cols(), 1.0)};
    const double scale = 1.0 / (1.0 - rate);
    DropoutResult res{Tensor2(x.rows(), x.cols()), Tensor2(x.rows(), x.cols())};
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double m = rng.uniform() < rate ? 0.0 : scale;
        res.mask.data()[i] = m;
        res.out.data()[i] = x.data()[i] * m;
    }
    return res;
}

inline Tensor2 dropout_backward(const Tensor2& mask, const Tensor2& dout) {
    if (mask.empty() && !dout.empty()) throw StateError("dropout_backward: missing mask");
    return hadamard(dout, mask);
}

} // namespace fndclip
