#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>

#include "fndclip/errors.hpp"
#include "fndclip/tensor.hpp"

namespace fndclip {

struct CrossEntropyResult {
    double loss = 0.0;
    Tensor2 dlogits;
};

/// Mean softmax cross-entropy over a batch of two-class logits.
/// dlogits = (softmax - onehot) / B.
inline CrossEntropyResult cross_entropy(const Tensor2& logits, std::span<const int> labels) {
    if (logits.cols() != 2) {
        throw DimensionError("cross_entropy expects 2 classes, got " + std::to_string(logits.cols()));
    }
    if (logits.rows() == 0 || logits.rows() != labels.size()) {
        throw DimensionError("cross_entropy: " + std::to_string(logits.rows()) + " rows vs " +
                             std::to_string(labels.size()) + " labels");
    }
    const double inv_b = 1.0 / static_cast<double>(logits.rows());
    CrossEntropyResult res{0.0, Tensor2(logits.rows(), 2)};
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        const int y = labels[r];
        if (y != 0 && y != 1) throw LabelError("label " + std::to_string(y) + " is not in {0,1}");
        const double a = logits(r, 0);
        const double b = logits(r, 1);
        const double mx = std::max(a, b);
        const double lse = mx + std::log(std::exp(a - mx) + std::exp(b - mx));
        res.loss += lse - logits(r, static_cast<std::size_t>(y));
        for (std::size_t c = 0; c < 2; ++c) {
            const double p = std::exp(logits(r, c) - lse);
            res.dlogits(r, c) = (p - (static_cast<int>(c) == y ? 1.0 : 0.0)) * inv_b;
        }
    }
    res.loss *= inv_b;
    return res;
}

} // namespace fndclip
