#pragma once

// Plain re-evaluation of the eval-mode network from a name -> values map.
// Deliberately self-contained: nothing from the library is included here.

#include <array>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace ref {

using Vec = std::vector<double>;
using Params = std::map<std::string, Vec>;

struct Sample {
    Vec bert, resnet, clip_t, clip_i;
};

struct Frozen {
    double gate_mean = 0.0;
    double gate_var = 1.0;
    double gate_eps = 1e-5;
    double bn_eps = 1e-5;
    bool gate_enabled = true;
};

inline const Vec& at(const Params& p, const std::string& name) {
    auto it = p.find(name);
    if (it == p.end()) throw std::runtime_error("reference: missing parameter " + name);
    return it->second;
}

// weight is stored in-major: w[i * out + j]
inline Vec affine(const Params& p, const std::string& name, const Vec& x) {
    const Vec& w = at(p, name + ".weight");
    const Vec& b = at(p, name + ".bias");
    const std::size_t out = b.size();
    if (w.size() != x.size() * out) throw std::runtime_error("reference: shape mismatch at " + name);
    Vec y(out);
    for (std::size_t j = 0; j < out; ++j) {
        double acc = b[j];
        for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * w[i * out + j];
        y[j] = acc;
    }
    return y;
}

inline Vec frozen_bn(const Params& p, const std::string& name, const Vec& x, double eps) {
    const Vec& g = at(p, name + ".gamma");
    const Vec& b = at(p, name + ".beta");
    const Vec& mu = at(p, name + ".running_mean");
    const Vec& var = at(p, name + ".running_var");
    Vec y(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) y[k] = g[k] * (x[k] - mu[k]) / std::sqrt(var[k] + eps) + b[k];
    return y;
}

inline Vec relu(Vec x) {
    for (auto& v : x) v = v > 0.0 ? v : 0.0;
    return x;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Vec head(const Params& p, const std::string& name, const Vec& x, double eps) {
    Vec a = relu(frozen_bn(p, name + ".bn1", affine(p, name + ".fc1", x), eps));
    return relu(frozen_bn(p, name + ".bn2", affine(p, name + ".fc2", a), eps));
}

inline Vec cat(const Vec& a, const Vec& b) {
    Vec out = a;
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

inline double cosine(const Vec& a, const Vec& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        dot += a[k] * b[k];
        na += a[k] * a[k];
        nb += b[k] * b[k];
    }
    double c = dot / (std::sqrt(na) * std::sqrt(nb));
    if (c > 1.0) c = 1.0;
    if (c < -1.0) c = -1.0;
    return c;
}

/// Attention weights for stacked branch vectors ms (K of them).
inline Vec attention(const Params& p, const std::vector<Vec>& ms) {
    Vec s(ms.size());
    for (std::size_t k = 0; k < ms.size(); ++k) {
        double sum = 0.0, mx = ms[k][0];
        for (double v : ms[k]) {
            sum += v;
            if (v > mx) mx = v;
        }
        s[k] = sum / static_cast<double>(ms[k].size()) + mx;
    }
    Vec h = affine(p, "attention.fc1", s);
    for (auto& v : h) v = gelu(v);
    Vec z = affine(p, "attention.fc2", h);
    for (auto& v : z) v = logistic(v);
    return z;
}

struct Result {
    std::array<double, 2> logits{};
    Vec att;
    double gate = -1.0;
};

inline Result forward(const Params& p, const std::string& variant, const Sample& x, const Frozen& f) {
    const bool unimodal_clip = variant == "full" || variant == "no_attention" || variant == "no_fusion";
    std::vector<Vec> ms;
    Result r;

    if (variant != "multimodal_only" && variant != "image_only") {
        const Vec in = unimodal_clip ? cat(x.bert, x.clip_t) : x.bert;
        ms.push_back(head(p, "text_proj", in, f.bn_eps));
    }
    if (variant != "multimodal_only" && variant != "text_only") {
        const Vec in = unimodal_clip ? cat(x.resnet, x.clip_i) : x.resnet;
        ms.push_back(head(p, "image_proj", in, f.bn_eps));
    }
    if (variant == "full" || variant == "no_attention" || variant == "multimodal_only") {
        Vec m = head(p, "fused_proj", cat(x.clip_t, x.clip_i), f.bn_eps);
        if (f.gate_enabled) {
            const double z = (cosine(x.clip_t, x.clip_i) - f.gate_mean) / std::sqrt(f.gate_var + f.gate_eps);
            r.gate = logistic(z);
            for (auto& v : m) v *= r.gate;
        }
        ms.push_back(m);
    }

    Vec agg(ms[0].size(), 0.0);
    const bool weighted = ms.size() > 1 && variant != "no_attention";
    if (weighted) r.att = attention(p, ms);
    for (std::size_t k = 0; k < ms.size(); ++k) {
        const double a = weighted ? r.att[k] : 1.0;
        for (std::size_t l = 0; l < agg.size(); ++l) agg[l] += a * ms[k][l];
    }

    const Vec h = relu(affine(p, "classifier.fc1", agg));
    const Vec out = affine(p, "classifier.fc2", h);
    r.logits = {out[0], out[1]};
    return r;
}

} // namespace ref
