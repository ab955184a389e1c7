#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "fndclip/fndclip.hpp"
#include "reference_forward.hpp"

namespace testing_support {

using namespace fndclip;

inline CorpusDims tiny_dims() { return {6, 8, 5}; }

inline FusionConfig tiny_config(Variant v, std::uint64_t seed = 1, double dropout = 0.3) {
    FusionConfig c;
    c.dims = tiny_dims();
    c.proj_hidden = 8;
    c.proj_out = 4;
    c.cls_hidden = 5;
    c.dropout_rate = dropout;
    c.variant = v;
    c.seed = seed;
    return c;
}

/// Gaussian records from std::mt19937_64, independent of the library generator.
inline std::vector<EmbeddingRecord> random_records(const CorpusDims& d, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto vec = [&](std::size_t k) {
        std::vector<float> v(k);
        for (auto& x : v) x = static_cast<float>(normal(gen));
        return v;
    };
    std::vector<EmbeddingRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        EmbeddingRecord r;
        r.id = "r" + std::to_string(i);
        r.label = static_cast<int>(i % 2);
        r.f_bert = vec(d.n_bert);
        r.f_resnet = vec(d.n_resnet);
        r.f_clip_t = vec(d.n_clip);
        r.f_clip_i = vec(d.n_clip);
        out.push_back(std::move(r));
    }
    return out;
}

inline ref::Vec widen(const std::vector<float>& v) { return {v.begin(), v.end()}; }

inline ref::Sample ref_sample(const EmbeddingRecord& r) {
    return {widen(r.f_bert), widen(r.f_resnet), widen(r.f_clip_t), widen(r.f_clip_i)};
}

/// Reads every parameter and running statistic out of a model by name.
inline ref::Params ref_params(FusionModel& m) {
    ref::Params p;
    for (const Param* q : m.parameters()) p[q->name] = q->value.data();
    for (const auto& b : m.buffers()) p[b.name] = {b.values.begin(), b.values.end()};
    return p;
}

inline ref::Frozen ref_frozen(const FusionModel& m) {
    ref::Frozen f;
    f.gate_mean = m.gate.running_mean;
    f.gate_var = m.gate.running_var;
    f.gate_eps = m.gate.epsilon;
    f.bn_eps = m.config().bn_epsilon;
    f.gate_enabled = m.gate_active();
    return f;
}

/// Runs a few train-mode passes so BN and gate statistics move off their
/// initial values, and perturbs every parameter.
inline void scramble(FusionModel& m, const Batch& b, std::uint64_t seed) {
    Rng rng(seed);
    for (int k = 0; k < 3; ++k) m.forward_train(b, rng);
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> normal(0.0, 0.3);
    for (Param* p : m.parameters()) {
        for (auto& v : p->value.data()) v += normal(gen);
    }
}

struct GradCheck {
    std::size_t checked = 0;
    std::size_t failed = 0;
    double worst_rel = 0.0;
    std::string worst_name;
};

inline bool grad_close(double analytic, double numeric, double rel_tol, double abs_tol) {
    const double diff = std::abs(analytic - numeric);
    if (std::abs(analytic) < 1e-6) return diff <= abs_tol;
    return diff / std::max(std::abs(analytic), std::abs(numeric)) <= rel_tol;
}

/// Central differences of the train-mode loss against backward, for every
/// scalar of every parameter. Each evaluation starts from a fresh copy of the
/// model and a freshly seeded Rng, so dropout masks and running-stat updates
/// are identical across evaluations.
inline GradCheck check_model_gradients(const FusionModel& base, const Batch& batch, std::uint64_t dropout_seed,
                                       double h = 1e-5, double rel_tol = 1e-4, double abs_tol = 1e-7) {
    auto loss_of = [&](FusionModel& m) {
        Rng rng(dropout_seed);
        const auto t = m.forward_train(batch, rng);
        return cross_entropy(t.logits, batch.labels).loss;
    };

    FusionModel analytic = base;
    {
        Rng rng(dropout_seed);
        analytic.zero_grad();
        const auto t = analytic.forward_train(batch, rng);
        const auto ce = cross_entropy(t.logits, batch.labels);
        analytic.backward(t, ce.dlogits);
    }

    GradCheck out;
    const auto names = [&] {
        std::vector<std::string> n;
        for (const Param* p : analytic.parameters()) n.push_back(p->name);
        return n;
    }();
    for (const auto& name : names) {
        const Param* ap = analytic.find_parameter(name);
        for (std::size_t i = 0; i < ap->value.size(); ++i) {
            FusionModel plus = base, minus = base;
            plus.find_parameter(name)->value.data()[i] += h;
            minus.find_parameter(name)->value.data()[i] -= h;
            const double numeric = (loss_of(plus) - loss_of(minus)) / (2.0 * h);
            const double a = ap->grad.data()[i];
            ++out.checked;
            if (!grad_close(a, numeric, rel_tol, abs_tol)) ++out.failed;
            if (std::abs(a) >= 1e-6) {
                const double rel = std::abs(a - numeric) / std::max(std::abs(a), std::abs(numeric));
                if (rel > out.worst_rel) {
                    out.worst_rel = rel;
                    out.worst_name = name + "[" + std::to_string(i) + "]";
                }
            }
        }
    }
    return out;
}

/// Unique scratch directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("fndclip-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

} // namespace testing_support
