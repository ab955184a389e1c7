#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fndclip/config.hpp"
#include "fndclip/corpus.hpp"
#include "fndclip/errors.hpp"
#include "fndclip/layers.hpp"
#include "fndclip/rng.hpp"
#include "fndclip/tensor.hpp"

namespace fndclip {

/// The three modality branches. Index order is also the attention column order.
enum class Branch : std::size_t { text = 0, image = 1, fused = 2 };

inline constexpr std::size_t kMaxBranches = 3;

inline std::string_view branch_name(Branch b) {
    switch (b) {
    case Branch::text: return "text";
    case Branch::image: return "image";
    case Branch::fused: return "fused";
    }
    return "?";
}

inline constexpr std::size_t index_of(Branch b) noexcept { return static_cast<std::size_t>(b); }

// ---------------------------------------------------------------------------
// Variant layout

struct VariantLayout {
    std::vector<Branch> branches;
    bool unimodal_clip = false;  // unimodal branches carry the CLIP embedding too
    bool attention = false;
    bool uses_clip = false;      // cosine similarity is defined for this variant
};

inline VariantLayout layout_of(Variant v) {
    switch (v) {
    case Variant::full: return {{Branch::text, Branch::image, Branch::fused}, true, true, true};
    case Variant::no_attention: return {{Branch::text, Branch::image, Branch::fused}, true, false, true};
    case Variant::no_fusion: return {{Branch::text, Branch::image}, true, true, true};
    case Variant::no_clip: return {{Branch::text, Branch::image}, false, true, false};
    case Variant::multimodal_only: return {{Branch::fused}, false, false, true};
    case Variant::text_only: return {{Branch::text}, false, false, false};
    case Variant::image_only: return {{Branch::image}, false, false, false};
    }
    throw ConfigError("unknown variant");
}

inline bool has_branch(const VariantLayout& l, Branch b) {
    return std::find(l.branches.begin(), l.branches.end(), b) != l.branches.end();
}

inline std::size_t branch_input_width(const FusionConfig& c, Branch b) {
    const auto l = layout_of(c.variant);
    const std::size_t clip = l.unimodal_clip ? c.dims.n_clip : 0;
    switch (b) {
    case Branch::text: return c.dims.n_bert + clip;
    case Branch::image: return c.dims.n_resnet + clip;
    case Branch::fused: return 2ull * c.dims.n_clip;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// Feature concatenation and similarity

/// Per-branch input vectors. A branch the variant does not use stays empty.
struct BranchFeatures {
    std::optional<std::vector<double>> f_txt;
    std::optional<std::vector<double>> f_img;
    std::optional<std::vector<double>> f_mix;
};

inline void check_record_dims(const EmbeddingRecord& r, const CorpusDims& d) {
    if (r.f_bert.size() != d.n_bert || r.f_resnet.size() != d.n_resnet || r.f_clip_t.size() != d.n_clip ||
        r.f_clip_i.size() != d.n_clip) {
        throw DimensionError("record '" + r.id + "' does not match model dims (" + std::to_string(d.n_bert) +
                             ", " + std::to_string(d.n_resnet) + ", " + std::to_string(d.n_clip) + ")");
    }
}

/// f_Txt = [f_bert ∥ f_clip_t], f_Img = [f_resnet ∥ f_clip_i], f_Mix = [f_clip_t ∥ f_clip_i],
/// reduced per variant.
inline BranchFeatures concat_features(const EmbeddingRecord& r, const FusionConfig& c) {
    check_record_dims(r, c.dims);
    const auto l = layout_of(c.variant);
    auto join = [](std::initializer_list<const std::vector<float>*> parts) {
        std::vector<double> v;
        for (const auto* p : parts) v.insert(v.end(), p->begin(), p->end());
        return v;
    };
    BranchFeatures f;
    if (has_branch(l, Branch::text)) {
        f.f_txt = l.unimodal_clip ? join({&r.f_bert, &r.f_clip_t}) : join({&r.f_bert});
    }
    if (has_branch(l, Branch::image)) {
        f.f_img = l.unimodal_clip ? join({&r.f_resnet, &r.f_clip_i}) : join({&r.f_resnet});
    }
    if (has_branch(l, Branch::fused)) f.f_mix = join({&r.f_clip_t, &r.f_clip_i});
    return f;
}

/// dot(t, i) / (‖t‖·‖i‖), clamped to [-1, 1].
template <typename T>
double cosine_similarity(std::span<const T> t, std::span<const T> i) {
    if (t.size() != i.size()) throw DimensionError("cosine_similarity: length mismatch");
    double dot = 0.0, nt = 0.0, ni = 0.0;
    for (std::size_t k = 0; k < t.size(); ++k) {
        const double a = static_cast<double>(t[k]);
        const double b = static_cast<double>(i[k]);
        dot += a * b;
        nt += a * a;
        ni += b * b;
    }
    if (nt == 0.0 || ni == 0.0) throw SimilarityError("cosine_similarity: zero vector");
    return std::clamp(dot / (std::sqrt(nt) * std::sqrt(ni)), -1.0, 1.0);
}

inline double cosine_similarity(const std::vector<float>& t, const std::vector<float>& i) {
    return cosine_similarity<float>(std::span<const float>(t), std::span<const float>(i));
}
inline double cosine_similarity(const std::vector<double>& t, const std::vector<double>& i) {
    return cosine_similarity<double>(std::span<const double>(t), std::span<const double>(i));
}

// ---------------------------------------------------------------------------
// Similarity gate: sigmoid of the running-standardized similarity.

struct GateState {
    double running_mean = 0.0;
    double running_var = 1.0;
    double momentum = 0.1;
    double epsilon = 1e-5;
};

inline double standardize(double sim, const GateState& s) {
    return (sim - s.running_mean) / std::sqrt(std::max(s.running_var, 0.0) + s.epsilon);
}

/// Gate value under frozen statistics.
inline double gate_value(double sim, const GateState& s) { return sigmoid(standardize(sim, s)); }

/// Train mode first folds the batch mean and unbiased variance of `sims` into
/// the running statistics, then standardizes with them. Eval mode never
/// touches the state.
inline std::vector<double> gate_forward(std::span<const double> sims, GateState& s, Mode mode) {
    if (mode == Mode::train) {
        const std::size_t n = sims.size();
        if (n < 2) throw BatchSizeError("gate in train mode needs at least 2 samples");
        double mean = 0.0;
        for (double x : sims) mean += x;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double x : sims) var += (x - mean) * (x - mean);
        var /= static_cast<double>(n - 1);
        s.running_mean = (1.0 - s.momentum) * s.running_mean + s.momentum * mean;
        s.running_var = (1.0 - s.momentum) * s.running_var + s.momentum * var;
    }
    std::vector<double> g(sims.size());
    for (std::size_t k = 0; k < sims.size(); ++k) g[k] = gate_value(sims[k], s);
    return g;
}

// ---------------------------------------------------------------------------
// Projection head: (Linear → BN → ReLU → Dropout) × 2

struct ProjectionHead {
    Linear fc1;
    BatchNormState bn1;
    Linear fc2;
    BatchNormState bn2;

    struct Cache {
        Tensor2 x, n1, mask1, d1, n2, mask2;
        BatchNormCache bc1, bc2;
    };

    static ProjectionHead create(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
                                 const FusionConfig& c, Rng& rng) {
        ProjectionHead h;
        h.fc1 = Linear::create(name + ".fc1", in, hidden, rng);
        h.bn1 = BatchNormState::create(name + ".bn1", hidden);
        h.fc2 = Linear::create(name + ".fc2", hidden, out, rng);
        h.bn2 = BatchNormState::create(name + ".bn2", out);
        for (auto* bn : {&h.bn1, &h.bn2}) {
            bn->momentum = c.bn_momentum;
            bn->epsilon = c.bn_epsilon;
        }
        return h;
    }

    Tensor2 forward_eval(const Tensor2& x) const {
        Tensor2 a = activation_forward(batchnorm_forward_eval(fc1.forward(x), bn1), Activation::relu);
        return activation_forward(batchnorm_forward_eval(fc2.forward(a), bn2), Activation::relu);
    }

    Tensor2 forward_train(const Tensor2& x, double rate, Rng& rng, Cache& c) {
        c.x = x;
        c.n1 = batchnorm_forward_train(fc1.forward(x), bn1, c.bc1);
        auto d1 = dropout_forward(activation_forward(c.n1, Activation::relu), rate, rng, Mode::train);
        c.mask1 = std::move(d1.mask);
        c.d1 = std::move(d1.out);
        c.n2 = batchnorm_forward_train(fc2.forward(c.d1), bn2, c.bc2);
        auto d2 = dropout_forward(activation_forward(c.n2, Activation::relu), rate, rng, Mode::train);
        c.mask2 = std::move(d2.mask);
        return std::move(d2.out);
    }

    /// Parameter gradients only; the head input is a frozen embedding.
    void backward(const Cache& c, const Tensor2& dout) {
        Tensor2 g = activation_backward(c.n2, dropout_backward(c.mask2, dout), Activation::relu);
        g = fc2.backward(c.d1, batchnorm_backward(c.bc2, g, bn2));
        g = activation_backward(c.n1, dropout_backward(c.mask1, g), Activation::relu);
        fc1.backward(c.x, batchnorm_backward(c.bc1, g, bn1), false);
    }

    void collect(std::vector<Param*>& out) {
        for (Param* p : {&fc1.weight, &fc1.bias, &bn1.gamma, &bn1.beta, &fc2.weight, &fc2.bias, &bn2.gamma,
                         &bn2.beta}) {
            out.push_back(p);
        }
    }
};

// ---------------------------------------------------------------------------
// Modality-wise attention over K stacked L-vectors.
//   s_k = mean_l m_k + max_l m_k;  att = sigmoid(FC2(GELU(FC1(s))))
// Each weight lies in (0,1) independently; they are not normalized to sum to 1.

struct ModalityAttention {
    Linear fc1;  // K × K
    Linear fc2;  // K × K

    struct Cache {
        Tensor2 pooled;                 // B × K
        std::vector<std::size_t> argmax;  // B·K, index of the max along L
        Tensor2 h1;                     // FC1 output
        Tensor2 g1;                     // GELU(h1)
        Tensor2 att;                    // B × K
    };

    static ModalityAttention create(std::size_t k, Rng& rng) {
        return {Linear::create("attention.fc1", k, k, rng), Linear::create("attention.fc2", k, k, rng)};
    }

    std::size_t width() const noexcept { return fc1.in_features(); }

    /// Squeeze: per-sample average + max over the L axis of each branch.
    static Tensor2 squeeze(std::span<const Tensor2* const> branches, std::vector<std::size_t>* argmax) {
        const std::size_t k = branches.size();
        const std::size_t b = branches.front()->rows();
        Tensor2 s(b, k);
        if (argmax) argmax->assign(b * k, 0);
        for (std::size_t j = 0; j < k; ++j) {
            const Tensor2& m = *branches[j];
            const double inv_l = 1.0 / static_cast<double>(m.cols());
            for (std::size_t r = 0; r < b; ++r) {
                const auto row = m.row(r);
                double sum = 0.0;
                std::size_t best = 0;
                for (std::size_t l = 0; l < row.size(); ++l) {
                    sum += row[l];
                    if (row[l] > row[best]) best = l;
                }
                s(r, j) = sum * inv_l + row[best];
                if (argmax) (*argmax)[r * k + j] = best;
            }
        }
        return s;
    }

    Cache forward(std::span<const Tensor2* const> branches) const {
        if (branches.size() != width()) throw DimensionError("attention: branch count vs FC width");
        Cache c;
        c.pooled = squeeze(branches, &c.argmax);
        c.h1 = fc1.forward(c.pooled);
        c.g1 = activation_forward(c.h1, Activation::gelu);
        c.att = activation_forward(fc2.forward(c.g1), Activation::sigmoid);
        return c;
    }

    /// datt (B × K) → accumulates FC grads, adds the pooling gradient into dm.
    void backward(const Cache& c, const Tensor2& datt, std::span<const Tensor2* const> branches,
                  std::span<Tensor2* const> dm) {
        if (c.att.empty()) throw StateError("attention backward: missing forward cache");
        Tensor2 dz(datt.rows(), datt.cols());
        for (std::size_t i = 0; i < dz.size(); ++i) {
            const double a = c.att.data()[i];
            dz.data()[i] = datt.data()[i] * a * (1.0 - a);
        }
        Tensor2 dg = fc2.backward(c.g1, dz);
        Tensor2 ds = fc1.backward(c.pooled, activation_backward(c.h1, dg, Activation::gelu));
        const std::size_t k = branches.size();
        for (std::size_t j = 0; j < k; ++j) {
            const double inv_l = 1.0 / static_cast<double>(branches[j]->cols());
            Tensor2& d = *dm[j];
            for (std::size_t r = 0; r < d.rows(); ++r) {
                const double g = ds(r, j);
                auto row = d.row(r);
                for (auto& v : row) v += g * inv_l;
                row[c.argmax[r * k + j]] += g;
            }
        }
    }
};

/// m_Agg = Σ_k att_k · m_k, or the plain sum when `att` is null.
inline Tensor2 aggregate(std::span<const Tensor2* const> ms, const Tensor2* att) {
    if (ms.empty()) throw DimensionError("aggregate: no branches");
    const std::size_t b = ms.front()->rows(), l = ms.front()->cols();
    for (const Tensor2* m : ms) {
        if (m->rows() != b || m->cols() != l) throw DimensionError("aggregate: branch shapes differ");
    }
    if (att && (att->rows() != b || att->cols() != ms.size())) throw DimensionError("aggregate: attention shape");
    Tensor2 out(b, l);
    for (std::size_t j = 0; j < ms.size(); ++j) {
        for (std::size_t r = 0; r < b; ++r) {
            const double a = att ? (*att)(r, j) : 1.0;
            const auto src = ms[j]->row(r);
            auto dst = out.row(r);
            for (std::size_t k = 0; k < l; ++k) dst[k] += a * src[k];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Classifier: Linear(L → hidden) → ReLU → Linear(hidden → 2)

struct Classifier {
    Linear fc1;
    Linear fc2;

    struct Cache {
        Tensor2 x, h;
    };

    Tensor2 forward(const Tensor2& x, Cache* cache) const {
        Tensor2 h = fc1.forward(x);
        Tensor2 out = fc2.forward(activation_forward(h, Activation::relu));
        if (cache) {
            cache->x = x;
            cache->h = std::move(h);
        }
        return out;
    }

    Tensor2 backward(const Cache& c, const Tensor2& dlogits) {
        Tensor2 dr = fc2.backward(activation_forward(c.h, Activation::relu), dlogits);
        return fc1.backward(c.x, activation_backward(c.h, dr, Activation::relu));
    }
};

// ---------------------------------------------------------------------------
// Batches and traces

/// Model-ready inputs for a batch of records, widened to 64-bit.
struct Batch {
    std::vector<std::string> ids;
    std::vector<int> labels;
    std::array<Tensor2, kMaxBranches> inputs;  // indexed by Branch; empty if unused
    std::vector<double> sims;                  // CLIP cosine per sample when the variant uses CLIP

    std::size_t size() const noexcept { return labels.size(); }
};

inline Batch assemble_batch(const FusionConfig& config, std::span<const EmbeddingRecord> records,
                            std::span<const std::size_t> indices) {
    const auto l = layout_of(config.variant);
    Batch b;
    const std::size_t n = indices.size();
    b.ids.reserve(n);
    b.labels.reserve(n);
    for (Branch br : l.branches) b.inputs[index_of(br)] = Tensor2(n, branch_input_width(config, br));
    if (l.uses_clip) b.sims.reserve(n);
    for (std::size_t row = 0; row < n; ++row) {
        const auto& r = records[indices[row]];
        const auto f = concat_features(r, config);
        b.ids.push_back(r.id);
        b.labels.push_back(r.label);
        auto put = [&](Branch br, const std::optional<std::vector<double>>& v) {
            if (v) std::copy(v->begin(), v->end(), b.inputs[index_of(br)].row(row).begin());
        };
        put(Branch::text, f.f_txt);
        put(Branch::image, f.f_img);
        put(Branch::fused, f.f_mix);
        if (l.uses_clip) b.sims.push_back(cosine_similarity(r.f_clip_t, r.f_clip_i));
    }
    return b;
}

inline Batch assemble_batch(const FusionConfig& config, std::span<const EmbeddingRecord> records) {
    std::vector<std::size_t> idx(records.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return assemble_batch(config, records, idx);
}

/// Intermediate values of one forward pass, plus the caches backward needs.
/// Attention columns follow `branches`.
struct ForwardTrace {
    Mode mode = Mode::eval;
    std::vector<Branch> branches;
    std::vector<double> sim;    // empty when the variant has no CLIP input
    std::vector<double> gate;   // empty when the gate is inactive
    std::array<Tensor2, kMaxBranches> projected;  // m_Txt, m_Img, m_Mix (after gate)
    Tensor2 att;         // empty without attention
    Tensor2 aggregated;  // m_Agg
    Tensor2 logits;

    struct Caches {
        std::array<ProjectionHead::Cache, kMaxBranches> heads;
        std::array<Tensor2, kMaxBranches> pre_gate;
        ModalityAttention::Cache attention;
        Classifier::Cache classifier;
    } cache;

    std::size_t batch_size() const noexcept { return logits.rows(); }

    std::optional<std::size_t> column_of(Branch b) const {
        for (std::size_t k = 0; k < branches.size(); ++k) {
            if (branches[k] == b) return k;
        }
        return std::nullopt;
    }

    std::optional<double> attention(std::size_t sample, Branch b) const {
        if (att.empty()) return std::nullopt;
        const auto k = column_of(b);
        if (!k) return std::nullopt;
        return att(sample, *k);
    }

    int predicted(std::size_t sample) const { return logits(sample, 1) > logits(sample, 0) ? 1 : 0; }
};

// ---------------------------------------------------------------------------
// The fusion network

/// Stable name for a non-trainable running statistic.
struct BufferRef {
    std::string name;
    std::span<double> values;
};

class FusionModel {
public:
    FusionModel() = default;

    /// Allocates exactly the layers the variant needs. Initialization is
    /// seeded from config.seed: Kaiming-uniform weights, zero biases, BN γ=1/β=0.
    explicit FusionModel(const FusionConfig& config) : config_(normalized(config)), layout_(layout_of(config_.variant)) {
        Rng rng(config_.seed);
        for (Branch b : layout_.branches) {
            heads_[index_of(b)] = ProjectionHead::create(std::string(branch_name(b)) + "_proj",
                                                         branch_input_width(config_, b), config_.proj_hidden,
                                                         config_.proj_out, config_, rng);
        }
        if (layout_.attention) attention_ = ModalityAttention::create(layout_.branches.size(), rng);
        classifier_.fc1 = Linear::create("classifier.fc1", config_.proj_out, config_.cls_hidden, rng);
        classifier_.fc2 = Linear::create("classifier.fc2", config_.cls_hidden, config_.cls_out, rng);
        gate.momentum = config_.gate_momentum;
        gate.epsilon = config_.gate_epsilon;
    }

    const FusionConfig& config() const noexcept { return config_; }
    const VariantLayout& layout() const noexcept { return layout_; }
    bool gate_active() const noexcept { return config_.gate_enabled && has_branch(layout_, Branch::fused); }

    GateState gate;

    const std::optional<ProjectionHead>& head(Branch b) const { return heads_[index_of(b)]; }
    std::optional<ProjectionHead>& head(Branch b) { return heads_[index_of(b)]; }
    const std::optional<ModalityAttention>& attention() const { return attention_; }
    std::optional<ModalityAttention>& attention() { return attention_; }
    const Classifier& classifier() const { return classifier_; }
    Classifier& classifier() { return classifier_; }

    /// All trainable tensors in a stable order.
    std::vector<Param*> parameters() {
        std::vector<Param*> out;
        for (Branch b : layout_.branches) heads_[index_of(b)]->collect(out);
        if (attention_) {
            for (Param* p : {&attention_->fc1.weight, &attention_->fc1.bias, &attention_->fc2.weight,
                             &attention_->fc2.bias}) {
                out.push_back(p);
            }
        }
        for (Param* p : {&classifier_.fc1.weight, &classifier_.fc1.bias, &classifier_.fc2.weight,
                         &classifier_.fc2.bias}) {
            out.push_back(p);
        }
        return out;
    }

    std::vector<const Param*> parameters() const {
        auto ps = const_cast<FusionModel*>(this)->parameters();
        return {ps.begin(), ps.end()};
    }

    /// Running statistics of every BN layer and of the gate.
    std::vector<BufferRef> buffers() {
        std::vector<BufferRef> out;
        for (Branch b : layout_.branches) {
            auto& h = *heads_[index_of(b)];
            const std::string base = std::string(branch_name(b)) + "_proj";
            out.push_back({base + ".bn1.running_mean", h.bn1.running_mean});
            out.push_back({base + ".bn1.running_var", h.bn1.running_var});
            out.push_back({base + ".bn2.running_mean", h.bn2.running_mean});
            out.push_back({base + ".bn2.running_var", h.bn2.running_var});
        }
        if (gate_active()) {
            out.push_back({"gate.running_mean", std::span<double>(&gate.running_mean, 1)});
            out.push_back({"gate.running_var", std::span<double>(&gate.running_var, 1)});
        }
        return out;
    }

    Param* find_parameter(std::string_view name) {
        for (Param* p : parameters()) {
            if (p->name == name) return p;
        }
        return nullptr;
    }

    void zero_grad() {
        for (Param* p : parameters()) p->zero_grad();
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const Param* p : parameters()) n += p->value.size();
        return n;
    }

    /// Train-mode forward: batch statistics in BN, running-stat updates in BN
    /// and the gate, dropout drawn from `rng`.
    ForwardTrace forward_train(const Batch& batch, Rng& rng) { return run(batch, Mode::train, &rng); }

    /// Eval-mode forward: frozen statistics, no dropout, no state change.
    ForwardTrace forward_eval(const Batch& batch) const {
        return const_cast<FusionModel*>(this)->run(batch, Mode::eval, nullptr);
    }

    ForwardTrace forward(const Batch& batch, Mode mode, Rng* rng = nullptr) {
        if (mode == Mode::train && !rng) throw StateError("train-mode forward needs an Rng");
        return run(batch, mode, rng);
    }

    /// Accumulates parameter gradients of the loss whose logit gradient is
    /// `dlogits`, for a trace produced by forward_train.
    void backward(const ForwardTrace& t, const Tensor2& dlogits) {
        if (t.mode != Mode::train || t.cache.classifier.x.empty()) {
            throw StateError("backward needs a train-mode forward trace");
        }
        require_same_shape(t.logits, dlogits, "backward: dlogits");
        const Tensor2 dagg = classifier_.backward(t.cache.classifier, dlogits);

        std::array<Tensor2, kMaxBranches> dm;
        const auto& br = layout_.branches;
        if (br.size() == 1) {
            dm[index_of(br[0])] = dagg;
        } else if (!attention_) {
            for (Branch b : br) dm[index_of(b)] = dagg;
        } else {
            const std::size_t k = br.size();
            Tensor2 datt(dagg.rows(), k);
            std::vector<const Tensor2*> ms;
            std::vector<Tensor2*> dms;
            for (std::size_t j = 0; j < k; ++j) {
                const Tensor2& m = t.projected[index_of(br[j])];
                Tensor2& d = dm[index_of(br[j])];
                d = Tensor2(m.rows(), m.cols());
                for (std::size_t r = 0; r < m.rows(); ++r) {
                    const double a = t.att(r, j);
                    double dot = 0.0;
                    for (std::size_t l = 0; l < m.cols(); ++l) {
                        d(r, l) = a * dagg(r, l);
                        dot += dagg(r, l) * m(r, l);
                    }
                    datt(r, j) = dot;
                }
                ms.push_back(&m);
                dms.push_back(&d);
            }
            attention_->backward(t.cache.attention, datt, ms, dms);
        }

        for (Branch b : br) {
            Tensor2& d = dm[index_of(b)];
            if (b == Branch::fused && gate_active()) scale_rows(d, t.gate);
            heads_[index_of(b)]->backward(t.cache.heads[index_of(b)], d);
        }
    }

private:
    static void scale_rows(Tensor2& m, std::span<const double> s) {
        for (std::size_t r = 0; r < m.rows(); ++r) {
            for (auto& v : m.row(r)) v *= s[r];
        }
    }

    void check_batch(const Batch& batch) const {
        for (Branch b : layout_.branches) {
            const Tensor2& x = batch.inputs[index_of(b)];
            if (x.rows() != batch.size() || x.cols() != branch_input_width(config_, b)) {
                throw DimensionError("batch input for branch '" + std::string(branch_name(b)) +
                                     "' has shape " + detail::shape_str(x));
            }
        }
        if (layout_.uses_clip && batch.sims.size() != batch.size()) {
            throw DimensionError("batch is missing similarity scores");
        }
        if (batch.size() == 0) throw DimensionError("empty batch");
    }

    ForwardTrace run(const Batch& batch, Mode mode, Rng* rng) {
        check_batch(batch);
        ForwardTrace t;
        t.mode = mode;
        t.branches = layout_.branches;
        if (layout_.uses_clip) t.sim = batch.sims;

        for (Branch b : layout_.branches) {
            const std::size_t i = index_of(b);
            auto& h = *heads_[i];
            t.projected[i] = mode == Mode::train
                                 ? h.forward_train(batch.inputs[i], config_.dropout_rate, *rng, t.cache.heads[i])
                                 : h.forward_eval(batch.inputs[i]);
        }
        if (gate_active()) {
            t.gate = gate_forward(batch.sims, gate, mode);
            Tensor2& m = t.projected[index_of(Branch::fused)];
            if (mode == Mode::train) t.cache.pre_gate[index_of(Branch::fused)] = m;
            scale_rows(m, t.gate);
        }

        const auto& br = layout_.branches;
        if (br.size() == 1) {
            t.aggregated = t.projected[index_of(br[0])];
        } else {
            std::vector<const Tensor2*> ms;
            for (Branch b : br) ms.push_back(&t.projected[index_of(b)]);
            if (attention_) {
                t.cache.attention = attention_->forward(ms);
                t.att = t.cache.attention.att;
            }
            t.aggregated = aggregate(ms, attention_ ? &t.att : nullptr);
        }
        t.logits = classifier_.forward(t.aggregated, mode == Mode::train ? &t.cache.classifier : nullptr);
        return t;
    }

    FusionConfig config_;
    VariantLayout layout_;
    std::array<std::optional<ProjectionHead>, kMaxBranches> heads_;
    std::optional<ModalityAttention> attention_;
    Classifier classifier_;
};

inline FusionModel build_model(const FusionConfig& config) { return FusionModel(config); }

inline constexpr std::size_t kEvalChunk = 256;

/// Eval-mode forward over `records` in fixed-size chunks; fn(first_index, batch, trace).
template <typename Fn>
void for_each_eval_chunk(const FusionModel& model, std::span<const EmbeddingRecord> records, Fn&& fn,
                         std::size_t chunk = kEvalChunk) {
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < records.size(); start += chunk) {
        const std::size_t end = std::min(records.size(), start + chunk);
        idx.resize(end - start);
        for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
        const Batch batch = assemble_batch(model.config(), records, idx);
        fn(start, batch, model.forward_eval(batch));
    }
}

/// Argmax decisions of the eval-mode model.
inline std::vector<int> predict(const FusionModel& model, std::span<const EmbeddingRecord> records) {
    std::vector<int> out(records.size());
    for_each_eval_chunk(model, records, [&](std::size_t start, const Batch&, const ForwardTrace& t) {
        for (std::size_t r = 0; r < t.batch_size(); ++r) out[start + r] = t.predicted(r);
    });
    return out;
}

/// Exact trainable-scalar count for a configuration, from layer shapes alone.
inline std::size_t count_parameters(const FusionConfig& config) {
    const FusionConfig c = normalized(config);
    const auto l = layout_of(c.variant);
    auto linear = [](std::size_t in, std::size_t out) { return in * out + out; };
    std::size_t n = 0;
    for (Branch b : l.branches) {
        n += linear(branch_input_width(c, b), c.proj_hidden) + 2 * c.proj_hidden;
        n += linear(c.proj_hidden, c.proj_out) + 2 * c.proj_out;
    }
    if (l.attention) n += 2 * linear(l.branches.size(), l.branches.size());
    n += linear(c.proj_out, c.cls_hidden) + linear(c.cls_hidden, c.cls_out);
    return n;
}

} // namespace fndclip
