#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fndclip/corpus.hpp"
#include "fndclip/errors.hpp"
#include "fndclip/rng.hpp"

namespace fndclip {

/// Parameters of the synthetic surrogate corpus.
///
/// Unimodal features (f_bert, f_resnet) are Gaussian around class means placed
/// at ±δ/2 along a fixed random unit direction, so the class means are a
/// Euclidean distance δ apart; within-class spread is noise_sigma per
/// coordinate. CLIP features share a latent content vector c ~ N(0, I):
/// f_clip_t = normalize(c + noise); f_clip_i = normalize(c + noise), or, with
/// the class's mismatch probability, normalize(c' + noise) for an independent c'.
struct SyntheticSpec {
    std::uint64_t n_real = 1000;
    std::uint64_t n_fake = 1000;
    CorpusDims dims;
    double class_separation = 1.0;
    double mismatch_prob_fake = 0.8;
    double mismatch_prob_real = 0.1;
    double noise_sigma = 0.5;
    std::uint64_t seed = 7;
};

inline void validate(const SyntheticSpec& s) {
    auto prob = [](double p, const char* name) {
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0,1]");
    };
    prob(s.mismatch_prob_fake, "mismatch_prob_fake");
    prob(s.mismatch_prob_real, "mismatch_prob_real");
    if (!(s.class_separation >= 0.0) || !std::isfinite(s.class_separation)) {
        throw ConfigError("class_separation must be a finite value >= 0");
    }
    if (!(s.noise_sigma >= 0.0) || !std::isfinite(s.noise_sigma)) {
        throw ConfigError("noise_sigma must be a finite value >= 0");
    }
    if (s.dims.n_bert == 0 || s.dims.n_resnet == 0 || s.dims.n_clip == 0) {
        throw ConfigError("synthetic dims must be positive");
    }
}

namespace detail {

inline std::vector<double> gaussian_vector(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

inline void normalize_in_place(std::vector<double>& v) {
    double sq = 0.0;
    for (double x : v) sq += x * x;
    const double norm = std::sqrt(sq);
    if (norm > 0.0) {
        for (auto& x : v) x /= norm;
    }
}

inline std::vector<float> to_float(const std::vector<double>& v) { return {v.begin(), v.end()}; }

} // namespace detail

inline Corpus generate_synthetic(const SyntheticSpec& spec) {
    validate(spec);
    Rng rng(spec.seed);
    const auto& d = spec.dims;

    auto u_bert = detail::gaussian_vector(rng, d.n_bert);
    auto u_resnet = detail::gaussian_vector(rng, d.n_resnet);
    detail::normalize_in_place(u_bert);
    detail::normalize_in_place(u_resnet);

    std::vector<int> labels(spec.n_real, 0);
    labels.insert(labels.end(), spec.n_fake, 1);
    rng.shuffle(std::span<int>(labels));

    const double half = 0.5 * spec.class_separation;
    const double sigma = spec.noise_sigma;
    auto unimodal = [&](const std::vector<double>& dir, double sign) {
        std::vector<double> v(dir.size());
        for (std::size_t k = 0; k < v.size(); ++k) v[k] = sign * half * dir[k] + sigma * rng.normal();
        return v;
    };
    auto clip_view = [&](const std::vector<double>& content) {
        std::vector<double> v(content.size());
        for (std::size_t k = 0; k < v.size(); ++k) v[k] = content[k] + sigma * rng.normal();
        detail::normalize_in_place(v);
        return v;
    };

    std::vector<EmbeddingRecord> records;
    records.reserve(labels.size());
    char id[32];
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        const double sign = y == 1 ? 1.0 : -1.0;
        EmbeddingRecord r;
        std::snprintf(id, sizeof id, "syn-%06zu", i);
        r.id = id;
        r.label = y;
        r.f_bert = detail::to_float(unimodal(u_bert, sign));
        r.f_resnet = detail::to_float(unimodal(u_resnet, sign));
        const auto content = detail::gaussian_vector(rng, d.n_clip);
        r.f_clip_t = detail::to_float(clip_view(content));
        const bool mismatch = rng.bernoulli(y == 1 ? spec.mismatch_prob_fake : spec.mismatch_prob_real);
        if (mismatch) {
            r.f_clip_i = detail::to_float(clip_view(detail::gaussian_vector(rng, d.n_clip)));
        } else {
            r.f_clip_i = detail::to_float(clip_view(content));
        }
        records.push_back(std::move(r));
    }
    return make_corpus(d, std::move(records));
}

// ---------------------------------------------------------------------------
// Stratified split

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Class-stratified seeded split over labels. The train side receives
/// round(N·fraction) items, apportioned across classes by largest remainder,
/// with every class represented on both sides. Indices come back ascending.
inline SplitIndices split_indices(std::span<const int> labels, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ConfigError("train_fraction must lie in (0,1)");
    }
    std::array<std::vector<std::size_t>, 2> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw LabelError("split: label outside {0,1}");
        by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    }
    for (int c = 0; c < 2; ++c) {
        if (by_class[c].size() < 2) {
            throw SplitError("class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                             " members; stratified split needs at least 2");
        }
    }

    const double total = static_cast<double>(labels.size());
    const auto want = static_cast<std::size_t>(std::llround(total * train_fraction));
    std::array<std::size_t, 2> take{};
    std::array<double, 2> rem{};
    for (int c = 0; c < 2; ++c) {
        const double exact = static_cast<double>(by_class[c].size()) * train_fraction;
        take[c] = static_cast<std::size_t>(std::floor(exact));
        rem[c] = exact - std::floor(exact);
    }
    std::size_t have = take[0] + take[1];
    while (have < want) {
        const int c = rem[0] >= rem[1] ? 0 : 1;
        ++take[c];
        rem[c] = -1.0;
        ++have;
    }
    for (int c = 0; c < 2; ++c) take[c] = std::clamp<std::size_t>(take[c], 1, by_class[c].size() - 1);

    Rng rng(seed);
    SplitIndices out;
    for (int c = 0; c < 2; ++c) {
        auto& idx = by_class[c];
        rng.shuffle(std::span<std::size_t>(idx));
        out.train.insert(out.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take[c]));
        out.test.insert(out.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(take[c]), idx.end());
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

inline std::vector<int> labels_of(std::span<const EmbeddingRecord> records) {
    std::vector<int> y;
    y.reserve(records.size());
    for (const auto& r : records) y.push_back(r.label);
    return y;
}

inline std::vector<EmbeddingRecord> select(std::span<const EmbeddingRecord> records,
                                           std::span<const std::size_t> indices) {
    std::vector<EmbeddingRecord> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(records[i]);
    return out;
}

/// Splits a corpus into (train, test) corpora sharing its dims.
inline std::pair<Corpus, Corpus> split(const Corpus& corpus, double train_fraction, std::uint64_t seed) {
    const auto labels = labels_of(corpus.records);
    const auto idx = split_indices(labels, train_fraction, seed);
    return {make_corpus(corpus.dims(), select(corpus.records, idx.train)),
            make_corpus(corpus.dims(), select(corpus.records, idx.test))};
}

} // namespace fndclip
