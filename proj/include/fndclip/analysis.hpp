#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "fndclip/corpus.hpp"
#include "fndclip/errors.hpp"
#include "fndclip/metrics.hpp"
#include "fndclip/model.hpp"
#include "fndclip/synthetic.hpp"

namespace fndclip {

inline MetricsReport evaluate(const FusionModel& model, const Corpus& corpus, const std::string& corpus_id = "") {
    if (corpus.dims() != model.config().dims) throw DimensionError("corpus dims do not match the model config");
    if (corpus.records.empty()) throw DimensionError("cannot evaluate an empty corpus");
    const auto predictions = predict(model, corpus.records);
    MetricsReport r = compute_metrics(labels_of(corpus.records), predictions);
    r.corpus_id = corpus_id;
    r.variant = std::string(to_string(model.config().variant));
    r.seed = model.config().seed;
    return r;
}

// ---------------------------------------------------------------------------
// Similarity bins

struct SimilarityBin {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t count = 0;
    std::size_t real_count = 0;
    std::optional<double> real_rate;  // null for an empty bin
    std::optional<double> deviation;  // real_rate - average_real_rate
};

struct SimilarityBinReport {
    std::vector<double> edges;  // bin_count + 1 values
    std::vector<SimilarityBin> bins;
    std::size_t total = 0;
    double average_real_rate = 0.0;
    bool standardized = false;  // scores went through the gate's frozen standardization
    bool single_class = false;
};

/// Locates a score: bins are [edge_k, edge_k+1) except the last, which is closed.
inline std::size_t bin_index(double s, std::span<const double> edges) {
    const std::size_t n = edges.size() - 1;
    const double width = edges.back() - edges.front();
    if (!(width > 0.0)) return 0;
    auto k = static_cast<std::size_t>(
        std::clamp(std::floor((s - edges.front()) / width * static_cast<double>(n)), 0.0, static_cast<double>(n - 1)));
    while (k > 0 && s < edges[k]) --k;
    while (k + 1 < n && s >= edges[k + 1]) ++k;
    return k;
}

/// Equal-width bins over the observed score range. With a model whose gate is
/// active, scores are standardized with its frozen statistics.
inline SimilarityBinReport similarity_bins(const Corpus& corpus, const FusionModel* model,
                                           std::size_t bin_count = 10) {
    if (bin_count < 2) throw ConfigError("bin_count must be >= 2");
    if (corpus.records.empty()) throw DimensionError("similarity_bins: empty corpus");
    SimilarityBinReport rep;
    rep.standardized = model && model->gate_active();
    std::vector<double> scores;
    scores.reserve(corpus.records.size());
    std::size_t real = 0;
    for (const auto& r : corpus.records) {
        const double sim = cosine_similarity(r.f_clip_t, r.f_clip_i);
        scores.push_back(rep.standardized ? standardize(sim, model->gate) : sim);
        real += r.label == 0;
    }
    rep.total = scores.size();
    rep.average_real_rate = static_cast<double>(real) / static_cast<double>(rep.total);
    rep.single_class = real == 0 || real == rep.total;

    const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
    const double lo = *lo_it, hi = *hi_it;
    rep.edges.resize(bin_count + 1);
    for (std::size_t k = 0; k <= bin_count; ++k) {
        rep.edges[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(bin_count);
    }
    rep.edges.back() = hi;
    rep.bins.resize(bin_count);
    for (std::size_t k = 0; k < bin_count; ++k) {
        rep.bins[k].lo = rep.edges[k];
        rep.bins[k].hi = rep.edges[k + 1];
    }
    for (std::size_t i = 0; i < scores.size(); ++i) {
        auto& b = rep.bins[bin_index(scores[i], rep.edges)];
        ++b.count;
        b.real_count += corpus.records[i].label == 0;
    }
    for (auto& b : rep.bins) {
        if (b.count == 0) continue;
        b.real_rate = static_cast<double>(b.real_count) / static_cast<double>(b.count);
        b.deviation = *b.real_rate - rep.average_real_rate;
    }
    return rep;
}

inline nlohmann::json to_json(const SimilarityBinReport& r) {
    nlohmann::json bins = nlohmann::json::array();
    for (const auto& b : r.bins) {
        bins.push_back({{"lo", b.lo},
                        {"hi", b.hi},
                        {"count", b.count},
                        {"real_count", b.real_count},
                        {"real_rate", to_json(b.real_rate)},
                        {"deviation", to_json(b.deviation)}});
    }
    return {{"edges", r.edges},
            {"bins", bins},
            {"total", r.total},
            {"average_real_rate", r.average_real_rate},
            {"standardized", r.standardized},
            {"single_class", r.single_class}};
}

namespace detail {

inline std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
        if (c == '"') q += '"';
        q += c;
    }
    return q + "\"";
}

} // namespace detail

/// One row per bin; empty cells for undefined rates.
inline std::string to_csv(const SimilarityBinReport& r) {
    std::string out = "bin,lo,hi,count,real_count,real_rate,deviation\n";
    for (std::size_t k = 0; k < r.bins.size(); ++k) {
        const auto& b = r.bins[k];
        out += std::to_string(k) + "," + detail::num(b.lo) + "," + detail::num(b.hi) + "," +
               std::to_string(b.count) + "," + std::to_string(b.real_count) + "," + detail::num(b.real_rate) +
               "," + detail::num(b.deviation) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Per-sample reports

/// Fields the variant does not compute are absent, not zero.
struct SampleReport {
    std::string id;
    int label = 0;
    int predicted = 0;
    std::optional<double> sim;
    std::optional<double> gate;
    std::optional<double> att_txt;
    std::optional<double> att_img;
    std::optional<double> att_mix;

    friend bool operator==(const SampleReport&, const SampleReport&) = default;
};

inline nlohmann::json to_json(const SampleReport& s) {
    nlohmann::json j = {{"id", s.id}, {"label", s.label}, {"predicted", s.predicted}};
    auto put = [&](const char* key, const std::optional<double>& v) {
        if (v) j[key] = *v;
    };
    put("sim", s.sim);
    put("gate", s.gate);
    put("att_Txt", s.att_txt);
    put("att_Img", s.att_img);
    put("att_Mix", s.att_mix);
    return j;
}

namespace detail {

inline std::vector<std::size_t> resolve_ids(const Corpus& corpus, std::span<const std::string> ids) {
    std::unordered_map<std::string, std::size_t> where;
    for (std::size_t i = 0; i < corpus.records.size(); ++i) where.emplace(corpus.records[i].id, i);
    std::vector<std::size_t> idx;
    idx.reserve(ids.size());
    for (const auto& id : ids) {
        auto it = where.find(id);
        if (it == where.end()) throw NotFoundError("no record with id '" + id + "'");
        idx.push_back(it->second);
    }
    return idx;
}

} // namespace detail

inline std::vector<SampleReport> sample_report(const FusionModel& model, const Corpus& corpus,
                                               std::span<const std::string> ids) {
    const auto records = select(corpus.records, detail::resolve_ids(corpus, ids));
    std::vector<SampleReport> out(records.size());
    for_each_eval_chunk(model, records, [&](std::size_t start, const Batch& b, const ForwardTrace& t) {
        for (std::size_t r = 0; r < t.batch_size(); ++r) {
            auto& s = out[start + r];
            s.id = b.ids[r];
            s.label = b.labels[r];
            s.predicted = t.predicted(r);
            if (!t.sim.empty()) s.sim = t.sim[r];
            if (!t.gate.empty()) s.gate = t.gate[r];
            s.att_txt = t.attention(r, Branch::text);
            s.att_img = t.attention(r, Branch::image);
            s.att_mix = t.attention(r, Branch::fused);
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Feature export

enum class FeatureStage { aggregated, projected };

inline FeatureStage feature_stage_from_string(std::string_view s) {
    if (s == "aggregated") return FeatureStage::aggregated;
    if (s == "projected") return FeatureStage::projected;
    throw ConfigError("unknown feature stage '" + std::string(s) + "' (aggregated|projected)");
}

/// CSV: id, label, then m_Agg columns f0.. or, for the projected stage, the
/// branch vectors the variant has (txt_*, img_*, mix_*; m_Mix after the gate).
inline std::string export_features_csv(const FusionModel& model, const Corpus& corpus, FeatureStage stage) {
    if (corpus.dims() != model.config().dims) throw DimensionError("corpus dims do not match the model config");
    const std::size_t width = model.config().proj_out;
    const auto& branches = model.layout().branches;
    static constexpr const char* prefix[] = {"txt_", "img_", "mix_"};

    std::string out = "id,label";
    if (stage == FeatureStage::aggregated) {
        for (std::size_t l = 0; l < width; ++l) out += ",f" + std::to_string(l);
    } else {
        for (Branch b : branches) {
            for (std::size_t l = 0; l < width; ++l) out += "," + (prefix[index_of(b)] + std::to_string(l));
        }
    }
    out += "\n";

    for_each_eval_chunk(model, corpus.records, [&](std::size_t, const Batch& batch, const ForwardTrace& t) {
        for (std::size_t r = 0; r < t.batch_size(); ++r) {
            out += detail::csv_field(batch.ids[r]) + "," + std::to_string(batch.labels[r]);
            auto emit = [&](const Tensor2& m) {
                for (double v : m.row(r)) out += "," + detail::num(v);
            };
            if (stage == FeatureStage::aggregated) {
                emit(t.aggregated);
            } else {
                for (Branch b : branches) emit(t.projected[index_of(b)]);
            }
            out += "\n";
        }
    });
    return out;
}

inline void export_features(const std::filesystem::path& path, const FusionModel& model, const Corpus& corpus,
                            FeatureStage stage) {
    detail::write_file_bytes(path, export_features_csv(model, corpus, stage));
}

} // namespace fndclip
