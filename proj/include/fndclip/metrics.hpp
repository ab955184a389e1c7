#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fndclip/errors.hpp"

namespace fndclip {

/// Confusion counts with fake news (label 1) as the positive class.
struct ConfusionCounts {
    std::size_t tp = 0;  // fake predicted fake
    std::size_t fp = 0;  // real predicted fake
    std::size_t fn = 0;  // fake predicted real
    std::size_t tn = 0;  // real predicted real

    std::size_t total() const noexcept { return tp + fp + fn + tn; }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Zero denominators yield nullopt; they are reported as null / "-".
struct ClassMetrics {
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> f1;
};

struct MetricsReport {
    std::string corpus_id;
    std::string variant;
    std::uint64_t seed = 0;
    ConfusionCounts counts;
    double accuracy = 0.0;
    ClassMetrics fake;
    ClassMetrics real;
};

inline ConfusionCounts tally(std::span<const int> labels, std::span<const int> predictions) {
    if (labels.size() != predictions.size()) throw DimensionError("tally: labels and predictions differ in length");
    ConfusionCounts c;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i], p = predictions[i];
        if ((y != 0 && y != 1) || (p != 0 && p != 1)) throw LabelError("tally: value outside {0,1}");
        if (y == 1) (p == 1 ? c.tp : c.fn)++;
        else (p == 1 ? c.fp : c.tn)++;
    }
    return c;
}

namespace detail {

inline std::optional<double> ratio(std::size_t num, std::size_t den) {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

inline ClassMetrics class_metrics(std::size_t hit, std::size_t false_alarm, std::size_t miss) {
    ClassMetrics m;
    m.precision = ratio(hit, hit + false_alarm);
    m.recall = ratio(hit, hit + miss);
    if (m.precision && m.recall && *m.precision + *m.recall > 0.0) {
        m.f1 = 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
    }
    return m;
}

} // namespace detail

inline MetricsReport metrics_from_counts(const ConfusionCounts& c) {
    if (c.total() == 0) throw DimensionError("metrics: empty corpus");
    MetricsReport r;
    r.counts = c;
    r.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
    r.fake = detail::class_metrics(c.tp, c.fp, c.fn);
    r.real = detail::class_metrics(c.tn, c.fn, c.fp);
    return r;
}

inline MetricsReport compute_metrics(std::span<const int> labels, std::span<const int> predictions) {
    return metrics_from_counts(tally(labels, predictions));
}

inline nlohmann::json to_json(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json to_json(const ClassMetrics& m) {
    return {{"precision", to_json(m.precision)}, {"recall", to_json(m.recall)}, {"f1", to_json(m.f1)}};
}

inline nlohmann::json to_json(const MetricsReport& r) {
    return {{"corpus_id", r.corpus_id},
            {"variant", r.variant},
            {"seed", r.seed},
            {"accuracy", r.accuracy},
            {"counts", {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"fn", r.counts.fn}, {"tn", r.counts.tn}}},
            {"fake", to_json(r.fake)},
            {"real", to_json(r.real)}};
}

// ---------------------------------------------------------------------------
// Monospace tables: Method | Accuracy | Fake P R F1 | Real P R F1

struct TableRow {
    std::string method;
    MetricsReport report;
};

namespace detail {

inline std::string cell(const std::optional<double>& v) {
    if (!v) return "-";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", *v);
    return buf;
}

inline std::string pad(const std::string& s, std::size_t width) {
    return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

} // namespace detail

inline std::string format_table(std::span<const TableRow> rows) {
    std::size_t method_w = 6;
    for (const auto& r : rows) method_w = std::max(method_w, r.method.size());
    const std::size_t w = 10;
    std::string out;
    out += detail::pad("", method_w) + "  " + detail::pad("", w) + "| " + detail::pad("Fake News", 3 * w) + "| " +
           "Real News\n";
    out += detail::pad("Method", method_w) + "  " + detail::pad("Accuracy", w) + "| " +
           detail::pad("Precision", w) + detail::pad("Recall", w) + detail::pad("F1-score", w) + "| " +
           detail::pad("Precision", w) + detail::pad("Recall", w) + "F1-score\n";
    out += std::string(method_w + 2 + 7 * w + 4, '-') + "\n";
    bool any_null = false;
    for (const auto& row : rows) {
        const auto& m = row.report;
        for (const auto* c : {&m.fake, &m.real}) {
            any_null = any_null || !c->precision || !c->recall || !c->f1;
        }
        out += detail::pad(row.method, method_w) + "  " + detail::pad(detail::cell(m.accuracy), w) + "| " +
               detail::pad(detail::cell(m.fake.precision), w) + detail::pad(detail::cell(m.fake.recall), w) +
               detail::pad(detail::cell(m.fake.f1), w) + "| " + detail::pad(detail::cell(m.real.precision), w) +
               detail::pad(detail::cell(m.real.recall), w) + detail::cell(m.real.f1) + "\n";
    }
    if (any_null) out += "\n- : undefined (zero denominator)\n";
    return out;
}

inline std::string format_table(const TableRow& row) { return format_table(std::span<const TableRow>(&row, 1)); }

} // namespace fndclip
