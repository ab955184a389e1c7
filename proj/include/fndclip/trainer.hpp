#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fndclip/adam.hpp"
#include "fndclip/checkpoint.hpp"
#include "fndclip/config.hpp"
#include "fndclip/corpus.hpp"
#include "fndclip/loss.hpp"
#include "fndclip/metrics.hpp"
#include "fndclip/model.hpp"
#include "fndclip/synthetic.hpp"

namespace fndclip {

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double eval_accuracy = 0.0;
    double wall_time_s = 0.0;
};

struct RunLog {
    std::vector<EpochLog> epochs;
    std::size_t selected_epoch = 0;
    double selected_eval_accuracy = 0.0;
    std::string checkpoint_path;
};

inline nlohmann::json to_json(const RunLog& log) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : log.epochs) {
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"train_accuracy", e.train_accuracy},
                          {"eval_accuracy", e.eval_accuracy},
                          {"wall_time_s", e.wall_time_s}});
    }
    return {{"epochs", epochs},
            {"selected_epoch", log.selected_epoch},
            {"selected_eval_accuracy", log.selected_eval_accuracy},
            {"checkpoint_path", log.checkpoint_path}};
}

struct TrainOptions {
    std::filesystem::path out_dir;     // empty: nothing is written
    std::ostream* progress = nullptr;  // one "epoch=" line per epoch
};

struct TrainResult {
    FusionModel selected;  // the model of the selected epoch
    FusionModel last;      // state after the final epoch, with optimizer moments
    RunLog log;
    std::size_t epochs_completed = 0;
};

/// Train and eval corpora actually fed to the loop. With held-out validation
/// the eval side is a stratified slice of the training corpus and the test
/// corpus stays untouched.
struct TrainingData {
    Corpus train;
    Corpus eval;
};

inline TrainingData training_data(const Corpus& train, const Corpus& test, const TrainConfig& config) {
    if (config.eval_split == EvalSplit::test) return {train, test};
    auto [fit, val] = split(train, 1.0 - config.validation_fraction, config.seed);
    return {std::move(fit), std::move(val)};
}

namespace detail {

inline const char* first_nonfinite(const ForwardTrace& t) {
    static constexpr const char* names[] = {"m_Txt", "m_Img", "m_Mix"};
    for (std::size_t i = 0; i < kMaxBranches; ++i) {
        if (!t.projected[i].all_finite()) return names[i];
    }
    if (!t.att.all_finite()) return "att";
    if (!t.aggregated.all_finite()) return "m_Agg";
    if (!t.logits.all_finite()) return "logits";
    return nullptr;
}

inline void check_dims(const FusionModel& model, const Corpus& c, const char* which) {
    if (c.dims() != model.config().dims) {
        throw DimensionError(std::string(which) + " corpus dims do not match the model config");
    }
}

inline double accuracy_of(const FusionModel& model, const Corpus& c) {
    if (c.records.empty()) throw DimensionError("eval corpus is empty");
    const auto predictions = predict(model, c.records);
    const auto labels = labels_of(c.records);
    return compute_metrics(labels, predictions).accuracy;
}

inline nlohmann::json checkpoint_meta(const TrainConfig& config, std::size_t epochs_completed,
                                      std::size_t selected_epoch) {
    return {{"train", to_json(config)},
            {"train_state", {{"epochs_completed", epochs_completed}, {"selected_epoch", selected_epoch}}}};
}

/// Runs epochs start+1 .. start+count on `model` in place.
inline TrainResult run_epochs(FusionModel model, std::size_t start, const Corpus& train, const Corpus& eval,
                              const TrainConfig& config, const TrainOptions& opts) {
    check_dims(model, train, "train");
    check_dims(model, eval, "eval");
    if (train.records.size() < 2) throw BatchSizeError("training corpus needs at least 2 records");

    const AdamOptions adam{config.lr, config.beta1, config.beta2, config.adam_eps, config.weight_decay};
    const std::size_t n = train.records.size();
    std::vector<std::size_t> order(n);

    TrainResult result{model, model, {}, start};
    std::optional<double> best;
    if (config.epochs == 0) {
        result.log.selected_epoch = start;
        result.log.selected_eval_accuracy = accuracy_of(model, eval);
    }

    for (std::size_t epoch = start + 1; epoch <= start + config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        Rng rng(config.seed + epoch);
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(std::span<std::size_t>(order));

        double loss_sum = 0.0;
        std::size_t correct = 0, seen = 0;
        auto params = model.parameters();
        for (std::size_t b = 0; b < n; b += config.batch_size) {
            const std::size_t e = std::min(n, b + config.batch_size);
            if (e - b < 2) break;
            const std::span<const std::size_t> idx(order.data() + b, e - b);
            const Batch batch = assemble_batch(model.config(), train.records, idx);

            model.zero_grad();
            const ForwardTrace trace = model.forward_train(batch, rng);
            if (const char* bad = first_nonfinite(trace)) {
                throw NumericError("non-finite values in " + std::string(bad) + " at epoch " +
                                   std::to_string(epoch));
            }
            const auto ce = cross_entropy(trace.logits, batch.labels);
            if (!std::isfinite(ce.loss)) throw NumericError("non-finite loss at epoch " + std::to_string(epoch));
            model.backward(trace, ce.dlogits);
            for (const Param* p : params) {
                if (!p->grad.all_finite()) throw NumericError("non-finite gradient in " + p->name);
            }
            adam_step(params, adam);
            for (const Param* p : params) {
                if (!p->value.all_finite()) throw NumericError("non-finite parameter " + p->name);
            }

            loss_sum += ce.loss * static_cast<double>(batch.size());
            for (std::size_t r = 0; r < batch.size(); ++r) correct += trace.predicted(r) == batch.labels[r];
            seen += batch.size();
        }

        EpochLog log;
        log.epoch = epoch;
        log.train_loss = loss_sum / static_cast<double>(seen);
        log.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
        log.eval_accuracy = accuracy_of(model, eval);
        log.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.epochs.push_back(log);

        const bool take = config.selection == Selection::last_epoch || !best || log.eval_accuracy > *best;
        if (take) {
            best = log.eval_accuracy;
            result.selected = model;
            result.log.selected_epoch = epoch;
            result.log.selected_eval_accuracy = log.eval_accuracy;
        }
        if (opts.progress) {
            char line[160];
            std::snprintf(line, sizeof line, "epoch=%zu train_loss=%.6f train_acc=%.4f eval_acc=%.4f time=%.2fs\n",
                          epoch, log.train_loss, log.train_accuracy, log.eval_accuracy, log.wall_time_s);
            *opts.progress << line << std::flush;
        }
    }

    result.epochs_completed = start + config.epochs;
    result.last = std::move(model);
    if (config.epochs == 0) result.selected = result.last;

    if (!opts.out_dir.empty()) {
        std::filesystem::create_directories(opts.out_dir);
        const auto ck = opts.out_dir / "checkpoint.bin";
        save_checkpoint(ck, result.selected,
                        checkpoint_meta(config, result.epochs_completed, result.log.selected_epoch));
        save_checkpoint(opts.out_dir / "last.bin", result.last,
                        checkpoint_meta(config, result.epochs_completed, result.log.selected_epoch));
        result.log.checkpoint_path = ck.string();
    }
    return result;
}

} // namespace detail

/// Seeded mini-batch training. Epoch e shuffles and draws dropout from
/// Rng(seed + e), so a resumed run follows the same stream as a straight one.
inline TrainResult train(FusionModel model, const Corpus& train_corpus, const Corpus& eval_corpus,
                         const TrainConfig& config, const TrainOptions& opts = {}) {
    validate(config);
    return detail::run_epochs(std::move(model), 0, train_corpus, eval_corpus, config, opts);
}

/// Continues from a checkpoint written by train (normally last.bin) for
/// config.epochs more epochs; 0 is allowed and leaves parameters untouched.
inline TrainResult resume(const Checkpoint& from, const Corpus& train_corpus, const Corpus& eval_corpus,
                          const TrainConfig& config, const FusionConfig& expected,
                          const TrainOptions& opts = {}) {
    validate(config, true);
    const FusionConfig& have = from.model.config();
    const FusionConfig want = normalized(expected);
    if (have.dims != want.dims || have.variant != want.variant) {
        throw ConfigError("checkpoint holds variant '" + std::string(to_string(have.variant)) +
                          "' with different dims or variant than the requested '" +
                          std::string(to_string(want.variant)) + "'");
    }
    std::size_t start = 0;
    if (auto it = from.meta.find("train_state"); it != from.meta.end()) {
        start = it->value("epochs_completed", std::size_t{0});
    }
    return detail::run_epochs(from.model, start, train_corpus, eval_corpus, config, opts);
}

} // namespace fndclip
