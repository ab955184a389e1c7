#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "fndclip/corpus.hpp"
#include "fndclip/errors.hpp"
#include "fndclip/synthetic.hpp"

namespace fndclip {

/// Full model and the six reduced models compared in the ablation.
enum class Variant { full, no_attention, no_fusion, no_clip, multimodal_only, text_only, image_only };

inline constexpr std::array<Variant, 7> kAllVariants{Variant::full,          Variant::no_attention,
                                                     Variant::no_fusion,     Variant::no_clip,
                                                     Variant::multimodal_only, Variant::text_only,
                                                     Variant::image_only};

inline std::string_view to_string(Variant v) {
    switch (v) {
    case Variant::full: return "full";
    case Variant::no_attention: return "no_attention";
    case Variant::no_fusion: return "no_fusion";
    case Variant::no_clip: return "no_clip";
    case Variant::multimodal_only: return "multimodal_only";
    case Variant::text_only: return "text_only";
    case Variant::image_only: return "image_only";
    }
    return "?";
}

/// Row label used in the ablation table.
inline std::string_view display_name(Variant v) {
    switch (v) {
    case Variant::full: return "full";
    case Variant::no_attention: return "w/o A";
    case Variant::no_fusion: return "w/o F";
    case Variant::no_clip: return "w/o C";
    case Variant::multimodal_only: return "multimodal-only";
    case Variant::text_only: return "text-only";
    case Variant::image_only: return "image-only";
    }
    return "?";
}

inline Variant variant_from_string(std::string_view s) {
    for (auto v : kAllVariants) {
        if (to_string(v) == s) return v;
    }
    throw ConfigError("unknown variant '" + std::string(s) + "'");
}

struct FusionConfig {
    CorpusDims dims;
    std::size_t proj_hidden = 256;
    std::size_t proj_out = 64;  // L, the common projected width
    std::size_t cls_hidden = 64;
    std::size_t cls_out = 2;
    double dropout_rate = 0.3;
    Variant variant = Variant::full;
    bool gate_enabled = true;
    std::uint64_t seed = 0;
    double bn_momentum = 0.1;
    double bn_epsilon = 1e-5;
    double gate_momentum = 0.1;
    double gate_epsilon = 1e-5;

    friend bool operator==(const FusionConfig&, const FusionConfig&) = default;
};

/// Validates and applies forced settings (no_clip has no gate).
inline FusionConfig normalized(FusionConfig c) {
    if (c.dims.n_bert == 0 || c.dims.n_resnet == 0 || c.dims.n_clip == 0) {
        throw ConfigError("model dims must be positive");
    }
    if (c.proj_hidden == 0 || c.proj_out == 0 || c.cls_hidden == 0) {
        throw ConfigError("layer widths must be positive");
    }
    if (c.cls_out != 2) throw ConfigError("cls_out must be 2 (binary classification)");
    if (!(c.dropout_rate >= 0.0 && c.dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0,1)");
    if (!(c.bn_momentum > 0.0 && c.bn_momentum <= 1.0) || !(c.gate_momentum > 0.0 && c.gate_momentum <= 1.0)) {
        throw ConfigError("momentum must lie in (0,1]");
    }
    if (!(c.bn_epsilon > 0.0) || !(c.gate_epsilon > 0.0)) throw ConfigError("epsilon must be positive");
    if (c.variant == Variant::no_clip) c.gate_enabled = false;
    return c;
}

enum class Selection { best_eval_accuracy, last_epoch };
enum class EvalSplit { test, held_out_validation };

struct TrainConfig {
    double lr = 1e-3;
    double weight_decay = 0.0;
    std::size_t batch_size = 64;
    std::size_t epochs = 50;
    std::uint64_t seed = 0;
    Selection selection = Selection::best_eval_accuracy;
    EvalSplit eval_split = EvalSplit::held_out_validation;
    double validation_fraction = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Epoch count 0 is allowed only when resuming.
inline void validate(const TrainConfig& c, bool allow_zero_epochs = false) {
    if (!(c.lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(c.weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (c.batch_size < 2) throw ConfigError("batch_size must be >= 2 (batch normalization)");
    if (c.epochs < 1 && !allow_zero_epochs) throw ConfigError("epochs must be >= 1");
    if (!(c.validation_fraction > 0.0 && c.validation_fraction < 1.0)) {
        throw ConfigError("validation_fraction must lie in (0,1)");
    }
    if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0) || !(c.adam_eps > 0.0)) {
        throw ConfigError("invalid Adam hyperparameters");
    }
}

inline std::string_view to_string(Selection s) {
    return s == Selection::best_eval_accuracy ? "best_eval_accuracy" : "last_epoch";
}
inline std::string_view to_string(EvalSplit s) {
    return s == EvalSplit::test ? "test" : "held_out_validation";
}

// ---------------------------------------------------------------------------
// JSON. Sections are flat objects; unknown keys are rejected.

namespace detail {

using nlohmann::json;

class SectionReader {
public:
    SectionReader(const json& j, std::string section) : j_(j), section_(std::move(section)) {
        if (!j_.is_object()) throw ConfigError("section '" + section_ + "' must be a JSON object");
    }

    template <typename T>
    void read(const char* key, T& out) {
        seen_.push_back(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        if constexpr (std::is_same_v<T, bool>) {
            if (!it->is_boolean()) throw ConfigError(section_ + "." + key + ": expected a boolean");
        } else if constexpr (std::is_unsigned_v<T>) {
            if (!it->is_number_unsigned()) {
                throw ConfigError(section_ + "." + key + ": expected a non-negative integer");
            }
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!it->is_number()) throw ConfigError(section_ + "." + key + ": expected a number");
        }
        try {
            out = it->template get<T>();
        } catch (const json::exception&) {
            throw ConfigError(section_ + "." + key + ": wrong type");
        }
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end()) {
                throw ConfigError("unknown key '" + section_ + "." + it.key() + "'");
            }
        }
    }

private:
    const json& j_;
    std::string section_;
    std::vector<std::string> seen_;
};

} // namespace detail

inline nlohmann::json to_json(const FusionConfig& c) {
    return {{"n_bert", c.dims.n_bert},         {"n_resnet", c.dims.n_resnet},
            {"n_clip", c.dims.n_clip},         {"proj_hidden", c.proj_hidden},
            {"proj_out", c.proj_out},          {"cls_hidden", c.cls_hidden},
            {"cls_out", c.cls_out},            {"dropout_rate", c.dropout_rate},
            {"variant", to_string(c.variant)}, {"gate_enabled", c.gate_enabled},
            {"seed", c.seed},                  {"bn_momentum", c.bn_momentum},
            {"bn_epsilon", c.bn_epsilon},      {"gate_momentum", c.gate_momentum},
            {"gate_epsilon", c.gate_epsilon}};
}

inline FusionConfig fusion_config_from_json(const nlohmann::json& j, FusionConfig c = {}) {
    detail::SectionReader r(j, "model");
    std::string variant(to_string(c.variant));
    r.read("n_bert", c.dims.n_bert);
    r.read("n_resnet", c.dims.n_resnet);
    r.read("n_clip", c.dims.n_clip);
    r.read("proj_hidden", c.proj_hidden);
    r.read("proj_out", c.proj_out);
    r.read("cls_hidden", c.cls_hidden);
    r.read("cls_out", c.cls_out);
    r.read("dropout_rate", c.dropout_rate);
    r.read("variant", variant);
    r.read("gate_enabled", c.gate_enabled);
    r.read("seed", c.seed);
    r.read("bn_momentum", c.bn_momentum);
    r.read("bn_epsilon", c.bn_epsilon);
    r.read("gate_momentum", c.gate_momentum);
    r.read("gate_epsilon", c.gate_epsilon);
    r.finish();
    c.variant = variant_from_string(variant);
    return c;
}

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"lr", c.lr},
            {"weight_decay", c.weight_decay},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"seed", c.seed},
            {"selection", to_string(c.selection)},
            {"eval_split", to_string(c.eval_split)},
            {"validation_fraction", c.validation_fraction},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"adam_eps", c.adam_eps}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
    detail::SectionReader r(j, "train");
    std::string selection(to_string(c.selection));
    std::string eval_split(to_string(c.eval_split));
    r.read("lr", c.lr);
    r.read("weight_decay", c.weight_decay);
    r.read("batch_size", c.batch_size);
    r.read("epochs", c.epochs);
    r.read("seed", c.seed);
    r.read("selection", selection);
    r.read("eval_split", eval_split);
    r.read("validation_fraction", c.validation_fraction);
    r.read("beta1", c.beta1);
    r.read("beta2", c.beta2);
    r.read("adam_eps", c.adam_eps);
    r.finish();
    if (selection == "best_eval_accuracy") c.selection = Selection::best_eval_accuracy;
    else if (selection == "last_epoch") c.selection = Selection::last_epoch;
    else throw ConfigError("unknown selection '" + selection + "'");
    if (eval_split == "test") c.eval_split = EvalSplit::test;
    else if (eval_split == "held_out_validation") c.eval_split = EvalSplit::held_out_validation;
    else throw ConfigError("unknown eval_split '" + eval_split + "'");
    return c;
}

inline nlohmann::json to_json(const SyntheticSpec& s) {
    return {{"n_real", s.n_real},
            {"n_fake", s.n_fake},
            {"n_bert", s.dims.n_bert},
            {"n_resnet", s.dims.n_resnet},
            {"n_clip", s.dims.n_clip},
            {"class_separation", s.class_separation},
            {"mismatch_prob_fake", s.mismatch_prob_fake},
            {"mismatch_prob_real", s.mismatch_prob_real},
            {"noise_sigma", s.noise_sigma},
            {"seed", s.seed}};
}

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j, SyntheticSpec s = {}) {
    detail::SectionReader r(j, "synthetic");
    r.read("n_real", s.n_real);
    r.read("n_fake", s.n_fake);
    r.read("n_bert", s.dims.n_bert);
    r.read("n_resnet", s.dims.n_resnet);
    r.read("n_clip", s.dims.n_clip);
    r.read("class_separation", s.class_separation);
    r.read("mismatch_prob_fake", s.mismatch_prob_fake);
    r.read("mismatch_prob_real", s.mismatch_prob_real);
    r.read("noise_sigma", s.noise_sigma);
    r.read("seed", s.seed);
    r.finish();
    return s;
}

} // namespace fndclip
