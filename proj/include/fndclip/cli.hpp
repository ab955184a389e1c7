#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fndclip/analysis.hpp"
#include "fndclip/checkpoint.hpp"
#include "fndclip/config.hpp"
#include "fndclip/corpus.hpp"
#include "fndclip/errors.hpp"
#include "fndclip/metrics.hpp"
#include "fndclip/synthetic.hpp"
#include "fndclip/trainer.hpp"

namespace fndclip {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitMissingFile = 2;
inline constexpr int kExitConfig = 3;
inline constexpr int kExitNumeric = 4;

/// Everything a run needs, assembled from defaults, a config file and
/// dotted overrides, in that order of precedence (last wins).
struct RunConfig {
    FusionConfig model;
    TrainConfig train;
    SyntheticSpec synthetic;
    std::string corpus;
    std::string test_corpus;
    double train_fraction = 0.8;
    std::uint64_t split_seed = 0;
    std::size_t bins = 10;
};

inline nlohmann::json to_json(const RunConfig& c) {
    return {{"model", to_json(c.model)},
            {"train", to_json(c.train)},
            {"synthetic", to_json(c.synthetic)},
            {"data",
             {{"corpus", c.corpus},
              {"test_corpus", c.test_corpus},
              {"train_fraction", c.train_fraction},
              {"split_seed", c.split_seed}}},
            {"analysis", {{"bins", c.bins}}}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    RunConfig c;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const auto& k = it.key();
        if (k == "model") c.model = fusion_config_from_json(*it, c.model);
        else if (k == "train") c.train = train_config_from_json(*it, c.train);
        else if (k == "synthetic") c.synthetic = synthetic_spec_from_json(*it, c.synthetic);
        else if (k == "data") {
            detail::SectionReader r(*it, "data");
            r.read("corpus", c.corpus);
            r.read("test_corpus", c.test_corpus);
            r.read("train_fraction", c.train_fraction);
            r.read("split_seed", c.split_seed);
            r.finish();
        } else if (k == "analysis") {
            detail::SectionReader r(*it, "analysis");
            r.read("bins", c.bins);
            r.finish();
        } else {
            throw ConfigError("unknown config section '" + k + "'");
        }
    }
    return c;
}

namespace detail {

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
    const std::string text = read_file_bytes(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

/// "--section.key=value" or "--section.key value". Values that parse as JSON
/// (numbers, booleans) keep that type; anything else is a string.
struct Override {
    std::string section, key, value;
};

inline std::vector<Override> take_overrides(std::vector<std::string>& args) {
    std::vector<Override> out;
    std::vector<std::string> rest;
    for (std::size_t i = 0; i < args.size(); ++i) {
        const std::string& a = args[i];
        const auto dot = a.find('.');
        const auto eq = a.find('=');
        if (a.rfind("--", 0) != 0 || dot == std::string::npos || (eq != std::string::npos && dot > eq)) {
            rest.push_back(a);
            continue;
        }
        const std::string name = a.substr(2, eq == std::string::npos ? std::string::npos : eq - 2);
        std::string value;
        if (eq != std::string::npos) {
            value = a.substr(eq + 1);
        } else if (i + 1 < args.size()) {
            value = args[++i];
        } else {
            throw ConfigError("override '" + name + "' needs a value");
        }
        const auto d = name.find('.');
        out.push_back({name.substr(0, d), name.substr(d + 1), value});
    }
    args = std::move(rest);
    return out;
}

inline nlohmann::json parse_override_value(const std::string& v) {
    try {
        auto j = nlohmann::json::parse(v);
        if (j.is_number() || j.is_boolean()) return j;
    } catch (const nlohmann::json::exception&) {
    }
    return v;
}

inline std::string corpus_id(const std::string& path) { return std::filesystem::path(path).stem().string(); }

inline void write_text(const std::filesystem::path& path, const std::string& text) { write_file_bytes(path, text); }

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    write_file_bytes(path, j.dump(2) + "\n");
}

inline std::filesystem::path default_out(const std::string& sub) {
    const char* root = std::getenv("FNDCLIP_OUTPUT_ROOT");
    return std::filesystem::path(root && *root ? root : "runs") / sub;
}

struct Corpora {
    Corpus train;
    Corpus test;
};

inline Corpora load_corpora(const RunConfig& c) {
    if (c.corpus.empty()) throw ConfigError("no corpus given (--corpus or data.corpus)");
    Corpus full = load_corpus(c.corpus);
    if (!c.test_corpus.empty()) return {std::move(full), load_corpus(c.test_corpus)};
    auto [train, test] = split(full, c.train_fraction, c.split_seed);
    return {std::move(train), std::move(test)};
}

struct TrainedRun {
    TrainResult result;
    MetricsReport metrics;
};

inline TrainedRun train_one(const RunConfig& c, const Corpora& data, const std::filesystem::path& out,
                            std::ostream& err, const std::string& resume_from = "") {
    const TrainingData td = training_data(data.train, data.test, c.train);
    TrainOptions opts{out, &err};
    TrainResult r = resume_from.empty()
                        ? train(FusionModel(c.model), td.train, td.eval, c.train, opts)
                        : resume(load_checkpoint(resume_from), td.train, td.eval, c.train, c.model, opts);
    MetricsReport m = evaluate(r.selected, data.test, corpus_id(c.test_corpus.empty() ? c.corpus : c.test_corpus));
    return {std::move(r), std::move(m)};
}

} // namespace detail

/// Entry point of the `fndclip` executable; usable in-process.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    std::vector<std::string> args(argv + 1, argv + argc);
    CLI::App app{"fndclip: multimodal fake-news classifier over frozen embeddings"};
    app.require_subcommand(1);

    std::string config_path, corpus_path, test_corpus_path, out_path, checkpoint_path, resume_path, stage = "aggregated";
    std::string ids;
    std::size_t bins = 0;

    auto* gen = app.add_subcommand("gen", "Write a seeded synthetic corpus");
    gen->add_option("--spec,--config", config_path, "JSON config (synthetic section)");
    gen->add_option("--out", out_path, "Output corpus path (.fnde or .jsonl)")->required();

    auto* tr = app.add_subcommand("train", "Train one variant");
    tr->add_option("--config", config_path, "JSON config");
    tr->add_option("--corpus", corpus_path, "Corpus to train on (split unless --test-corpus)");
    tr->add_option("--test-corpus", test_corpus_path, "Separate test corpus");
    tr->add_option("--out", out_path, "Run directory");
    tr->add_option("--resume", resume_path, "Continue from a last.bin checkpoint");

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
    ev->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
    ev->add_option("--corpus", corpus_path, "Corpus to evaluate")->required();
    ev->add_option("--out", out_path, "Output directory");

    auto* ab = app.add_subcommand("ablate", "Train all seven variants and tabulate");
    ab->add_option("--config", config_path, "JSON config");
    ab->add_option("--corpus", corpus_path, "Corpus");
    ab->add_option("--test-corpus", test_corpus_path, "Separate test corpus");
    ab->add_option("--out", out_path, "Output directory");

    auto* an = app.add_subcommand("analyze", "Similarity bins and per-sample reports");
    an->add_option("--config", config_path, "JSON config");
    an->add_option("--corpus", corpus_path, "Corpus")->required();
    an->add_option("--checkpoint", checkpoint_path, "Use the gate's frozen standardization");
    an->add_option("--bins", bins, "Bin count (>= 2)");
    an->add_option("--ids", ids, "Comma-separated ids for per-sample reports (needs --checkpoint)");
    an->add_option("--out", out_path, "Output directory");

    auto* ex = app.add_subcommand("export", "Export features as CSV");
    ex->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
    ex->add_option("--corpus", corpus_path, "Corpus")->required();
    ex->add_option("--stage", stage, "aggregated|projected");
    ex->add_option("--out", out_path, "Output CSV path")->required();

    auto fail = [&](int code, std::string_view kind, const std::string& msg) {
        std::string clean = msg;
        for (auto& ch : clean) {
            if (ch == '\n') ch = ' ';
            if (ch == '"') ch = '\'';
        }
        err << "error=" << kind << " msg=\"" << clean << "\"\n";
        return code;
    };

    try {
        auto overrides = detail::take_overrides(args);
        std::reverse(args.begin(), args.end());
        try {
            app.parse(args);
        } catch (const CLI::CallForHelp&) {
            out << app.help();
            return kExitOk;
        } catch (const CLI::ParseError& e) {
            err << app.help();
            return fail(kExitConfig, "usage", e.what());
        }

        nlohmann::json cfg = nlohmann::json::object();
        if (!config_path.empty()) {
            cfg = detail::read_json_file(config_path);
            if (!cfg.is_object()) throw ConfigError("config must be a JSON object");
        }
        for (const auto& o : overrides) cfg[o.section][o.key] = detail::parse_override_value(o.value);
        RunConfig rc = run_config_from_json(cfg);
        if (!corpus_path.empty()) rc.corpus = corpus_path;
        if (!test_corpus_path.empty()) rc.test_corpus = test_corpus_path;
        if (bins != 0) rc.bins = bins;

        if (*gen) {
            const Corpus c = generate_synthetic(rc.synthetic);
            save_corpus(out_path, c);
            out << "wrote " << out_path << " records=" << c.records.size() << " dims=(" << c.dims().n_bert << ","
                << c.dims().n_resnet << "," << c.dims().n_clip << ")\n";
            return kExitOk;
        }

        if (*tr) {
            rc.model = normalized(rc.model);
            validate(rc.train, !resume_path.empty());
            const std::filesystem::path dir = out_path.empty() ? detail::default_out("train") : std::filesystem::path(out_path);
            std::filesystem::create_directories(dir);
            detail::write_json(dir / "config.json", to_json(rc));
            const auto data = detail::load_corpora(rc);
            auto run = detail::train_one(rc, data, dir, err, resume_path);
            detail::write_json(dir / "runlog.json", to_json(run.result.log));
            detail::write_json(dir / "metrics.json", to_json(run.metrics));
            const TableRow row{std::string(display_name(rc.model.variant)), run.metrics};
            detail::write_text(dir / "table.txt", format_table(row));
            out << format_table(row);
            out << "run_dir=" << dir.string() << " selected_epoch=" << run.result.log.selected_epoch
                << " test_accuracy=" << run.metrics.accuracy << "\n";
            return kExitOk;
        }

        if (*ev) {
            const Checkpoint ck = load_checkpoint(checkpoint_path);
            const Corpus c = load_corpus(corpus_path);
            const MetricsReport m = evaluate(ck.model, c, detail::corpus_id(corpus_path));
            const TableRow row{std::string(display_name(ck.model.config().variant)), m};
            if (!out_path.empty()) {
                std::filesystem::create_directories(out_path);
                detail::write_json(std::filesystem::path(out_path) / "metrics.json", to_json(m));
                detail::write_text(std::filesystem::path(out_path) / "table.txt", format_table(row));
            }
            out << format_table(row);
            return kExitOk;
        }

        if (*ab) {
            rc.model = normalized(rc.model);
            validate(rc.train);
            const std::filesystem::path dir = out_path.empty() ? detail::default_out("ablate") : std::filesystem::path(out_path);
            std::filesystem::create_directories(dir);
            detail::write_json(dir / "config.json", to_json(rc));
            const auto data = detail::load_corpora(rc);
            // Table order: partial-feature models first, then module ablations, then the full model.
            static constexpr Variant order[] = {Variant::multimodal_only, Variant::image_only, Variant::text_only,
                                                Variant::no_clip,         Variant::no_fusion,  Variant::no_attention,
                                                Variant::full};
            std::vector<TableRow> rows;
            nlohmann::json metrics = nlohmann::json::object();
            for (Variant v : order) {
                RunConfig vc = rc;
                vc.model.variant = v;
                vc.model.gate_enabled = rc.model.gate_enabled;
                vc.model = normalized(vc.model);
                err << "variant=" << to_string(v) << "\n";
                auto run = detail::train_one(vc, data, dir / std::string(to_string(v)), err);
                detail::write_json(dir / std::string(to_string(v)) / "runlog.json", to_json(run.result.log));
                metrics[std::string(to_string(v))] = to_json(run.metrics);
                rows.push_back({std::string(display_name(v)), run.metrics});
            }
            detail::write_json(dir / "metrics.json", metrics);
            const std::string table = format_table(rows);
            detail::write_text(dir / "table.txt", table);
            out << table;
            return kExitOk;
        }

        if (*an) {
            const Corpus c = load_corpus(rc.corpus);
            std::optional<Checkpoint> ck;
            if (!checkpoint_path.empty()) ck = load_checkpoint(checkpoint_path);
            const auto rep = similarity_bins(c, ck ? &ck->model : nullptr, rc.bins);
            const std::filesystem::path dir = out_path.empty() ? detail::default_out("analyze") : std::filesystem::path(out_path);
            std::filesystem::create_directories(dir);
            detail::write_json(dir / "bins.json", to_json(rep));
            detail::write_text(dir / "bins.csv", to_csv(rep));
            out << to_csv(rep);
            if (!ids.empty()) {
                if (!ck) throw ConfigError("--ids needs --checkpoint");
                std::vector<std::string> wanted;
                std::stringstream ss(ids);
                for (std::string id; std::getline(ss, id, ',');) {
                    if (!id.empty()) wanted.push_back(id);
                }
                nlohmann::json samples = nlohmann::json::array();
                for (const auto& s : sample_report(ck->model, c, wanted)) samples.push_back(to_json(s));
                detail::write_json(dir / "samples.json", samples);
                out << samples.dump(2) << "\n";
            }
            return kExitOk;
        }

        if (*ex) {
            const Checkpoint ck = load_checkpoint(checkpoint_path);
            const Corpus c = load_corpus(corpus_path);
            export_features(out_path, ck.model, c, feature_stage_from_string(stage));
            out << "wrote " << out_path << " rows=" << c.records.size() << "\n";
            return kExitOk;
        }
        return fail(kExitConfig, "usage", "no subcommand");
    } catch (const NotFoundError& e) {
        return fail(kExitMissingFile, e.kind(), e.what());
    } catch (const ConfigError& e) {
        return fail(kExitConfig, e.kind(), e.what());
    } catch (const NumericError& e) {
        return fail(kExitNumeric, e.kind(), e.what());
    } catch (const Error& e) {
        return fail(kExitFailure, e.kind(), e.what());
    } catch (const std::exception& e) {
        return fail(kExitFailure, "internal", e.what());
    }
}

} // namespace fndclip
