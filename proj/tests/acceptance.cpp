// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>

#include "fndclip/cli.hpp"
#include "fndclip/fndclip.hpp"
#include "support/helpers.hpp"

using namespace fndclip;
using namespace testing_support;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ---------------------------------------------------------------------------

Verdict gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t checked = 0, failed = 0;
    std::string worst;
    double worst_rel = 0.0;
    for (Variant v : kAllVariants) {
        const auto cfg = tiny_config(v, 11);
        const auto recs = random_records(cfg.dims, 4, 5);
        const auto batch = assemble_batch(cfg, recs);
        FusionModel m(cfg);
        scramble(m, batch, 13);
        const auto r = check_model_gradients(m, batch, 17, 1e-5, 1e-4, 1e-7);
        checked += r.checked;
        failed += r.failed;
        if (r.worst_rel > worst_rel) {
            worst_rel = r.worst_rel;
            worst = std::string(to_string(v)) + ":" + r.worst_name;
        }
    }
    const double secs = seconds_since(t0);
    return {failed == 0 && secs < 60.0,
            fmt("variants=7 scalars=%zu failed=%zu worst_rel=%.2e (%s) time=%.1fs", checked, failed, worst_rel,
                worst.c_str(), secs)};
}

Verdict forward_oracle() {
    double worst = 0.0;
    std::size_t compared = 0;
    for (Variant v : {Variant::full, Variant::no_fusion, Variant::no_attention}) {
        FusionConfig cfg;
        cfg.variant = v;
        cfg.seed = 21;
        const auto recs = random_records(cfg.dims, 16, 23);
        const auto batch = assemble_batch(cfg, recs);
        FusionModel m(cfg);
        Rng rng(1);
        for (int k = 0; k < 3; ++k) m.forward_train(batch, rng);
        std::mt19937_64 gen(29);
        std::normal_distribution<double> n(0.0, 0.02);
        for (Param* p : m.parameters()) {
            for (auto& x : p->value.data()) x += n(gen);
        }
        const auto t = m.forward_eval(batch);
        const auto params = ref_params(m);
        const auto frozen = ref_frozen(m);
        for (std::size_t i = 0; i < recs.size(); ++i) {
            const auto r = ref::forward(params, std::string(to_string(v)), ref_sample(recs[i]), frozen);
            for (std::size_t c = 0; c < 2; ++c) worst = std::max(worst, std::abs(t.logits(i, c) - r.logits[c]));
            ++compared;
        }
    }
    return {worst <= 1e-10, fmt("samples=%zu variants=3 max_abs_diff=%.3e", compared, worst)};
}

Verdict separable() {
    bool ok = true;
    std::string detail;
    for (std::uint64_t seed : {101u, 102u, 103u}) {
        const auto t0 = std::chrono::steady_clock::now();
        SyntheticSpec s;
        s.n_real = s.n_fake = 1250;
        s.class_separation = 2.0;
        s.mismatch_prob_fake = 0.5;
        s.mismatch_prob_real = 0.5;
        s.seed = seed;
        const auto all = generate_synthetic(s);
        const auto [train_c, test_c] = split(all, 0.8, seed);
        FusionConfig cfg;
        cfg.seed = seed;
        TrainConfig t;
        t.seed = seed;
        const auto data = training_data(train_c, test_c, t);
        const auto r = train(FusionModel(cfg), data.train, data.eval, t);
        const double acc = evaluate(r.selected, test_c).accuracy;
        const double secs = seconds_since(t0);
        ok = ok && acc >= 0.95 && secs < 120.0;
        if (detail.empty()) detail = fmt("train=%zu test=%zu epochs=%zu", train_c.size(), test_c.size(), t.epochs);
        detail += fmt(" seed%llu: acc=%.4f epoch=%zu time=%.1fs", static_cast<unsigned long long>(seed), acc,
                      r.log.selected_epoch, secs);
    }
    return {ok, detail};
}

SyntheticSpec gate_informative_spec(std::uint64_t seed) {
    SyntheticSpec s;
    s.dims = {64, 128, 32};
    s.n_real = s.n_fake = 2500;
    s.class_separation = 0.5;
    s.mismatch_prob_fake = 0.8;
    s.mismatch_prob_real = 0.1;
    s.noise_sigma = 0.5;
    s.seed = seed;
    return s;
}

Verdict gate_utility() {
    const auto t0 = std::chrono::steady_clock::now();
    double sum_full = 0.0, sum_nf = 0.0;
    std::string per_seed;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto all = generate_synthetic(gate_informative_spec(seed));
        const auto [train_c, test_c] = split(all, 0.8, seed);
        TrainConfig t;
        t.seed = seed;
        const auto data = training_data(train_c, test_c, t);
        double acc[2];
        int k = 0;
        for (Variant v : {Variant::full, Variant::no_fusion}) {
            FusionConfig cfg;
            cfg.dims = all.dims();
            cfg.variant = v;
            cfg.seed = seed;
            const auto r = train(FusionModel(cfg), data.train, data.eval, t);
            acc[k++] = evaluate(r.selected, test_c).accuracy;
        }
        sum_full += acc[0];
        sum_nf += acc[1];
        per_seed += fmt(" seed%llu=%.3f/%.3f", static_cast<unsigned long long>(seed), acc[0], acc[1]);
    }
    const double gap = (sum_full - sum_nf) / 3.0;
    return {gap >= 0.05, fmt("mean_full=%.4f mean_no_fusion=%.4f gap=%.4f%s time=%.1fs", sum_full / 3.0,
                             sum_nf / 3.0, gap, per_seed.c_str(), seconds_since(t0))};
}

// Compact restatement of the property checks; the unit suite covers each in more depth.
Verdict invariants() {
    std::vector<std::string> failures;
    auto require = [&](bool ok, const char* what) {
        if (!ok) failures.push_back(what);
    };
    std::mt19937_64 gen(31);
    std::normal_distribution<double> n;

    {  // attention weights in (0,1) for random inputs
        Rng rng(1);
        auto att = ModalityAttention::create(3, rng);
        bool ok = true;
        for (int trial = 0; trial < 100; ++trial) {
            Tensor2 a(4, 8), b(4, 8), c(4, 8);
            for (auto* t : {&a, &b, &c}) {
                for (auto& v : t->data()) v = 3.0 * n(gen);
            }
            const Tensor2* ms[] = {&a, &b, &c};
            const auto w = att.forward(ms).att;
            for (double v : w.data()) ok = ok && v > 0.0 && v < 1.0;
        }
        require(ok, "attention_range");
    }
    {  // gate monotone in sim with frozen stats; fused norm follows
        GateState g;
        g.running_mean = 0.2;
        g.running_var = 0.05;
        bool ok = true;
        double prev = -1.0;
        for (double s = -1.0; s <= 1.0; s += 0.001) {
            const double v = gate_value(s, g);
            ok = ok && v >= prev;
            prev = v;
        }
        const auto cfg = tiny_config(Variant::full, 3);
        auto recs = random_records(cfg.dims, 4, 7);
        FusionModel m(cfg);
        scramble(m, assemble_batch(cfg, recs), 9);
        recs.resize(1);
        auto batch = assemble_batch(cfg, recs);
        double prev_norm = -1.0;
        for (double s = -1.0; s <= 1.0; s += 0.01) {
            batch.sims[0] = s;
            const auto t = m.forward_eval(batch);
            double sq = 0.0;
            for (double v : t.projected[index_of(Branch::fused)].row(0)) sq += v * v;
            ok = ok && std::sqrt(sq) >= prev_norm;
            prev_norm = std::sqrt(sq);
        }
        require(ok, "gate_monotonicity");
    }
    {  // att = (1,0,0) returns the text branch unchanged
        Tensor2 a(2, 5), b(2, 5), c(2, 5);
        for (auto* t : {&a, &b, &c}) {
            for (auto& v : t->data()) v = n(gen);
        }
        const Tensor2* ms[] = {&a, &b, &c};
        const auto att = Tensor2::from_rows({{1, 0, 0}, {1, 0, 0}});
        require(aggregate(ms, &att) == a, "aggregation_identity");
    }
    {  // cosine scale invariance
        bool ok = true;
        std::uniform_real_distribution<double> u(1e-3, 1e3);
        for (int trial = 0; trial < 200; ++trial) {
            std::vector<double> x(16), y(16);
            for (auto& v : x) v = n(gen);
            for (auto& v : y) v = n(gen);
            const double c = cosine_similarity(x, y);
            const double a = u(gen), b = u(gen);
            for (auto& v : x) v *= a;
            for (auto& v : y) v *= b;
            ok = ok && std::abs(cosine_similarity(x, y) - c) <= 1e-12;
        }
        require(ok, "cosine_scale_invariance");
    }
    {  // corpus round trip
        const CorpusDims d{7, 9, 5};
        const auto recs = random_records(d, 50, 3);
        const std::string bytes = encode_corpus(d, recs);
        const auto back = decode_corpus(bytes);
        bool ok = back.records.size() == recs.size() && encode_corpus(d, back.records) == bytes;
        for (std::size_t i = 0; ok && i < recs.size(); ++i) {
            ok = back.records[i].id == recs[i].id && back.records[i].f_clip_i == recs[i].f_clip_i;
        }
        require(ok, "corpus_round_trip");
    }
    {  // metrics rebuilt from counts
        bool ok = true;
        for (int trial = 0; trial < 500; ++trial) {
            std::vector<int> y(30), p(30);
            for (auto& v : y) v = static_cast<int>(gen() % 2);
            for (auto& v : p) v = static_cast<int>(gen() % 2);
            const auto r = compute_metrics(y, p);
            const auto& c = r.counts;
            ok = ok && c.total() == 30 && std::abs(r.accuracy - double(c.tp + c.tn) / 30.0) < 1e-15;
            if (r.fake.precision && r.fake.recall && *r.fake.precision + *r.fake.recall > 0) {
                const double f = 2 * *r.fake.precision * *r.fake.recall / (*r.fake.precision + *r.fake.recall);
                ok = ok && std::abs(*r.fake.f1 - f) < 1e-15;
            }
            ok = ok && r.fake.precision.has_value() == (c.tp + c.fp > 0);
        }
        require(ok, "metrics_consistency");
    }
    {  // count-weighted bin deviations sum to zero
        auto s = gate_informative_spec(4);
        s.n_real = s.n_fake = 300;
        const auto rep = similarity_bins(generate_synthetic(s), nullptr, 10);
        double sum = 0.0;
        for (const auto& b : rep.bins) {
            if (b.deviation) sum += static_cast<double>(b.count) * *b.deviation;
        }
        require(std::abs(sum / static_cast<double>(rep.total)) <= 1e-12, "bin_deviation_sum");
    }
    std::string detail = "checks=7";
    for (const auto& f : failures) detail += " failed:" + f;
    return {failures.empty(), detail};
}

Verdict similarity_pattern() {
    const auto rep = similarity_bins(generate_synthetic(gate_informative_spec(1)), nullptr, 10);
    const auto& lo = rep.bins.front();
    const auto& hi = rep.bins.back();
    if (!lo.real_rate || !hi.real_rate) return {false, "an extreme bin is empty"};
    const double diff = *hi.real_rate - *lo.real_rate;
    return {diff >= 0.3, fmt("bins=10 bottom_rate=%.3f (n=%zu) top_rate=%.3f (n=%zu) difference=%.3f",
                             *lo.real_rate, lo.count, *hi.real_rate, hi.count, diff)};
}

int cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv{"fndclip"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

Verdict report_tables() {
    TempDir tmp;
    auto spec = gate_informative_spec(5);
    spec.n_real = spec.n_fake = 300;
    write_corpus(tmp / "user.fnde", generate_synthetic(spec));
    std::ostringstream out, err;
    const std::string corpus = (tmp / "user.fnde").string();
    const std::vector<std::string> dims{"--model.n_bert=64", "--model.n_resnet=128", "--model.n_clip=32",
                                        "--train.epochs=3"};
    auto with = [&](std::vector<std::string> a) {
        a.insert(a.end(), dims.begin(), dims.end());
        return a;
    };
    const int train_code = cli(with({"train", "--corpus", corpus, "--out", (tmp / "run").string()}), out, err);
    const int ablate_code = cli(with({"ablate", "--corpus", corpus, "--out", (tmp / "ablate").string()}), out, err);
    if (train_code != 0 || ablate_code != 0) return {false, "cli failed: " + err.str().substr(0, 300)};

    const std::string t1 = detail::read_file_bytes(tmp / "run" / "table.txt");
    const std::string t2 = detail::read_file_bytes(tmp / "ablate" / "table.txt");
    const auto metrics = nlohmann::json::parse(detail::read_file_bytes(tmp / "run" / "metrics.json"));
    bool ok = true;
    for (const char* col : {"Accuracy", "Fake", "Real", "P", "R", "F1"}) ok = ok && t1.find(col) != std::string::npos;
    for (const char* key : {"accuracy", "fake", "real", "counts"}) ok = ok && metrics.contains(key);
    for (const char* cls : {"fake", "real"}) {
        for (const char* m : {"precision", "recall", "f1"}) ok = ok && metrics[cls].contains(m);
    }
    std::size_t rows = 0;
    for (Variant v : kAllVariants) rows += t2.find(std::string(display_name(v))) != std::string::npos;
    ok = ok && rows == 7;
    return {ok, fmt("report_columns=%s ablation_rows=%zu", ok ? "complete" : "incomplete", rows)};
}

Verdict determinism() {
    TempDir tmp;
    auto spec = gate_informative_spec(6);
    spec.n_real = spec.n_fake = 400;
    write_corpus(tmp / "c.fnde", generate_synthetic(spec));
    std::ostringstream out, err;
    auto run_once = [&](const std::string& dir) {
        return cli({"train", "--corpus", (tmp / "c.fnde").string(), "--out", (tmp / dir).string(), "--model.n_bert=64",
                    "--model.n_resnet=128", "--model.n_clip=32", "--train.epochs=5", "--train.seed=9",
                    "--model.seed=9"},
                   out, err);
    };
    if (run_once("a") != 0 || run_once("b") != 0) return {false, "cli failed: " + err.str().substr(0, 300)};
    auto losses = [&](const std::string& dir) {
        const auto log = nlohmann::json::parse(detail::read_file_bytes(tmp / dir / "runlog.json"));
        nlohmann::json l = nlohmann::json::array();
        for (const auto& e : log["epochs"]) l.push_back(e["train_loss"]);
        return l.dump();
    };
    const bool same_losses = losses("a") == losses("b");
    const bool same_ck = detail::read_file_bytes(tmp / "a" / "checkpoint.bin") ==
                         detail::read_file_bytes(tmp / "b" / "checkpoint.bin");
    const bool same_last = detail::read_file_bytes(tmp / "a" / "last.bin") ==
                           detail::read_file_bytes(tmp / "b" / "last.bin");
    return {same_losses && same_ck && same_last,
            fmt("loss_sequences=%s checkpoint=%s last=%s", same_losses ? "identical" : "differ",
                same_ck ? "identical" : "differ", same_last ? "identical" : "differ")};
}

} // namespace

int main() {
    const std::pair<const char*, std::function<Verdict()>> criteria[] = {
        {"gradient_check", gradients},     {"forward_oracle", forward_oracle},
        {"separable_corpus", separable},   {"gate_utility", gate_utility},
        {"invariant_suite", invariants},   {"similarity_bins", similarity_pattern},
        {"report_tables", report_tables},  {"determinism", determinism},
    };
    int failed = 0;
    int index = 1;
    for (const auto& [name, fn] : criteria) {
        Verdict v;
        try {
            v = fn();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        std::printf("criterion %d %-17s %s  %s\n", index++, name, v.pass ? "PASS" : "FAIL", v.detail.c_str());
        std::fflush(stdout);
        failed += !v.pass;
    }
    return failed == 0 ? 0 : 1;
}
