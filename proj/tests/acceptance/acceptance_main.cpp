// SPDX-License-Identifier: Apache-2.0
//
// Acceptance criteria AC1-AC8. One PASS/FAIL line per criterion on stdout,
// details on the following indented lines. Exit status is nonzero if any
// criterion fails. Optional arguments select criteria by id (e.g. AC3 AC6).
#include "dqss/kernels.hpp"
#include "dqss/metrics.hpp"
#include "dqss/model_io.hpp"
#include "dqss/pipeline.hpp"
#include "dqss/qat.hpp"
#include "dqss/search.hpp"
#include "dqss/search_io.hpp"
#include "dqss/toy.hpp"

#include "support/brute_force.hpp"
#include "support/calibrator_cases.hpp"
#include "support/mixture_cases.hpp"
#include "support/qat_checks.hpp"
#include "support/search_gradient.hpp"
#include "support/temp_dir.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace dqss;
using testing::TempDir;

/// Collects failed conditions and free-form notes for one criterion.
class Report {
public:
    void require(bool ok, const std::string& what)
    {
        if (!ok) failures_.push_back(what);
    }
    void note(const std::string& line) { notes_.push_back(line); }
    bool passed() const { return failures_.empty(); }
    const std::vector<std::string>& failures() const { return failures_; }
    const std::vector<std::string>& notes() const { return notes_; }

private:
    std::vector<std::string> failures_;
    std::vector<std::string> notes_;
};

std::string fmt(const char* format, auto... args)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, format, args...);
    return buf;
}

struct Criterion {
    std::string id;
    std::string title;
    double time_limit_s;
    std::function<void(Report&)> body;
};

// ---------------------------------------------------------------- AC1

void efficient_mixture(Report& r)
{
    std::mt19937_64 rng(2024);
    double worst = 0.0, worst_naive = 0.0;
    std::size_t peak = 0, naive_peak = 0;
    std::map<std::size_t, std::size_t> per_n;
    for (int trial = 0; trial < 100; ++trial) {
        const testing::MixtureCase c = testing::random_mixture_case(rng);
        const std::size_t n = c.mixture.branches();
        const testing::MixtureCheck m = testing::check_mixture_case(c);
        ++per_n[n];
        worst = std::max(worst, m.deviation);
        worst_naive = std::max(worst_naive, m.naive_deviation);
        peak = std::max(peak, m.efficient_peak);
        naive_peak = std::max(naive_peak, m.naive_peak);
        r.require(m.deviation <= 1e-4, fmt("case %d: deviation %.3g > 1e-4", trial, m.deviation));
        r.require(m.efficient_ops == 1, fmt("case %d: efficient path ran %llu ops", trial,
                                            static_cast<unsigned long long>(m.efficient_ops)));
        r.require(m.efficient_peak == 2, fmt("case %d: efficient path held %zu mixture tensors", trial, m.efficient_peak));
        r.require(m.naive_ops == n * n, fmt("case %d: naive path ran %llu ops, expected %zu", trial,
                                            static_cast<unsigned long long>(m.naive_ops), n * n));
    }
    std::string mix;
    for (const auto& [n, count] : per_n) mix += fmt(" N=%zu:%zu", n, count);
    r.note(fmt("max relative deviation %.3g (naive N^2 path %.3g); cases%s", worst, worst_naive, mix.c_str()));
    r.note(fmt("ops per forward: efficient 1, naive N^2; peak full-size mixture tensors: efficient %zu, naive %zu",
               peak, naive_peak));
}

// ---------------------------------------------------------------- AC2

void theta_invariants(Report& r)
{
    std::mt19937_64 rng(7);
    std::normal_distribution<float> d(0.0f, 3.0f);
    auto dyadic = [&] { return std::round(d(rng) * 1024.0f) / 1024.0f; };
    double worst_sum = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<float> raw(1 + trial % 8);
        for (float& v : raw) v = dyadic();
        const auto t = softmax_theta(raw);
        double sum = 0.0;
        for (float v : t) sum += v;
        worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
        std::vector<float> shifted = raw;
        const float shift = dyadic() * 10.0f;
        for (float& v : shifted) v += shift;
        r.require(softmax_theta(shifted) == t, fmt("trial %d: softmax changed under shift %g", trial, shift));
    }
    r.require(worst_sum <= 1e-6, fmt("|sum theta - 1| reached %.3g", worst_sum));

    std::normal_distribution<float> g(0.0f, 1.0f);
    for (int trial = 0; trial < 200; ++trial) {
        ThetaState th(default_ptq_pool(), {"a", "b", "c"});
        for (std::size_t l = 0; l < 3; ++l) {
            for (float& v : th.alpha(l)->storage()) v = g(rng);
            for (float& v : th.beta(l)->storage()) v = g(rng);
        }
        ThetaState shifted = th.clone();
        for (std::size_t l = 0; l < 3; ++l) {
            const float a = g(rng) * 4.0f, b = g(rng) * 4.0f;
            for (float& v : shifted.alpha(l)->storage()) v += a;
            for (float& v : shifted.beta(l)->storage()) v += b;
        }
        r.require(finalize(shifted) == finalize(th), fmt("trial %d: finalize changed under a raw shift", trial));
    }

    const ThetaState init(default_ptq_pool(), {"a", "b"});
    bool quarter = true;
    for (std::size_t l = 0; l < 2; ++l) {
        for (float v : init.theta_alpha(l)) quarter = quarter && v == 0.25f;
        for (float v : init.theta_beta(l)) quarter = quarter && v == 0.25f;
    }
    r.require(quarter, "initial theta is not 0.25 at N = 4");
    r.note(fmt("max |sum theta - 1| %.3g over 1000 vectors; shift invariance bitwise; finalize stable over 200 states; "
               "init raw %.1f -> theta %.2f",
               worst_sum, init.alpha(0)->storage()[0], init.theta_alpha(0)[0]));
}

// ---------------------------------------------------------------- AC3

void gradient_correctness(Report& r)
{
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        for (MixtureMode mode : {MixtureMode::Efficient, MixtureMode::Naive}) {
            const auto g = testing::check_two_layer_gradient(seed, mode);
            worst = std::max(worst, g.relative_error);
            r.require(g.relative_error < 1e-3,
                      fmt("seed %llu (%s): relative error %.3g", static_cast<unsigned long long>(seed),
                          mode == MixtureMode::Efficient ? "efficient" : "naive", g.relative_error));
        }
    }
    r.note(fmt("max relative error %.3g over seeds 1-10, efficient and naive paths, central differences h=1e-5",
               worst));
}

// ---------------------------------------------------------------- AC4

void calibrator_oracles(Report& r)
{
    std::mt19937_64 rng(41);
    std::size_t kl_exact = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const int bits = trial % 2 == 0 ? 8 : 4;
        const auto t = testing::kl_trial(rng, bits);
        const bool ok = t.library_bins == t.oracle_bins && t.threshold_matches;
        kl_exact += ok ? 1 : 0;
        r.require(ok, fmt("KL histogram %d: kept %zu bins, oracle %zu", trial, t.library_bins, t.oracle_bins));
    }

    std::size_t admm_ok = 0;
    double mean_gain = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const int bits = trial % 2 == 0 ? 4 : 8;
        const auto t = testing::admm_trial(rng, static_cast<std::size_t>(50 + 10 * trial), bits);
        const bool ok = t.monotone && t.final_error <= t.initial_error;
        admm_ok += ok ? 1 : 0;
        mean_gain += 1.0 - t.final_error / t.initial_error;
        r.require(t.monotone, fmt("ADMM tensor %d: objective increased", trial));
        r.require(t.final_error <= t.initial_error,
                  fmt("ADMM tensor %d: error %.6g above Max_Abs %.6g", trial, t.final_error, t.initial_error));
    }

    std::size_t eq_ok = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const QuantTarget target = trial % 2 == 0 ? QuantTarget::Activation : QuantTarget::Weight;
        const auto t = testing::eq_trial(rng, target, trial % 4 < 2 ? 4 : 8);
        const bool ok = t.chosen >= t.best - 1e-9;
        eq_ok += ok ? 1 : 0;
        r.require(ok, fmt("EQ layer %d: chosen similarity %.12f below grid max %.12f", trial, t.chosen, t.best));
    }
    r.note(fmt("KL exact on %zu/20 histograms; ADMM monotone and <= Max_Abs on %zu/20 tensors (mean SSE reduction "
               "%.1f%%); EQ at grid maximum on %zu/20 layers",
               kl_exact, admm_ok, 100.0 * mean_gain / 20.0, eq_ok));
}

// ---------------------------------------------------------------- AC5

void quantizer_properties(Report& r)
{
    constexpr std::size_t kCount = 10000;
    for (int bits : {4, 8}) {
        std::mt19937_64 rng(500 + static_cast<std::uint64_t>(bits));
        std::size_t idem = 0, odd = 0, bound = 0, mono = 0, inside = 0, total = 0;
        for (float t : {0.37f, 1.0f, 6.5f}) {
            const QuantParams p = QuantParams::symmetric(t, bits);
            std::uniform_real_distribution<float> wide(-1.5f * t, 1.5f * t);
            std::vector<float> v(kCount);
            for (float& x : v) x = wide(rng);
            // Exact grid midpoints exercise the half-even rule.
            for (std::size_t i = 0; i < 200; ++i) v[i] = (static_cast<float>(i) - 100.0f + 0.5f) * p.scale;
            total += v.size();

            for (float x : v) {
                const float q = fake_quant_value(x, p);
                idem += std::bit_cast<std::uint32_t>(fake_quant_value(q, p)) != std::bit_cast<std::uint32_t>(q);
                odd += fake_quant_value(-x, p) != -q;
                if (std::abs(x) <= t) {
                    ++inside;
                    const double ulp =
                        std::nextafter(std::abs(x), std::numeric_limits<float>::infinity()) - std::abs(x);
                    const double err = std::abs(static_cast<double>(x) - static_cast<double>(q));
                    bound += err > 0.5 * static_cast<double>(p.scale) + ulp;
                }
            }
            std::sort(v.begin(), v.end());
            for (std::size_t i = 1; i < v.size(); ++i) mono += fake_quant_value(v[i - 1], p) > fake_quant_value(v[i], p);
        }
        r.require(idem == 0, fmt("%d-bit: %zu idempotence violations", bits, idem));
        r.require(odd == 0, fmt("%d-bit: %zu odd-symmetry violations", bits, odd));
        r.require(bound == 0, fmt("%d-bit: %zu values beyond s/2", bits, bound));
        r.require(mono == 0, fmt("%d-bit: %zu monotonicity violations", bits, mono));
        r.note(fmt("%d-bit: %zu values (%zu inside the clip range), 0 allowed violations; found idempotence %zu, "
                   "symmetry %zu, s/2 bound %zu, monotonicity %zu",
                   bits, total, inside, idem, odd, bound, mono));
    }
}

// ---------------------------------------------------------------- AC6

void dqss_superiority(Report& r)
{
    const toy::Benchmark b = toy::bar_benchmark();
    r.require(b.model.parameter_count() <= 50000, "toy CNN exceeds 50k parameters");
    r.require(b.model.searchable_layers().size() == 3, "toy CNN does not have 3 searchable layers");

    const auto pool = default_ptq_pool();
    const QParamTable qp = calibrate_graph(b.model, b.calib.batch(), pool, 8);
    SearchModel model = build_search_model(b.model, pool, qp);
    const Tensor eval_batch = b.eval.batch();
    const double none_acc = top1_accuracy(model.predict(eval_batch), b.eval.labels);

    const SearchConfig cfg;
    (void)search(model, b.calib, cfg);
    const Assignment pick = finalize(model.theta());
    const double dqss_acc = top1_accuracy(apply_assignment(b.model, pick, qp).predict(eval_batch), b.eval.labels);

    double best_uniform = 0.0;
    std::string uniform;
    for (CalibratorKind k : pool) {
        const double acc =
            top1_accuracy(apply_assignment(b.model, uniform_assignment(b.model, k), qp).predict(eval_batch),
                          b.eval.labels);
        best_uniform = std::max(best_uniform, acc);
        uniform += fmt(" %s=%.3f", std::string(calibrator_name(k)).c_str(), acc);
    }
    const double fp32 = top1_accuracy(b.model.predict(eval_batch), b.eval.labels);

    const auto bf = testing::brute_force_losses(b.model, qp, pool, b.calib.batch(), b.calib.labels);
    const std::size_t code = testing::assignment_code(b.model, pick, pool);
    const std::size_t better = testing::strictly_better(bf, code);
    const double decile = 0.1 * static_cast<double>(bf.loss.size());

    r.require(dqss_acc >= best_uniform - 0.005,
              fmt("DQSS %.4f below best uniform %.4f - 0.005", dqss_acc, best_uniform));
    r.require(dqss_acc >= none_acc, fmt("DQSS %.4f below DQSS-None %.4f", dqss_acc, none_acc));
    r.require(static_cast<double>(better) < decile,
              fmt("%zu of %zu assignments beat the pick (top decile needs < %.1f)", better, bf.loss.size(), decile));

    r.note(fmt("%zu params, %zu eval images; fp32=%.3f;%s", b.model.parameter_count(), b.eval.size(), fp32,
               uniform.c_str()));
    r.note(fmt("DQSS=%.3f DQSS-None=%.3f; brute force: %zu of %zu assignments strictly better (rank %.2f%%)",
               dqss_acc, none_acc, better, bf.loss.size(), 100.0 * static_cast<double>(better) /
                                                                static_cast<double>(bf.loss.size())));
    std::string picks;
    for (const auto& [name, la] : pick) {
        picks += fmt(" %s=%s/%s", name.c_str(), std::string(calibrator_name(la.activation)).c_str(),
                     std::string(calibrator_name(la.weight)).c_str());
    }
    r.note("pick (act/weight):" + picks);
}

// ---------------------------------------------------------------- AC7

void qat_contract(Report& r)
{
    const toy::Benchmark b = toy::moons_benchmark();
    const auto pool = default_qat_pool();

    for (std::size_t n = 1; n <= pool.size(); ++n) {
        const QatModel m(b.model, std::vector<QatStrategy>(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n)), 4);
        std::size_t expected = m.graph().parameter_count();
        for (std::size_t slot = 0; slot < m.layers().size(); ++slot) {
            const auto& layer = m.layers()[slot];
            r.require(layer.weight_storage_count() == 1, fmt("N=%zu layer %zu: %zu weight tensors", n, slot,
                                                             layer.weight_storage_count()));
            r.require(testing::weight_shaped_tensors(m, slot) == 1,
                      fmt("N=%zu layer %zu: extra weight-shaped learnable tensors", n, slot));
            expected += 2 * n;
            for (const auto& q : layer.activation) expected += q.learnable() ? 1 : 0;
            for (const auto& q : layer.weight_quantizers) expected += q.learnable() ? 1 : 0;
        }
        r.require(testing::learnable_numel(m) == expected,
                  fmt("N=%zu: %zu learnable values, expected %zu", n, testing::learnable_numel(m), expected));
    }

    QatModel model(b.model, pool, 4);
    QatConfig qc;
    const QatTrace trace = qat_train(model, b.train, qc);
    const PassCounters& c = trace.counters;
    const std::size_t batches = (b.train.size() + qc.batch_size - 1) / qc.batch_size;
    r.require(c.steps == c.forwards && c.forwards == c.backwards,
              fmt("counters differ: steps %zu forwards %zu backwards %zu", c.steps, c.forwards, c.backwards));
    r.require(c.steps == (qc.epochs - 1) * batches, fmt("%zu steps, expected %zu", c.steps, (qc.epochs - 1) * batches));
    r.require(c.observe_passes == batches, fmt("%zu warm-up passes, expected %zu", c.observe_passes, batches));

    const Tensor probe = b.train.batch(0, 64);
    const std::vector<int> probe_labels(b.train.labels.begin(), b.train.labels.begin() + 64);
    const double identity = testing::gradient_identity_error(model, probe, probe_labels);
    r.require(identity <= 1e-5, fmt("gradient accumulation identity error %.3g > 1e-5", identity));

    Graph twin = b.model.clone();
    FloatTrainConfig fc;
    fc.epochs = qc.epochs - 1;
    fc.lr = qc.lr_weight;
    fc.batch_size = qc.batch_size;
    fc.seed = qc.seed;
    (void)train_float(twin, b.train, fc);

    const Tensor train_batch = b.train.batch();
    const NamedAssignment assignment = model.finalize();
    const double twin_acc = top1_accuracy(twin.predict(train_batch), b.train.labels);
    const double mix_acc = top1_accuracy(model.predict(train_batch), b.train.labels);
    const double fin_acc = top1_accuracy(model.predict_finalized(train_batch, assignment), b.train.labels);
    const Tensor eval_batch = b.eval.batch();
    const double twin_eval = top1_accuracy(twin.predict(eval_batch), b.eval.labels);
    const double fin_eval = top1_accuracy(model.predict_finalized(eval_batch, assignment), b.eval.labels);
    r.require(fin_acc >= twin_acc - 0.05, fmt("4-bit QAT %.4f more than 5 points below FP32 twin %.4f", fin_acc,
                                              twin_acc));

    r.note(fmt("counters over %zu epochs: warm-up %zu, steps %zu = forwards %zu = backwards %zu", qc.epochs,
               c.observe_passes, c.steps, c.forwards, c.backwards));
    r.note(fmt("one weight tensor per layer for N = 1..%zu; gradient identity error %.3g", pool.size(), identity));
    r.note(fmt("train top-1: FP32 twin %.3f, QAT mixture %.3f, QAT finalized %.3f (eval: twin %.3f, finalized %.3f)",
               twin_acc, mix_acc, fin_acc, twin_eval, fin_eval));
}

// ---------------------------------------------------------------- AC8

std::map<std::string, std::string> tree(const std::filesystem::path& root)
{
    std::map<std::string, std::string> files;
    for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) files[std::filesystem::relative(e.path(), root).string()] = read_text_file(e.path());
    }
    return files;
}

std::string full_pipeline(const std::filesystem::path& out)
{
    using namespace dqss::pipeline;
    std::ostringstream stdout_text, log;
    PipelineConfig cfg;
    cfg.toy = "moons";
    cfg.out = out;
    run_make_toy(cfg, log);
    cfg.model = out / "model/model.json";
    cfg.data = out / "calib";
    cfg.eval_data = out / "eval";
    run_calibrate(cfg, log);
    run_search(cfg, stdout_text, log);
    run_eval(cfg, stdout_text, log);
    run_report(cfg, stdout_text);

    PipelineConfig qat = cfg;
    qat.data = out / "train";
    qat.out = out / "qat";
    qat.bits = 4;
    qat.epochs = 5;
    std::filesystem::create_directories(qat.out);
    run_qat_train(qat, stdout_text, log);
    std::string text = stdout_text.str() + log.str();
    const std::string dir = out.string();
    for (auto at = text.find(dir); at != std::string::npos; at = text.find(dir, at)) text.replace(at, dir.size(), "<out>");
    return text;
}

void determinism_and_round_trips(Report& r)
{
    TempDir a, b, rt;
    const std::string out_a = full_pipeline(a.path());
    const std::string out_b = full_pipeline(b.path());
    const auto tree_a = tree(a.path());
    const auto tree_b = tree(b.path());
    r.require(out_a == out_b, "console output differs between reruns (output directory masked)");
    r.require(tree_a == tree_b, "output trees differ between reruns");
    std::size_t bytes = 0;
    for (const auto& [name, content] : tree_a) bytes += content.size();
    r.note(fmt("two full runs (make-toy, calibrate, search, eval, report, qat-train): %zu files, %zu bytes, "
               "byte-identical",
               tree_a.size(), bytes));

    std::vector<std::string> formats;
    auto round_trip = [&](const std::string& name, bool ok) {
        r.require(ok, name + " does not round-trip");
        if (ok) formats.push_back(name);
    };

    const Graph g = load_model(a / "model/model.json");
    save_model(g, rt / "model/model.json");
    round_trip("model", tree(a / "model") == tree(rt / "model"));

    const CalibrationSet calib =
        load_calibration(a / "calib", std::numeric_limits<std::size_t>::max(), g.sample_shape(), g.num_classes());
    save_calibration(calib, rt / "calib");
    round_trip("calibration set", tree(a / "calib") == tree(rt / "calib"));

    const std::string qp_text = read_text_file(a / "qparams.json");
    const QParamTable qp = parse_qparams(qp_text);
    round_trip("qparams", serialize_qparams(qp) == qp_text && parse_qparams(serialize_qparams(qp)) == qp);

    const std::string as_text = read_text_file(a / "assignment.json");
    round_trip("assignment", serialize_assignment(parse_assignment(as_text)) == as_text);

    const std::string named_text = read_text_file(a / "qat/qat_assignment.json");
    round_trip("named assignment", serialize_named_assignment(parse_named_assignment(named_text, "qat")) == named_text);

    for (const char* trace : {"theta_trace.csv", "qat/qat_trace.csv"}) {
        const std::string text = read_text_file(a / trace);
        round_trip(trace, serialize_theta_trace(parse_theta_trace(text)) == text);
    }

    const QatCheckpoint ck = load_qat_checkpoint(a / "qat/checkpoint");
    save_qat_checkpoint(ck.model, ck.epochs_completed, rt / "checkpoint");
    round_trip("QAT checkpoint", tree(a / "qat/checkpoint") == tree(rt / "checkpoint"));

    std::mt19937_64 rng(8);
    std::size_t float_mismatch = 0;
    for (int i = 0; i < 100000; ++i) {
        const auto bits = static_cast<std::uint32_t>(rng());
        const float v = std::bit_cast<float>(bits);
        if (std::isnan(v)) continue;
        float_mismatch += std::bit_cast<std::uint32_t>(float_from_bits(float_to_bits(v))) != bits;
    }
    round_trip("float text encoding", float_mismatch == 0);

    std::string list;
    for (const auto& f : formats) list += (list.empty() ? "" : ", ") + f;
    r.note("bit-exact round trips: " + list);
}

} // namespace

int main(int argc, char** argv)
{
    const std::vector<Criterion> criteria = {
        {"AC1", "efficient mixture matches the N^2 expansion with one op", 30.0, efficient_mixture},
        {"AC2", "softmax and theta invariants", 0.0, theta_invariants},
        {"AC3", "importance gradients match finite differences", 60.0, gradient_correctness},
        {"AC4", "calibrators agree with independent oracles", 0.0, calibrator_oracles},
        {"AC5", "fake-quant property suite", 0.0, quantizer_properties},
        {"AC6", "8-bit DQSS on the bar CNN", 600.0, dqss_superiority},
        {"AC7", "shared-weight QAT contract", 900.0, qat_contract},
        {"AC8", "determinism and round trips", 0.0, determinism_and_round_trips},
    };
    const std::set<std::string> selected(argv + 1, argv + argc);

    int failed = 0;
    for (const auto& c : criteria) {
        if (!selected.empty() && !selected.count(c.id)) continue;
        Report r;
        const auto start = std::chrono::steady_clock::now();
        try {
            c.body(r);
        } catch (const std::exception& e) {
            r.require(false, std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (c.time_limit_s > 0.0) {
            r.require(secs < c.time_limit_s, fmt("took %.1f s, limit %.0f s", secs, c.time_limit_s));
        }
        const std::string limit = c.time_limit_s > 0.0 ? fmt(", limit %.0f s", c.time_limit_s) : std::string();
        std::printf("%s %s: %s (%.1f s%s)\n", r.passed() ? "PASS" : "FAIL", c.id.c_str(), c.title.c_str(), secs,
                    limit.c_str());
        for (const auto& n : r.notes()) std::printf("    %s\n", n.c_str());
        const std::size_t shown = std::min<std::size_t>(r.failures().size(), 10);
        for (std::size_t i = 0; i < shown; ++i) std::printf("    failed: %s\n", r.failures()[i].c_str());
        if (r.failures().size() > shown) std::printf("    ... %zu more\n", r.failures().size() - shown);
        std::fflush(stdout);
        failed += r.passed() ? 0 : 1;
    }
    return failed == 0 ? 0 : 1;
}
