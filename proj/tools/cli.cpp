#include "cli.hpp"

#include <CLI11.hpp>

#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "swcalib/config.hpp"
#include "swcalib/container.hpp"
#include "swcalib/corpus.hpp"
#include "swcalib/errors.hpp"
#include "swcalib/eval.hpp"
#include "swcalib/gradcheck.hpp"
#include "swcalib/model_io.hpp"
#include "swcalib/report.hpp"
#include "swcalib/run.hpp"

namespace swcalib::cli {

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const FormatError*>(&e)) return kFormat;
    if (dynamic_cast<const IoError*>(&e)) return kIo;
    if (dynamic_cast<const ConfigError*>(&e)) return kConfig;
    if (dynamic_cast<const UsageError*>(&e)) return kUsage;
    if (dynamic_cast<const NonFiniteError*>(&e)) return kCalibrationFailed;
    if (dynamic_cast<const DimensionError*>(&e) || dynamic_cast<const DomainError*>(&e)) return kDimension;
    return kInternal;
}

namespace {

struct GenCorpusArgs {
    std::uint64_t vocab = 256;
    std::uint64_t tokens = 8192;
    std::string kind = "uniform";
    std::uint64_t seed = 0;
    std::string out;
};

struct InitModelArgs {
    ModelSpec spec;
    std::uint64_t seed = 0;
    std::string out;
};

struct CalibrateArgs {
    std::string config;
    std::string output_dir;
};

struct EvalArgs {
    std::string model;
    std::string corpus;
    bool quantized = false;
    std::size_t seq = 64;
    std::size_t batch = 8;
    std::size_t max_windows = 0;
    std::size_t n_proj = 128;
    std::uint64_t seed = 0;
    std::string out;
};

struct SwArgs {
    std::string a, b;
    std::string tensor;
    std::size_t n_proj = 128;
    std::uint64_t seed = 0;
};

struct GradcheckArgs {
    std::string op = "all";
    std::size_t trials = 5;
    std::uint64_t seed = 2024;
    double tol = 1e-5;
};

struct SweepArgs {
    std::string config;
    std::string axis;
    std::vector<std::string> values;
    std::string out;
};

void emit(std::ostream& out, const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        out << text;
    } else {
        write_text(path, text);
    }
}

int cmd_gen_corpus(const GenCorpusArgs& a, std::ostream& out) {
    if (a.vocab < 1 || a.tokens < 1) throw UsageError("--vocab and --tokens must be >= 1");
    if (a.vocab > (std::uint64_t{1} << 32)) throw UsageError("--vocab must fit u32 token ids");
    const Corpus c = generate_corpus(a.vocab, a.tokens, parse_corpus_kind(a.kind), a.seed);
    save_corpus(a.out, c);
    out << "wrote " << c.ids.size() << " tokens (vocab " << c.vocab << ") to " << a.out << "\n";
    return kOk;
}

int cmd_init_model(const InitModelArgs& a, std::ostream& out) {
    const Model m = Model::init(a.spec, a.seed);
    save_model(a.out, m);
    out << "wrote model to " << a.out << " (sidecar " << sidecar_path(a.out).string() << ")\n";
    return kOk;
}

int cmd_calibrate(const CalibrateArgs& a, std::ostream& out, std::ostream& err) {
    RunConfig cfg = RunConfig::load(a.config);
    if (!a.output_dir.empty()) cfg.output_dir = a.output_dir;
    cfg.validate();
    const RunResult r = execute_run(cfg);
    write_run_outputs(cfg, r);
    if (!r.calibration.completed) {
        const std::size_t i = *r.calibration.failed_block;
        if (i < r.calibration.blocks.size()) {
            const auto& b = r.calibration.blocks[i];
            err << "calibration failed at block " << i;
            if (b.failed_step) err << " step " << *b.failed_step;
            err << ": " << b.failure_reason << "\n";
        } else {
            err << "calibration failed during kl fine-tuning: " << r.calibration.kl->failure_reason << "\n";
        }
        return kCalibrationFailed;
    }
    out << "calibrated " << r.calibration.blocks.size() << " blocks (" << r.calibration.quant_tag << "); outputs in "
        << cfg.output_dir << "\n";
    return kOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    ModelArtifact art = load_model(a.model);
    if (a.quantized && !art.quantizers) throw UsageError("--quantized given but " + a.model + " has no quantizer parameters");

    RunConfig cfg;
    cfg.seed = a.seed;
    cfg.model = art.model.spec;
    if (art.quant) cfg.quant = *art.quant;
    cfg.calibration.seq_len = a.seq;
    cfg.calibration.batch_size = a.batch;
    cfg.eval_corpora = {{std::filesystem::path(a.corpus).stem().string(), CorpusKind::kUniform, 0, 0, a.corpus}};
    cfg.eval_max_windows = a.max_windows > 0 ? a.max_windows : std::numeric_limits<std::size_t>::max();
    cfg.sw_probe_projections = a.n_proj;
    if (a.seq < 2 || a.seq > cfg.model.max_seq_len) throw UsageError("--seq must be in [2, max_seq_len]");
    if (a.batch < 1) throw UsageError("--batch must be >= 1");

    const auto* q = art.quantizers ? &*art.quantizers : nullptr;
    const MetricsReport r = evaluate_run(cfg, art.model, q, nullptr);
    emit(out, a.out, to_json(r).dump(2) + "\n");
    return kOk;
}

Tensor read_point_cloud(const std::string& path, const std::string& name) {
    const WeightContainer c = load_container(path);
    const NamedTensor* e = nullptr;
    if (!name.empty()) {
        e = c.find(name);
        if (!e) throw UsageError(path + " has no tensor named '" + name + "'");
    } else {
        if (c.entries().size() != 1) throw UsageError(path + " holds " + std::to_string(c.entries().size()) + " tensors; pick one with --tensor");
        e = &c.entries().front();
    }
    if (e->shape.size() == 1) return Tensor({e->shape[0], 1}, e->values);
    if (e->shape.size() != 2) throw DimensionError("tensor '" + e->name + "' must be [N x d]");
    return Tensor(e->shape, e->values);
}

int cmd_sw_distance(const SwArgs& a, std::ostream& out) {
    if (a.n_proj < 1) throw UsageError("--n-proj must be >= 1");
    const Tensor x = read_point_cloud(a.a, a.tensor), y = read_point_cloud(a.b, a.tensor);
    const SwEstimate sw = sw_estimate(x, y, a.n_proj, a.seed);
    out << format_double(sw.value) << "\n";
    Json j{{"sw_distance", sw.value}, {"std_error", sw.std_error}, {"n_proj", sw.n_proj}, {"seed", a.seed},
           {"samples", x.size(0)}, {"dim", x.size(1)}};
    out << j.dump() << "\n";
    return kOk;
}

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
    std::vector<const oracle::GradCheckCase*> cases;
    for (const auto& c : oracle::gradcheck_cases()) {
        if (a.op == "all" || a.op == c.name) cases.push_back(&c);
    }
    if (cases.empty()) throw UsageError("unknown op '" + a.op + "' (see gradcheck --list)");
    if (a.trials < 1) throw UsageError("--trials must be >= 1");

    std::size_t failed = 0;
    out << std::left << std::setw(28) << "op" << std::setw(8) << "trials" << std::setw(10) << "failures"
        << std::setw(14) << "worst_rel" << "result\n";
    for (const auto* c : cases) {
        const auto s = oracle::run_gradcheck_case(*c, a.trials, a.seed, a.tol);
        const bool ok = s.failures == 0;
        failed += ok ? 0 : 1;
        std::ostringstream worst;
        worst << std::scientific << std::setprecision(2) << s.worst_rel_error;
        out << std::left << std::setw(28) << s.name << std::setw(8) << s.trials << std::setw(10) << s.failures
            << std::setw(14) << worst.str() << (ok ? "PASS" : "FAIL") << "\n";
    }
    out << cases.size() - failed << "/" << cases.size() << " ops passed\n";
    return failed == 0 ? kOk : kGradcheckFailed;
}

int cmd_sweep(const SweepArgs& a, std::ostream& out, std::ostream& err) {
    const RunConfig base = RunConfig::load(a.config);
    if (a.axis != "sw_w" && a.axis != "n_proj") throw UsageError("--axis must be sw_w or n_proj");
    if (a.values.empty()) throw UsageError("--values needs at least one value");

    std::string csv = "value";
    for (const auto& e : base.eval_corpora) csv += ",ppl_" + e.name;
    csv += ",sw_distance\n";
    bool any_failed = false;
    for (const auto& v : a.values) {
        RunConfig cfg = base;
        try {
            std::size_t used = 0;
            if (a.axis == "sw_w") {
                cfg.calibration.loss.sw_w = std::stod(v, &used);
            } else {
                const long long n = std::stoll(v, &used);
                if (n < 1) throw UsageError("n_proj values must be >= 1");
                cfg.calibration.loss.n_proj = static_cast<std::size_t>(n);
            }
            if (used != v.size()) throw std::invalid_argument(v);
        } catch (const std::logic_error&) {
            throw UsageError("cannot parse sweep value '" + v + "'");
        }
        cfg.validate();
        const RunResult r = execute_run(cfg);
        if (!r.calibration.completed) {
            any_failed = true;
            err << a.axis << "=" << v << ": calibration failed at block " << *r.calibration.failed_block << "\n";
        }
        csv += v;
        for (const auto& s : r.metrics.perplexity) csv += "," + (s.quantized ? format_double(*s.quantized) : "");
        const auto& sw = r.metrics.final_block.sw_distance;
        csv += "," + (sw ? format_double(*sw) : "") + "\n";
    }
    emit(out, a.out, csv);
    return any_failed ? kCalibrationFailed : kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Sliced-Wasserstein augmented post-training quantization calibration"};
    app.require_subcommand(1);

    GenCorpusArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-corpus", "Generate a synthetic SWC1 token corpus");
    gen_cmd->add_option("--vocab", gen.vocab, "Vocabulary size")->capture_default_str();
    gen_cmd->add_option("--tokens", gen.tokens, "Number of tokens")->capture_default_str();
    gen_cmd->add_option("--kind", gen.kind, "uniform | mixed")->capture_default_str();
    gen_cmd->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
    gen_cmd->add_option("--out", gen.out, "Output path")->required();

    InitModelArgs init;
    auto* init_cmd = app.add_subcommand("init-model", "Write a seeded random model (SWQ1 + JSON sidecar)");
    init_cmd->add_option("--vocab", init.spec.vocab_size)->capture_default_str();
    init_cmd->add_option("--d-model", init.spec.d_model)->capture_default_str();
    init_cmd->add_option("--heads", init.spec.n_heads)->capture_default_str();
    init_cmd->add_option("--blocks", init.spec.n_blocks)->capture_default_str();
    init_cmd->add_option("--ff-mult", init.spec.ff_mult)->capture_default_str();
    init_cmd->add_option("--max-seq", init.spec.max_seq_len)->capture_default_str();
    init_cmd->add_option("--seed", init.seed)->capture_default_str();
    init_cmd->add_option("--out", init.out, "Container path")->required();

    CalibrateArgs cal;
    auto* cal_cmd = app.add_subcommand("calibrate", "Calibrate quantizers block by block and evaluate");
    cal_cmd->add_option("--config", cal.config, "Run config (JSON)")->required();
    cal_cmd->add_option("--output-dir", cal.output_dir, "Override output_dir from the config");

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "Perplexity of a saved model on a corpus");
    eval_cmd->add_option("--model", ev.model, "Model container")->required();
    eval_cmd->add_option("--corpus", ev.corpus, "SWC1 corpus")->required();
    eval_cmd->add_flag("--quantized", ev.quantized, "Require and report the quantized path");
    eval_cmd->add_option("--seq", ev.seq, "Window length")->capture_default_str();
    eval_cmd->add_option("--batch", ev.batch, "Windows per forward pass")->capture_default_str();
    eval_cmd->add_option("--max-windows", ev.max_windows, "Cap on windows (0 = all)")->capture_default_str();
    eval_cmd->add_option("--n-proj", ev.n_proj, "Projections for the final-block SW probe")->capture_default_str();
    eval_cmd->add_option("--seed", ev.seed, "Seed for the SW probe")->capture_default_str();
    eval_cmd->add_option("--out", ev.out, "Write the MetricsReport here instead of stdout");

    SwArgs sw;
    auto* sw_cmd = app.add_subcommand("sw-distance", "Sliced-Wasserstein distance between two [N x d] tensors");
    sw_cmd->add_option("--a", sw.a, "SWQ1 file")->required();
    sw_cmd->add_option("--b", sw.b, "SWQ1 file")->required();
    sw_cmd->add_option("--tensor", sw.tensor, "Tensor name when a file holds several");
    sw_cmd->add_option("--n-proj", sw.n_proj)->capture_default_str();
    sw_cmd->add_option("--seed", sw.seed)->capture_default_str();

    GradcheckArgs gc;
    bool list_ops = false;
    auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of registered ops and losses");
    gc_cmd->add_option("--op", gc.op, "Op name or 'all'")->capture_default_str();
    gc_cmd->add_option("--trials", gc.trials)->capture_default_str();
    gc_cmd->add_option("--seed", gc.seed)->capture_default_str();
    gc_cmd->add_option("--tol", gc.tol, "Relative error tolerance")->capture_default_str();
    gc_cmd->add_flag("--list", list_ops, "List registered ops");

    SweepArgs sweep;
    auto* sweep_cmd = app.add_subcommand("sweep", "Calibrate and evaluate once per value of one loss knob");
    sweep_cmd->add_option("--config", sweep.config)->required();
    sweep_cmd->add_option("--axis", sweep.axis, "sw_w | n_proj")->required();
    sweep_cmd->add_option("--values", sweep.values, "Comma-separated values")->required()->delimiter(',');
    sweep_cmd->add_option("--out", sweep.out, "CSV path (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kOk : kUsage;
    }

    try {
        if (gen_cmd->parsed()) return cmd_gen_corpus(gen, out);
        if (init_cmd->parsed()) return cmd_init_model(init, out);
        if (cal_cmd->parsed()) return cmd_calibrate(cal, out, err);
        if (eval_cmd->parsed()) return cmd_eval(ev, out);
        if (sw_cmd->parsed()) return cmd_sw_distance(sw, out);
        if (gc_cmd->parsed()) {
            if (list_ops) {
                for (const auto& c : oracle::gradcheck_cases()) out << c.name << "\n";
                return kOk;
            }
            return cmd_gradcheck(gc, out);
        }
        if (sweep_cmd->parsed()) return cmd_sweep(sweep, out, err);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
    return kUsage;
}

}  // namespace swcalib::cli
