#include "swcalib/run.hpp"

#include <algorithm>
#include <chrono>

#include "swcalib/errors.hpp"
#include "swcalib/eval.hpp"
#include "swcalib/losses.hpp"
#include "swcalib/model_io.hpp"
#include "swcalib/rng.hpp"

namespace swcalib {

namespace {

constexpr std::uint64_t kProbeStream = 0x5b0be;

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string calibration_failure(const CalibrationReport& r) {
    if (!r.failed_block) return {};
    const std::size_t i = *r.failed_block;
    std::string why = i < r.blocks.size() ? r.blocks[i].failure_reason : (r.kl ? r.kl->failure_reason : "");
    const std::string where = i < r.blocks.size() ? "block " + std::to_string(i) : "kl fine-tuning";
    return "calibration failed at " + where + (why.empty() ? "" : ": " + why);
}

}  // namespace

Model run_model(const RunConfig& cfg) {
    if (!cfg.model_path) return Model::init(cfg.model, cfg.seed);
    ModelArtifact a = load_model(*cfg.model_path);
    if (!(a.model.spec == cfg.model)) throw ConfigError("model.path spec differs from the model section of the config");
    return std::move(a.model);
}

std::vector<TokenBatch> calibration_batches(const RunConfig& cfg) {
    const Corpus c = materialize_corpus(cfg.calib_corpus, cfg.model.vocab_size);
    const auto& k = cfg.calibration;
    return make_batches(c, k.seq_len, k.batch_size, k.n_sequences);
}

MetricsReport evaluate_run(const RunConfig& cfg, const Model& m, const std::vector<BlockQuantizers>* quantizers,
                           const CalibrationReport* calibration) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t baseline = memory_stats().current_bytes;
    reset_peak_memory();

    MetricsReport r;
    if (quantizers) r.quant_tag = cfg.quant.cfg.tag();
    r.seed = cfg.seed;

    std::string q_missing;
    if (!quantizers) q_missing = "no quantizer parameters";
    if (calibration && !calibration->completed) q_missing = calibration_failure(*calibration);

    const auto& k = cfg.calibration;
    std::vector<Corpus> corpora;
    for (const auto& spec : cfg.eval_corpora) {
        corpora.push_back(materialize_corpus(spec, m.spec.vocab_size));
        SplitMetrics s;
        s.name = spec.name;
        const auto fp = perplexity(m, corpora.back(), k.seq_len, k.batch_size, cfg.eval_max_windows);
        s.predictions = fp.predictions;
        s.full_precision = fp.perplexity;
        if (q_missing.empty()) {
            try {
                s.quantized = perplexity(m, corpora.back(), k.seq_len, k.batch_size, cfg.eval_max_windows, quantizers).perplexity;
            } catch (const NonFiniteError& e) {
                s.failure_reason = e.what();
            }
        } else {
            s.failure_reason = q_missing;
        }
        r.perplexity.push_back(std::move(s));
    }

    for (std::size_t i = 0; i < m.blocks.size(); ++i) {
        BlockMetrics b;
        b.index = i;
        if (!calibration) {
            b.status = "skipped";
            b.failure_reason = "not calibrated";
        } else if (i < calibration->blocks.size()) {
            const auto& br = calibration->blocks[i];
            b.status = br.completed ? "completed" : "failed";
            b.final = br.final;
            b.failure_reason = br.failure_reason;
            if (!b.final && b.failure_reason.empty()) b.failure_reason = "no final loss recorded";
        } else {
            b.status = "skipped";
            b.failure_reason = "an earlier block failed";
        }
        r.blocks.push_back(std::move(b));
    }

    auto& f = r.final_block;
    f.n_proj = cfg.sw_probe_projections;
    if (corpora.empty()) {
        f.failure_reason = "no eval corpus";
    } else {
        f.split = cfg.eval_corpora.front().name;
        if (!q_missing.empty()) {
            f.failure_reason = q_missing;
        } else {
            try {
                const std::size_t windows = std::min(corpora.front().ids.size() / k.seq_len, cfg.eval_max_windows);
                const auto batches = make_batches(corpora.front(), k.seq_len, std::min(k.batch_size, windows), windows);
                const auto outs = final_block_outputs(m, batches, *quantizers);
                const auto sw = sw_estimate(outs.fp, outs.q, cfg.sw_probe_projections, mix_seed(cfg.seed, kProbeStream));
                f.sw_distance = sw.value;
                f.sw_std_error = sw.std_error;
                NoGradGuard no_grad;
                f.mse = mse_loss({outs.fp, outs.q}).item();
            } catch (const NonFiniteError& e) {
                f.failure_reason = e.what();
            }
        }
    }

    r.peak_memory_bytes = model_bytes(m) + (memory_stats().peak_bytes - baseline);
    if (calibration) r.peak_memory_bytes = std::max(r.peak_memory_bytes, calibration->peak_memory_bytes);
    if (calibration) r.calibration_seconds = calibration->seconds;
    r.eval_seconds = seconds_since(t0);
    return r;
}

RunResult execute_run(const RunConfig& cfg, const CalibrationHook& hook) {
    cfg.validate();
    RunResult out{run_model(cfg), {}, {}, {}};
    auto cal = calibrate_model(out.model, calibration_batches(cfg), cfg.quant, cfg.calibration, hook);
    out.quantizers = std::move(cal.quantizers);
    out.calibration = std::move(cal.report);
    out.metrics = evaluate_run(cfg, out.model, &out.quantizers, &out.calibration);
    return out;
}

void write_run_outputs(const RunConfig& cfg, const RunResult& r) {
    const std::filesystem::path dir(cfg.output_dir);
    save_model(dir / "model.swq", r.model, &cfg.quant, &r.quantizers);
    write_json(dir / "config.json", cfg.to_json());
    write_json(dir / "calibration_report.json", to_json(r.calibration, r.quantizers, &r.metrics));
    write_text(dir / "trajectory.csv", trajectory_csv(r.calibration));
    if (r.calibration.kl) write_text(dir / "kl_trajectory.csv", kl_trajectory_csv(*r.calibration.kl));
    write_json(dir / "metrics.json", to_json(r.metrics));
}

}  // namespace swcalib
