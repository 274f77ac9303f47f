#include "swcalib/calib.hpp"

#include <chrono>
#include <cmath>

#include "swcalib/errors.hpp"
#include "swcalib/ops.hpp"
#include "swcalib/rng.hpp"

namespace swcalib {

// ---------------------------------------------------------------------------
// Adam

void adam_update(std::span<double> param, std::span<const double> grad, AdamMoments& state, std::size_t t, double lr,
                 const AdamConfig& cfg) {
    if (param.size() != grad.size()) throw DimensionError("adam: param and grad sizes differ");
    if (t < 1) throw UsageError("adam: step index is 1-based");
    if (state.m.empty()) {
        state.m.assign(param.size(), 0.0);
        state.v.assign(param.size(), 0.0);
    }
    for (double g : grad) {
        if (!std::isfinite(g)) throw NonFiniteError("adam", "gradient");
    }
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < param.size(); ++i) {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        const double mhat = state.m[i] / c1;
        const double vhat = state.v[i] / c2;
        param[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

void Adam::add_group(std::vector<Tensor> params, double lr) {
    if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
    for (const auto& p : params) {
        if (!p.is_leaf() || !p.requires_grad()) throw UsageError("adam parameters must be leaves requiring grad");
    }
    std::vector<AdamMoments> moments(params.size());
    groups_.push_back({std::move(params), std::move(moments), lr});
}

void Adam::step() {
    ++t_;
    for (auto& g : groups_) {
        for (std::size_t i = 0; i < g.params.size(); ++i) {
            Tensor& p = g.params[i];
            const auto grad = p.grad_vector();
            adam_update(p.leaf_data(), grad, g.moments[i], t_, g.lr, cfg_);
        }
    }
}

void Adam::zero_grad() {
    for (auto& g : groups_) {
        for (auto& p : g.params) p.zero_grad();
    }
}

std::vector<Tensor> Adam::parameters() const {
    std::vector<Tensor> out;
    for (const auto& g : groups_) out.insert(out.end(), g.params.begin(), g.params.end());
    return out;
}

double clip_grad_norm(std::span<const Tensor> params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params) {
        for (double g : p.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NonFiniteError("clip_grad_norm", "gradient");
    if (norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        for (const auto& p : params) {
            for (double& g : p.node()->grad) g *= scale;
        }
    }
    return norm;
}

// ---------------------------------------------------------------------------
// Calibration

void CalibrationConfig::validate() const {
    loss.validate();
    if (epochs < 1 || batch_size < 1 || seq_len < 1 || n_sequences < 1) {
        throw ConfigError("epochs, batch_size, seq_len and n_sequences must be >= 1");
    }
    if (!(lwc_lr > 0.0) || !(let_lr > 0.0)) throw ConfigError("learning rates must be > 0");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
        throw ConfigError("adam betas must be in [0, 1)");
    }
    if (!(adam.eps > 0.0)) throw ConfigError("adam eps must be > 0");
    if (!(grad_clip > 0.0)) throw ConfigError("grad_clip must be > 0");
    if (!(let_scale_floor > 0.0)) throw ConfigError("let_scale_floor must be > 0");
    if (kl.enabled && (kl.steps < 1 || !(kl.lwc_lr > 0.0) || !(kl.let_lr > 0.0))) {
        throw ConfigError("kl fine-tuning needs steps >= 1 and positive learning rates");
    }
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::uint64_t projection_stream(const CalibrationConfig& cfg, std::size_t block) {
    return mix_seed(cfg.seed, cfg.loss.projection_seed, block);
}

void floor_let_scales(const BlockQuantizers& q, double floor) {
    for (const auto& lq : q.linear) {
        if (!lq.let) continue;
        Tensor s = lq.let->scale;
        for (double& v : s.leaf_data()) v = std::max(v, floor);
    }
}

Adam make_optimizer(const std::vector<BlockQuantizers*>& qs, double lwc_lr, double let_lr, const AdamConfig& cfg) {
    Adam opt(cfg);
    std::vector<Tensor> lwc, let;
    for (const auto* q : qs) {
        auto a = q->lwc_parameters();
        auto b = q->let_parameters();
        lwc.insert(lwc.end(), a.begin(), a.end());
        let.insert(let.end(), b.begin(), b.end());
    }
    opt.add_group(std::move(lwc), lwc_lr);
    if (!let.empty()) opt.add_group(std::move(let), let_lr);
    return opt;
}

std::vector<Tensor> block_outputs(const Model& m, std::size_t block, const std::vector<Tensor>& xs, std::size_t batch,
                                  std::size_t seq, const BlockQuantizers* q) {
    NoGradGuard no_grad;
    std::vector<Tensor> out;
    for (const auto& x : xs) out.push_back(block_forward_flat(x, batch, seq, m.blocks[block], m.spec, q));
    return out;
}

}  // namespace

ProjectionSet evaluation_projections(const CalibrationConfig& cfg, std::size_t block_index, std::size_t d) {
    return sample_projections(d, cfg.loss.n_proj, mix_seed(projection_stream(cfg, block_index), 0xe7a1));
}

LossEval evaluate_block_loss(std::size_t block_index, const Model& model, const BlockData& data,
                             const BlockQuantizers& params, const LossSpec& spec, const ProjectionSet& proj) {
    NoGradGuard no_grad;
    LossEval e;
    for (std::size_t b = 0; b < data.q_inputs.size(); ++b) {
        Tensor y = block_forward_flat(data.q_inputs[b], data.batch, data.seq, model.blocks[block_index], model.spec, &params);
        auto terms = combined_block_terms({data.fp_targets[b], y}, spec, proj);
        e.mse += terms.mse.item();
        e.sw += terms.sw.item();
        e.combined += terms.total.item();
    }
    const double n = static_cast<double>(data.q_inputs.size());
    e.mse /= n;
    e.sw /= n;
    e.combined /= n;
    return e;
}

BlockCalibration calibrate_block(std::size_t block_index, const Model& model, const BlockData& data,
                                 const BlockQuantizers& init, const CalibrationConfig& cfg) {
    cfg.validate();
    if (block_index >= model.blocks.size()) throw UsageError("block index out of range");
    if (data.q_inputs.empty() || data.q_inputs.size() != data.fp_targets.size()) {
        throw UsageError("calibration needs matching non-empty input and target batches");
    }
    const auto t0 = Clock::now();
    const std::size_t d = model.spec.d_model;
    BlockCalibration out{init.clone(true), {}};
    BlockReport& rep = out.report;
    rep.index = block_index;

    const ProjectionSet eval_proj = evaluation_projections(cfg, block_index, d);
    const std::uint64_t stream = projection_stream(cfg, block_index);
    const ProjectionSet fixed_proj = sample_projections(d, cfg.loss.n_proj, stream);

    try {
        rep.initial = evaluate_block_loss(block_index, model, data, out.params, cfg.loss, eval_proj);
    } catch (const NonFiniteError& e) {
        rep.failed_step = 0;
        rep.failure_reason = e.what();
        rep.seconds = seconds_since(t0);
        return out;
    }

    Adam opt = make_optimizer({&out.params}, cfg.lwc_lr, cfg.let_lr, cfg.adam);
    const auto params = opt.parameters();
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t b = 0; b < data.q_inputs.size(); ++b, ++step) {
            try {
                const ProjectionSet proj = cfg.loss.resample_projections
                                               ? sample_projections(d, cfg.loss.n_proj, mix_seed(stream, step + 1))
                                               : fixed_proj;
                opt.zero_grad();
                Tensor y = block_forward_flat(data.q_inputs[b], data.batch, data.seq, model.blocks[block_index],
                                              model.spec, &out.params);
                auto terms = combined_block_terms({data.fp_targets[b], y}, cfg.loss, proj);
                rep.trajectory.push_back({epoch, step, terms.mse.item(), terms.sw.item(), terms.total.item()});
                backward(terms.total);
                clip_grad_norm(params, cfg.grad_clip);
                opt.step();
                floor_let_scales(out.params, cfg.let_scale_floor);
            } catch (const NonFiniteError& e) {
                rep.failed_step = step;
                rep.failure_reason = e.what();
                rep.seconds = seconds_since(t0);
                return out;
            }
        }
    }
    try {
        rep.final = evaluate_block_loss(block_index, model, data, out.params, cfg.loss, eval_proj);
        rep.completed = true;
    } catch (const NonFiniteError& e) {
        rep.failed_step = step;
        rep.failure_reason = e.what();
    }
    rep.seconds = seconds_since(t0);
    return out;
}

ModelCalibration calibrate_model(const Model& model, const std::vector<TokenBatch>& batches, const QuantOptions& opts,
                                 const CalibrationConfig& cfg, const CalibrationHook& hook) {
    cfg.validate();
    if (batches.empty()) throw UsageError("calibration needs at least one batch");
    const auto t0 = Clock::now();
    const std::size_t baseline = memory_stats().current_bytes;
    reset_peak_memory();

    ModelCalibration out;
    out.report.quant_tag = opts.cfg.tag();
    out.quantizers = init_model_quantizers(model, opts, cfg.seed);

    const std::size_t batch = batches.front().batch, seq = batches.front().seq;
    std::vector<Tensor> fp_x;
    {
        NoGradGuard no_grad;
        for (const auto& b : batches) {
            if (b.batch != batch || b.seq != seq) throw UsageError("calibration batches differ in shape");
            fp_x.push_back(embed_tokens(model, b));
        }
    }
    std::vector<Tensor> q_x = fp_x;

    for (std::size_t i = 0; i < model.blocks.size(); ++i) {
        BlockData data{q_x, block_outputs(model, i, fp_x, batch, seq, nullptr), batch, seq};
        if (hook) hook(i, data);

        auto result = calibrate_block(i, model, data, out.quantizers[i], cfg);
        out.quantizers[i] = result.params.clone(false);
        out.report.blocks.push_back(std::move(result.report));
        if (!out.report.blocks.back().completed) {
            out.report.failed_block = i;
            break;
        }
        try {
            q_x = block_outputs(model, i, data.q_inputs, batch, seq, &out.quantizers[i]);
        } catch (const NonFiniteError& e) {
            out.report.blocks.back().completed = false;
            out.report.blocks.back().failure_reason = e.what();
            out.report.failed_block = i;
            break;
        }
        fp_x = std::move(data.fp_targets);
    }

    if (!out.report.failed_block && cfg.kl.enabled) {
        out.report.kl = kl_finetune_output(model, out.quantizers, batches, cfg);
        if (out.report.kl->failed_step) out.report.failed_block = model.blocks.size();
    }
    out.report.completed = !out.report.failed_block;
    out.report.peak_memory_bytes = model_bytes(model) + (memory_stats().peak_bytes - baseline);
    out.report.seconds = seconds_since(t0);
    return out;
}

Tensor kl_objective(const Model& model, const std::vector<BlockQuantizers>& quantizers, const TokenBatch& batch,
                    const ForwardTrace& reference, const CalibrationConfig& cfg) {
    ForwardTrace q = model_forward_flat(model, batch, &quantizers);
    if (cfg.kl.objective == KlObjective::kKl) {
        return kl_loss(reference.logits, q.logits, cfg.loss.kl_temperature, cfg.loss.kl_label_smoothing);
    }
    return hybrid_loss({reference.last_hidden, q.last_hidden}, reference.logits, q.logits, cfg.loss.hybrid_alpha,
                       cfg.loss.kl_temperature, cfg.loss.kl_label_smoothing, cfg.loss.mse_reduction);
}

KlReport kl_finetune_output(const Model& model, std::vector<BlockQuantizers>& quantizers,
                            const std::vector<TokenBatch>& batches, const CalibrationConfig& cfg) {
    cfg.validate();
    if (batches.empty()) throw UsageError("kl fine-tuning needs at least one batch");
    const auto t0 = Clock::now();
    KlReport rep;

    std::vector<ForwardTrace> reference;
    {
        NoGradGuard no_grad;
        for (const auto& b : batches) reference.push_back(model_forward_flat(model, b));
    }
    std::vector<BlockQuantizers> work;
    std::vector<BlockQuantizers*> ptrs;
    for (const auto& q : quantizers) work.push_back(q.clone(true));
    for (auto& q : work) ptrs.push_back(&q);
    Adam opt = make_optimizer(ptrs, cfg.kl.lwc_lr, cfg.kl.let_lr, cfg.adam);
    const auto params = opt.parameters();

    for (std::size_t step = 0; step < cfg.kl.steps; ++step) {
        const std::size_t b = step % batches.size();
        try {
            opt.zero_grad();
            Tensor loss = kl_objective(model, work, batches[b], reference[b], cfg);
            rep.losses.push_back(loss.item());
            backward(loss);
            clip_grad_norm(params, cfg.grad_clip);
            opt.step();
            for (const auto& q : work) floor_let_scales(q, cfg.let_scale_floor);
        } catch (const NonFiniteError& e) {
            rep.failed_step = step;
            rep.failure_reason = e.what();
            break;
        }
    }
    for (std::size_t i = 0; i < quantizers.size(); ++i) quantizers[i] = work[i].clone(false);
    rep.seconds = seconds_since(t0);
    return rep;
}

}  // namespace swcalib
