#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "swcalib/losses.hpp"
#include "swcalib/model.hpp"

namespace swcalib {

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamMoments {
    std::vector<double> m;
    std::vector<double> v;
};

// One bias-corrected update at step t (1-based). Zero-initializes the
// moments on first use. Non-finite gradients raise NonFiniteError.
void adam_update(std::span<double> param, std::span<const double> grad, AdamMoments& state, std::size_t t, double lr,
                 const AdamConfig& cfg);

// Adam over parameter groups with their own learning rates, reading each
// parameter's accumulated grad.
class Adam {
   public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    void add_group(std::vector<Tensor> params, double lr);
    void step();
    void zero_grad();
    std::size_t steps() const { return t_; }
    std::vector<Tensor> parameters() const;

   private:
    struct Group {
        std::vector<Tensor> params;
        std::vector<AdamMoments> moments;
        double lr;
    };
    AdamConfig cfg_;
    std::vector<Group> groups_;
    std::size_t t_ = 0;
};

// Rescales all grads so their joint L2 norm is at most max_norm; returns the
// norm before clipping.
double clip_grad_norm(std::span<const Tensor> params, double max_norm);

// ---------------------------------------------------------------------------
// Calibration

enum class KlObjective { kKl, kHybrid };

struct KlFinetuneConfig {
    bool enabled = false;
    std::size_t steps = 50;
    KlObjective objective = KlObjective::kKl;
    double lwc_lr = 1e-3;
    double let_lr = 5e-4;
};

struct CalibrationConfig {
    LossSpec loss;
    std::size_t epochs = 20;
    std::size_t batch_size = 8;
    std::size_t seq_len = 64;
    std::size_t n_sequences = 16;  // calibration windows taken from the corpus
    double lwc_lr = 1e-2;
    double let_lr = 5e-3;
    AdamConfig adam;
    double grad_clip = 1.0;
    double let_scale_floor = 1e-4;
    std::uint64_t seed = 0;
    KlFinetuneConfig kl;

    void validate() const;
};

struct StepRecord {
    std::size_t epoch = 0;
    std::size_t step = 0;  // global step within the block
    double mse = 0.0;
    double sw = 0.0;
    double combined = 0.0;
};

// Losses averaged over every calibration batch at one fixed projection set.
struct LossEval {
    double mse = 0.0;
    double sw = 0.0;
    double combined = 0.0;
};

struct BlockReport {
    std::size_t index = 0;
    bool completed = false;
    std::optional<std::size_t> failed_step;
    std::string failure_reason;
    std::vector<StepRecord> trajectory;
    std::optional<LossEval> initial;
    std::optional<LossEval> final;
    double seconds = 0.0;
};

// Quantized-path inputs and full-precision targets of one block, one entry
// per calibration batch, flattened to [batch*seq x d].
struct BlockData {
    std::vector<Tensor> q_inputs;
    std::vector<Tensor> fp_targets;
    std::size_t batch = 0;
    std::size_t seq = 0;
};

struct BlockCalibration {
    BlockQuantizers params;
    BlockReport report;
};

// Optimizes the quantizer parameters of one block; raw weights are read
// only. A non-finite loss or gradient stops the block and marks it failed,
// keeping the trajectory so far and the last finite parameters.
BlockCalibration calibrate_block(std::size_t block_index, const Model& model, const BlockData& data,
                                 const BlockQuantizers& init, const CalibrationConfig& cfg);

// Mean block losses of `params` over all batches at a fixed projection set.
LossEval evaluate_block_loss(std::size_t block_index, const Model& model, const BlockData& data,
                             const BlockQuantizers& params, const LossSpec& spec, const ProjectionSet& proj);

// Fixed projection set used for initial/final block loss evaluation.
ProjectionSet evaluation_projections(const CalibrationConfig& cfg, std::size_t block_index, std::size_t d);

struct KlReport {
    std::vector<double> losses;  // objective value at each step, before the update
    std::optional<std::size_t> failed_step;
    std::string failure_reason;
    double seconds = 0.0;
};

struct CalibrationReport {
    std::string quant_tag;
    bool completed = false;
    std::optional<std::size_t> failed_block;
    std::vector<BlockReport> blocks;
    std::optional<KlReport> kl;
    // Model weights plus the tracker's peak above the bytes live at start.
    std::size_t peak_memory_bytes = 0;
    double seconds = 0.0;
};

// Called before block i is calibrated with the inputs it will see.
using CalibrationHook = std::function<void(std::size_t block, const BlockData& data)>;

struct ModelCalibration {
    std::vector<BlockQuantizers> quantizers;
    CalibrationReport report;
};

// Sequential block-wise calibration: block i trains on the quantized outputs
// of blocks < i against cached full-precision targets for block i.
ModelCalibration calibrate_model(const Model& model, const std::vector<TokenBatch>& batches, const QuantOptions& opts,
                                 const CalibrationConfig& cfg, const CalibrationHook& hook = {});

// Joint fine-tuning of every block's quantizer parameters against the KL (or
// hybrid) objective on the final logits. Updates `quantizers` in place.
KlReport kl_finetune_output(const Model& model, std::vector<BlockQuantizers>& quantizers,
                            const std::vector<TokenBatch>& batches, const CalibrationConfig& cfg);

// Objective used by kl_finetune_output at one batch.
Tensor kl_objective(const Model& model, const std::vector<BlockQuantizers>& quantizers, const TokenBatch& batch,
                    const ForwardTrace& reference, const CalibrationConfig& cfg);

}  // namespace swcalib
