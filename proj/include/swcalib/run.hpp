#pragma once

#include <vector>

#include "swcalib/calib.hpp"
#include "swcalib/config.hpp"
#include "swcalib/model.hpp"
#include "swcalib/report.hpp"

namespace swcalib {

// The starting model of a run: loaded from model_path when set, otherwise
// seeded from the run seed.
Model run_model(const RunConfig& cfg);
std::vector<TokenBatch> calibration_batches(const RunConfig& cfg);

// Perplexity on every eval split (full precision, and quantized when a
// complete set of quantizers is given), per-block final losses, and the SW
// distance between full-precision and quantized final-block outputs.
MetricsReport evaluate_run(const RunConfig& cfg, const Model& m, const std::vector<BlockQuantizers>* quantizers,
                           const CalibrationReport* calibration);

struct RunResult {
    Model model;
    std::vector<BlockQuantizers> quantizers;
    CalibrationReport calibration;
    MetricsReport metrics;
};

// Calibration followed by evaluation. Calibration failures are recorded in
// the result, not thrown.
RunResult execute_run(const RunConfig& cfg, const CalibrationHook& hook = {});

// Writes model.swq (+ model.json sidecar), calibration_report.json,
// trajectory.csv, kl_trajectory.csv (when fine-tuned), metrics.json and the
// resolved config.json into cfg.output_dir.
void write_run_outputs(const RunConfig& cfg, const RunResult& r);

}  // namespace swcalib
