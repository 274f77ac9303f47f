#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "swcalib/calib.hpp"
#include "swcalib/config.hpp"

namespace swcalib {

inline constexpr int kReportSchemaVersion = 1;

struct SplitMetrics {
    std::string name;
    std::size_t predictions = 0;
    std::optional<double> full_precision;
    std::optional<double> quantized;
    std::string failure_reason;  // set when quantized is null
};

struct BlockMetrics {
    std::size_t index = 0;
    std::string status;  // completed | failed | skipped
    std::optional<LossEval> final;
    std::string failure_reason;
};

struct FinalBlockMetrics {
    std::optional<double> sw_distance;
    std::optional<double> sw_std_error;
    std::optional<double> mse;
    std::size_t n_proj = 0;
    std::string split;
    std::string failure_reason;
};

struct MetricsReport {
    std::string quant_tag;  // empty when no quantized path was evaluated
    std::uint64_t seed = 0;
    std::vector<SplitMetrics> perplexity;
    std::vector<BlockMetrics> blocks;
    FinalBlockMetrics final_block;
    std::size_t peak_memory_bytes = 0;
    // Wall-clock figures; excluded from reproducibility comparisons.
    double calibration_seconds = 0.0;
    double eval_seconds = 0.0;
};

Json to_json(const MetricsReport& r);
// The report without its "timing" member: the part that must reproduce
// exactly for identical config and seed.
Json reproducible_part(const Json& report);

Json to_json(const CalibrationReport& r, const std::vector<BlockQuantizers>& quantizers,
             const MetricsReport* metrics = nullptr);

// One row per optimization step: block,epoch,step,mse,sw,combined.
std::string trajectory_csv(const CalibrationReport& r);
// One row per KL fine-tuning step: step,loss.
std::string kl_trajectory_csv(const KlReport& r);

void write_json(const std::filesystem::path& path, const Json& j);
void write_text(const std::filesystem::path& path, const std::string& text);

// Shortest-round-trip decimal form used in CSV output.
std::string format_double(double x);

}  // namespace swcalib
