#include "swcalib/report.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "swcalib/errors.hpp"

namespace swcalib {

namespace {

Json opt(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }
Json reason(const std::string& s) { return s.empty() ? Json(nullptr) : Json(s); }

Json loss_eval_json(const std::optional<LossEval>& e) {
    if (!e) return nullptr;
    return Json{{"mse", e->mse}, {"sw", e->sw}, {"combined", e->combined}};
}

std::string block_status(const CalibrationReport& r, std::size_t i) {
    if (i < r.blocks.size()) return r.blocks[i].completed ? "completed" : "failed";
    return "skipped";
}

}  // namespace

std::string format_double(double x) {
    char buf[32];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, x);
        if (std::strtod(buf, nullptr) == x) break;
    }
    return buf;
}

Json to_json(const MetricsReport& r) {
    Json j;
    j["schema_version"] = kReportSchemaVersion;
    j["quant_tag"] = r.quant_tag.empty() ? Json(nullptr) : Json(r.quant_tag);
    j["seed"] = r.seed;
    Json ppl = Json::array();
    for (const auto& s : r.perplexity) {
        ppl.push_back({{"split", s.name},
                       {"predictions", s.predictions},
                       {"full_precision", opt(s.full_precision)},
                       {"quantized", opt(s.quantized)},
                       {"failure_reason", reason(s.failure_reason)}});
    }
    j["perplexity"] = std::move(ppl);
    Json blocks = Json::array();
    for (const auto& b : r.blocks) {
        blocks.push_back({{"index", b.index},
                          {"status", b.status},
                          {"final_loss", loss_eval_json(b.final)},
                          {"failure_reason", reason(b.failure_reason)}});
    }
    j["blocks"] = std::move(blocks);
    const auto& f = r.final_block;
    j["final_block"] = {{"split", f.split},
                        {"n_proj", f.n_proj},
                        {"sw_distance", opt(f.sw_distance)},
                        {"sw_std_error", opt(f.sw_std_error)},
                        {"mse", opt(f.mse)},
                        {"failure_reason", reason(f.failure_reason)}};
    j["resources"] = {{"peak_memory_bytes", r.peak_memory_bytes}};
    j["timing"] = {{"calibration_seconds", r.calibration_seconds}, {"eval_seconds", r.eval_seconds}};
    return j;
}

Json reproducible_part(const Json& report) {
    Json out = report;
    if (out.is_object()) out.erase("timing");
    return out;
}

Json to_json(const CalibrationReport& r, const std::vector<BlockQuantizers>& quantizers, const MetricsReport* metrics) {
    Json j;
    j["schema_version"] = kReportSchemaVersion;
    j["quant_tag"] = r.quant_tag;
    j["completed"] = r.completed;
    j["failed_block"] = r.failed_block ? Json(*r.failed_block) : Json(nullptr);

    Json blocks = Json::array();
    for (std::size_t i = 0; i < r.blocks.size(); ++i) {
        const auto& b = r.blocks[i];
        Json traj = Json::array();
        for (const auto& s : b.trajectory) {
            traj.push_back({{"epoch", s.epoch}, {"step", s.step}, {"mse", s.mse}, {"sw", s.sw}, {"combined", s.combined}});
        }
        blocks.push_back({{"index", b.index},
                          {"status", block_status(r, i)},
                          {"failed_step", b.failed_step ? Json(*b.failed_step) : Json(nullptr)},
                          {"failure_reason", reason(b.failure_reason)},
                          {"initial_loss", loss_eval_json(b.initial)},
                          {"final_loss", loss_eval_json(b.final)},
                          {"trajectory", std::move(traj)}});
    }
    j["blocks"] = std::move(blocks);

    if (r.kl) {
        j["kl_finetune"] = {{"losses", r.kl->losses},
                            {"failed_step", r.kl->failed_step ? Json(*r.kl->failed_step) : Json(nullptr)},
                            {"failure_reason", reason(r.kl->failure_reason)}};
    } else {
        j["kl_finetune"] = nullptr;
    }

    Json params = Json::object();
    for (std::size_t b = 0; b < quantizers.size() && b < r.blocks.size(); ++b) {
        for (std::size_t i = 0; i < kLinearCount; ++i) {
            const auto& lq = quantizers[b].linear[i];
            const std::string p = "block" + std::to_string(b) + "." + kLinearNames[i];
            params[p + ".lwc.gamma_raw"] = lq.lwc.gamma_raw.to_vector();
            params[p + ".lwc.beta_raw"] = lq.lwc.beta_raw.to_vector();
            if (lq.let) {
                params[p + ".let.delta"] = lq.let->delta.to_vector();
                params[p + ".let.s"] = lq.let->scale.to_vector();
            }
        }
    }
    j["final_params"] = std::move(params);
    j["metrics"] = metrics ? to_json(*metrics) : Json(nullptr);
    j["resources"] = {{"peak_memory_bytes", r.peak_memory_bytes}};

    Json block_seconds = Json::array();
    for (const auto& b : r.blocks) block_seconds.push_back(b.seconds);
    j["timing"] = {{"total_seconds", r.seconds},
                   {"block_seconds", std::move(block_seconds)},
                   {"kl_seconds", r.kl ? Json(r.kl->seconds) : Json(nullptr)}};
    return j;
}

std::string trajectory_csv(const CalibrationReport& r) {
    std::string out = "block,epoch,step,mse,sw,combined\n";
    for (const auto& b : r.blocks) {
        for (const auto& s : b.trajectory) {
            out += std::to_string(b.index) + "," + std::to_string(s.epoch) + "," + std::to_string(s.step) + "," +
                   format_double(s.mse) + "," + format_double(s.sw) + "," + format_double(s.combined) + "\n";
        }
    }
    return out;
}

std::string kl_trajectory_csv(const KlReport& r) {
    std::string out = "step,loss\n";
    for (std::size_t i = 0; i < r.losses.size(); ++i) out += std::to_string(i) + "," + format_double(r.losses[i]) + "\n";
    return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f << text;
    if (!f) throw IoError("failed writing " + path.string());
}

void write_json(const std::filesystem::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

}  // namespace swcalib
