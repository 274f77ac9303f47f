#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "swcalib/container.hpp"
#include "swcalib/model.hpp"

namespace swcalib {

// A model on disk: the SWQ1 container at `path` plus a JSON sidecar with the
// same basename (model.swq -> model.json) holding the model spec and, when
// quantizer parameters are stored, the quantizer options.
struct ModelArtifact {
    Model model;
    std::optional<QuantOptions> quant;
    std::optional<std::vector<BlockQuantizers>> quantizers;
};

std::filesystem::path sidecar_path(const std::filesystem::path& container_path);

// Quantizer tensors are stored as block<i>.<linear>.lwc.gamma_raw,
// .lwc.beta_raw, .let.delta, .let.s.
WeightContainer to_container(const Model& m, const std::vector<BlockQuantizers>* quantizers = nullptr);
Model model_from_container(const WeightContainer& c, const ModelSpec& spec);
std::vector<BlockQuantizers> quantizers_from_container(const WeightContainer& c, const Model& m,
                                                       const QuantOptions& opts);

void save_model(const std::filesystem::path& path, const Model& m, const QuantOptions* opts = nullptr,
                const std::vector<BlockQuantizers>* quantizers = nullptr);
ModelArtifact load_model(const std::filesystem::path& path);

}  // namespace swcalib
