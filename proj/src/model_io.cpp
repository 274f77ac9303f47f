#include "swcalib/model_io.hpp"

#include <fstream>

#include "swcalib/config.hpp"
#include "swcalib/errors.hpp"

namespace swcalib {

namespace {

std::string quant_prefix(std::size_t block, std::size_t linear) {
    return "block" + std::to_string(block) + "." + kLinearNames[linear] + ".";
}

Tensor expect_shape(const WeightContainer& c, const std::string& name, const Shape& shape) {
    Tensor t = c.get(name);
    if (t.shape() != shape) {
        throw FormatError(FormatErrc::kMalformed,
                          "tensor '" + name + "' has shape " + shape_str(t.shape()) + ", expected " + shape_str(shape));
    }
    return t;
}

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& container_path) {
    auto p = container_path;
    return p.replace_extension(".json");
}

WeightContainer to_container(const Model& m, const std::vector<BlockQuantizers>* quantizers) {
    WeightContainer c;
    for (const auto& [name, t] : m.named_tensors()) c.add(name, t);
    if (!quantizers) return c;
    for (std::size_t b = 0; b < quantizers->size(); ++b) {
        for (std::size_t i = 0; i < kLinearCount; ++i) {
            const auto& lq = (*quantizers)[b].linear[i];
            const std::string p = quant_prefix(b, i);
            c.add(p + "lwc.gamma_raw", lq.lwc.gamma_raw);
            c.add(p + "lwc.beta_raw", lq.lwc.beta_raw);
            if (lq.let) {
                c.add(p + "let.delta", lq.let->delta);
                c.add(p + "let.s", lq.let->scale);
            }
        }
    }
    return c;
}

Model model_from_container(const WeightContainer& c, const ModelSpec& spec) {
    spec.validate();
    // A seeded init supplies the expected names and shapes.
    Model m = Model::init(spec, 0);
    const auto named = m.named_tensors();
    std::vector<Tensor> loaded;
    for (const auto& [name, t] : named) loaded.push_back(expect_shape(c, name, t.shape()));
    std::size_t k = 0;
    m.embed = loaded[k++];
    m.pos = loaded[k++];
    for (auto& bw : m.blocks) {
        bw.ln1_gain = loaded[k++];
        bw.ln1_shift = loaded[k++];
        for (auto& lw : bw.linear) {
            lw.w = loaded[k++];
            lw.b = loaded[k++];
        }
        bw.ln2_gain = loaded[k++];
        bw.ln2_shift = loaded[k++];
    }
    m.lnf_gain = loaded[k++];
    m.lnf_shift = loaded[k++];
    return m;
}

std::vector<BlockQuantizers> quantizers_from_container(const WeightContainer& c, const Model& m,
                                                       const QuantOptions& opts) {
    std::vector<BlockQuantizers> out;
    for (std::size_t b = 0; b < m.blocks.size(); ++b) {
        BlockQuantizers q = init_block_quantizers(m.blocks[b], opts, 0, false);
        for (std::size_t i = 0; i < kLinearCount; ++i) {
            auto& lq = q.linear[i];
            const std::string p = quant_prefix(b, i);
            lq.lwc.gamma_raw = expect_shape(c, p + "lwc.gamma_raw", lq.lwc.gamma_raw.shape());
            lq.lwc.beta_raw = expect_shape(c, p + "lwc.beta_raw", lq.lwc.beta_raw.shape());
            if (lq.let) {
                lq.let->delta = expect_shape(c, p + "let.delta", lq.let->delta.shape());
                lq.let->scale = expect_shape(c, p + "let.s", lq.let->scale.shape());
                check_let_scale(*lq.let);
            }
        }
        out.push_back(std::move(q));
    }
    return out;
}

void save_model(const std::filesystem::path& path, const Model& m, const QuantOptions* opts,
                const std::vector<BlockQuantizers>* quantizers) {
    if (quantizers && !opts) throw UsageError("saving quantizer parameters needs their options");
    save_container(path, to_container(m, quantizers));
    Json side{{"format", "SWQ1"},
              {"version", kContainerVersion},
              {"model", to_json(m.spec)},
              {"quant", quantizers ? to_json(*opts) : Json(nullptr)}};
    std::ofstream out(sidecar_path(path));
    if (!out) throw IoError("cannot write " + sidecar_path(path).string());
    out << side.dump(2) << "\n";
}

ModelArtifact load_model(const std::filesystem::path& path) {
    const auto side_path = sidecar_path(path);
    std::ifstream in(side_path);
    if (!in) throw IoError("missing model sidecar " + side_path.string());
    Json side;
    try {
        side = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("model sidecar " + side_path.string() + " is not valid JSON: " + e.what());
    }
    if (!side.is_object() || !side.contains("model")) throw ConfigError("model sidecar lacks 'model'");
    const WeightContainer c = load_container(path);
    ModelArtifact a{model_from_container(c, model_spec_from_json(side["model"], "sidecar.model")), std::nullopt,
                    std::nullopt};
    if (side.contains("quant") && !side["quant"].is_null()) {
        a.quant = quant_options_from_json(side["quant"], "sidecar.quant");
        a.quantizers = quantizers_from_container(c, a.model, *a.quant);
    }
    return a;
}

}  // namespace swcalib
