#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "swcalib/calib.hpp"
#include "swcalib/corpus.hpp"
#include "swcalib/model.hpp"

namespace swcalib {

using Json = nlohmann::ordered_json;

// Strict JSON <-> struct mapping. Every reader rejects unknown keys and
// wrong types with a ConfigError naming the offending path.
Json to_json(const ModelSpec& s);
ModelSpec model_spec_from_json(const Json& j, const std::string& where = "model");
Json to_json(const QuantOptions& q);
QuantOptions quant_options_from_json(const Json& j, const std::string& where = "quant");
Json to_json(const LossSpec& l);
LossSpec loss_spec_from_json(const Json& j, const std::string& where = "loss");

struct CorpusSpec {
    std::string name;
    CorpusKind kind = CorpusKind::kUniform;
    std::uint64_t tokens = 8192;
    std::uint64_t seed = 0;
    std::optional<std::string> path;  // load instead of generating

    bool operator==(const CorpusSpec&) const = default;
};
Json to_json(const CorpusSpec& c);
CorpusSpec corpus_spec_from_json(const Json& j, const std::string& where);
// Loads `path` when set, otherwise generates from the spec.
Corpus materialize_corpus(const CorpusSpec& c, std::uint64_t vocab);

struct RunConfig {
    std::uint64_t seed = 0;
    std::string output_dir = "run";
    ModelSpec model;
    std::optional<std::string> model_path;  // start from a saved model instead of a seeded init
    QuantOptions quant;
    CalibrationConfig calibration;  // calibration.seed mirrors seed
    CorpusSpec calib_corpus{"mixed", CorpusKind::kMixed, 4096, 1, std::nullopt};
    std::vector<CorpusSpec> eval_corpora{{"uniform", CorpusKind::kUniform, 8192, 101, std::nullopt},
                                         {"mixed", CorpusKind::kMixed, 8192, 102, std::nullopt}};
    std::size_t eval_max_windows = 64;
    std::size_t sw_probe_projections = 128;

    static RunConfig from_json(const Json& j);
    static RunConfig load(const std::filesystem::path& path);
    Json to_json() const;
    void validate() const;
};

}  // namespace swcalib
