#include "swcalib/config.hpp"

#include <fstream>
#include <set>

#include "swcalib/errors.hpp"

namespace swcalib {

namespace {

// Reads one JSON object, tracking which keys were consumed so leftovers can
// be reported as unknown.
class ObjectReader {
   public:
    ObjectReader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
    }

    bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }
    void mark(const std::string& key) { seen_.insert(key); }

    const Json& raw(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

    template <typename T>
    T get(const std::string& key, T fallback) {
        seen_.insert(key);
        if (!j_.contains(key)) return fallback;
        return convert<T>(j_.at(key), path(key));
    }

    template <typename T>
    std::optional<T> optional(const std::string& key) {
        seen_.insert(key);
        if (!has(key)) return std::nullopt;
        return convert<T>(j_.at(key), path(key));
    }

    std::string path(const std::string& key) const { return where_ + "." + key; }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
        }
    }

   private:
    template <typename T>
    static T convert(const Json& v, const std::string& where) {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError(where + ": expected a boolean");
            return v.get<bool>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError(where + ": expected a string");
            return v.get<std::string>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError(where + ": expected a number");
            return v.get<T>();
        } else {
            if (!v.is_number_unsigned()) throw ConfigError(where + ": expected a non-negative integer");
            return static_cast<T>(v.get<std::uint64_t>());
        }
    }

    const Json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

Json optional_json(const std::optional<std::string>& s) { return s ? Json(*s) : Json(nullptr); }

}  // namespace

Json to_json(const ModelSpec& s) {
    return Json{{"vocab_size", s.vocab_size}, {"d_model", s.d_model},   {"n_heads", s.n_heads},
                {"n_blocks", s.n_blocks},     {"ff_mult", s.ff_mult}, {"max_seq_len", s.max_seq_len}};
}

ModelSpec model_spec_from_json(const Json& j, const std::string& where) {
    ObjectReader r(j, where);
    ModelSpec s;
    s.vocab_size = r.get<std::size_t>("vocab_size", s.vocab_size);
    s.d_model = r.get<std::size_t>("d_model", s.d_model);
    s.n_heads = r.get<std::size_t>("n_heads", s.n_heads);
    s.n_blocks = r.get<std::size_t>("n_blocks", s.n_blocks);
    s.ff_mult = r.get<std::size_t>("ff_mult", s.ff_mult);
    s.max_seq_len = r.get<std::size_t>("max_seq_len", s.max_seq_len);
    r.finish();
    s.validate();
    return s;
}

Json to_json(const QuantOptions& q) {
    return Json{{"tag", q.cfg.tag()},
                {"symmetric", q.cfg.symmetric},
                {"let", q.let ? Json(*q.let) : Json(nullptr)},
                {"hier_let", q.hier_let},
                {"lwc_init", q.lwc_init.str()}};
}

QuantOptions quant_options_from_json(const Json& j, const std::string& where) {
    QuantOptions q;
    if (j.is_string()) {
        q.cfg = QuantConfig::parse(j.get<std::string>());
        return q;
    }
    ObjectReader r(j, where);
    if (!r.has("tag")) throw ConfigError(where + ": missing 'tag'");
    q.cfg = QuantConfig::parse(r.get<std::string>("tag", ""));
    q.cfg.symmetric = r.get<bool>("symmetric", false);
    q.let = r.optional<bool>("let");
    q.hier_let = r.get<bool>("hier_let", false);
    q.lwc_init = LwcInit::parse(r.get<std::string>("lwc_init", "default"));
    r.finish();
    q.cfg.validate();
    return q;
}

Json to_json(const LossSpec& l) {
    return Json{{"sw_w", l.sw_w},
                {"n_proj", l.n_proj},
                {"kl_temperature", l.kl_temperature},
                {"kl_label_smoothing", l.kl_label_smoothing},
                {"hybrid_alpha", l.hybrid_alpha},
                {"projection_seed", l.projection_seed},
                {"mse_reduction", l.mse_reduction == MseReduction::kMean ? "mean" : "sum"},
                {"resample_projections", l.resample_projections}};
}

LossSpec loss_spec_from_json(const Json& j, const std::string& where) {
    ObjectReader r(j, where);
    LossSpec l;
    l.sw_w = r.get<double>("sw_w", l.sw_w);
    l.n_proj = r.get<std::size_t>("n_proj", l.n_proj);
    l.kl_temperature = r.get<double>("kl_temperature", l.kl_temperature);
    l.kl_label_smoothing = r.get<double>("kl_label_smoothing", l.kl_label_smoothing);
    l.hybrid_alpha = r.get<double>("hybrid_alpha", l.hybrid_alpha);
    l.projection_seed = r.get<std::uint64_t>("projection_seed", l.projection_seed);
    const auto red = r.get<std::string>("mse_reduction", "mean");
    if (red == "mean") {
        l.mse_reduction = MseReduction::kMean;
    } else if (red == "sum") {
        l.mse_reduction = MseReduction::kSum;
    } else {
        throw ConfigError(r.path("mse_reduction") + ": expected 'mean' or 'sum'");
    }
    l.resample_projections = r.get<bool>("resample_projections", l.resample_projections);
    r.finish();
    l.validate();
    return l;
}

Json to_json(const CorpusSpec& c) {
    return Json{{"name", c.name}, {"kind", to_string(c.kind)}, {"tokens", c.tokens}, {"seed", c.seed}, {"path", optional_json(c.path)}};
}

CorpusSpec corpus_spec_from_json(const Json& j, const std::string& where) {
    ObjectReader r(j, where);
    CorpusSpec c;
    c.kind = parse_corpus_kind(r.get<std::string>("kind", "uniform"));
    c.name = r.get<std::string>("name", to_string(c.kind));
    c.tokens = r.get<std::uint64_t>("tokens", c.tokens);
    c.seed = r.get<std::uint64_t>("seed", c.seed);
    c.path = r.optional<std::string>("path");
    r.finish();
    if (c.tokens < 1) throw ConfigError(where + ".tokens must be >= 1");
    return c;
}

Corpus materialize_corpus(const CorpusSpec& c, std::uint64_t vocab) {
    if (c.path) {
        Corpus loaded = load_corpus(*c.path);
        if (loaded.vocab > vocab) {
            throw ConfigError("corpus '" + *c.path + "' has vocab " + std::to_string(loaded.vocab) + " > model vocab " +
                              std::to_string(vocab));
        }
        return loaded;
    }
    return generate_corpus(vocab, c.tokens, c.kind, c.seed);
}

namespace {

Json kl_to_json(const KlFinetuneConfig& k) {
    return Json{{"enabled", k.enabled},
                {"steps", k.steps},
                {"objective", k.objective == KlObjective::kKl ? "kl" : "hybrid"},
                {"lwc_lr", k.lwc_lr},
                {"let_lr", k.let_lr}};
}

KlFinetuneConfig kl_from_json(const Json& j, const std::string& where) {
    ObjectReader r(j, where);
    KlFinetuneConfig k;
    k.enabled = r.get<bool>("enabled", k.enabled);
    k.steps = r.get<std::size_t>("steps", k.steps);
    const auto obj = r.get<std::string>("objective", "kl");
    if (obj == "kl") {
        k.objective = KlObjective::kKl;
    } else if (obj == "hybrid") {
        k.objective = KlObjective::kHybrid;
    } else {
        throw ConfigError(r.path("objective") + ": expected 'kl' or 'hybrid'");
    }
    k.lwc_lr = r.get<double>("lwc_lr", k.lwc_lr);
    k.let_lr = r.get<double>("let_lr", k.let_lr);
    r.finish();
    return k;
}

void calibration_from_json(const Json& j, CalibrationConfig& c) {
    ObjectReader r(j, "calibration");
    c.epochs = r.get<std::size_t>("epochs", c.epochs);
    c.batch_size = r.get<std::size_t>("batch_size", c.batch_size);
    c.seq_len = r.get<std::size_t>("seq_len", c.seq_len);
    c.n_sequences = r.get<std::size_t>("n_sequences", c.n_sequences);
    c.lwc_lr = r.get<double>("lwc_lr", c.lwc_lr);
    c.let_lr = r.get<double>("let_lr", c.let_lr);
    if (r.has("adam_betas")) {
        const Json& b = r.raw("adam_betas");
        if (!b.is_array() || b.size() != 2 || !b[0].is_number() || !b[1].is_number()) {
            throw ConfigError("calibration.adam_betas: expected [beta1, beta2]");
        }
        c.adam.beta1 = b[0].get<double>();
        c.adam.beta2 = b[1].get<double>();
    } else {
        r.mark("adam_betas");
    }
    c.adam.eps = r.get<double>("adam_eps", c.adam.eps);
    c.grad_clip = r.get<double>("grad_clip", c.grad_clip);
    c.let_scale_floor = r.get<double>("let_scale_floor", c.let_scale_floor);
    if (r.has("kl_finetune")) c.kl = kl_from_json(r.raw("kl_finetune"), "calibration.kl_finetune");
    r.finish();
}

}  // namespace

RunConfig RunConfig::from_json(const Json& j) {
    ObjectReader r(j, "config");
    RunConfig c;
    c.seed = r.get<std::uint64_t>("seed", c.seed);
    c.output_dir = r.get<std::string>("output_dir", c.output_dir);
    if (r.has("model")) {
        Json m = r.raw("model");
        if (m.is_object() && m.contains("path")) {
            if (!m["path"].is_null()) {
                if (!m["path"].is_string()) throw ConfigError("model.path: expected a string");
                c.model_path = m["path"].get<std::string>();
            }
            m.erase("path");
        }
        c.model = model_spec_from_json(m, "model");
    }
    if (!r.has("quant")) throw ConfigError("config: missing 'quant'");
    c.quant = quant_options_from_json(r.raw("quant"), "quant");
    if (r.has("loss")) c.calibration.loss = loss_spec_from_json(r.raw("loss"), "loss");
    if (r.has("calibration")) calibration_from_json(r.raw("calibration"), c.calibration);
    if (r.has("corpus")) {
        ObjectReader cr(r.raw("corpus"), "corpus");
        if (cr.has("calibration")) c.calib_corpus = corpus_spec_from_json(cr.raw("calibration"), "corpus.calibration");
        if (cr.has("eval")) {
            const Json& ev = cr.raw("eval");
            if (!ev.is_array()) throw ConfigError("corpus.eval: expected an array");
            c.eval_corpora.clear();
            for (std::size_t i = 0; i < ev.size(); ++i) {
                c.eval_corpora.push_back(corpus_spec_from_json(ev[i], "corpus.eval[" + std::to_string(i) + "]"));
            }
        }
        c.eval_max_windows = cr.get<std::size_t>("eval_max_windows", c.eval_max_windows);
        cr.finish();
    }
    c.sw_probe_projections = r.get<std::size_t>("sw_probe_projections", c.sw_probe_projections);
    r.finish();
    c.calibration.seed = c.seed;
    c.validate();
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    Json j;
    try {
        j = Json::parse(in, nullptr, true, false);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return from_json(j);
}

Json RunConfig::to_json() const {
    Json model_j = swcalib::to_json(model);
    model_j["path"] = optional_json(model_path);
    Json calib{{"epochs", calibration.epochs},
               {"batch_size", calibration.batch_size},
               {"seq_len", calibration.seq_len},
               {"n_sequences", calibration.n_sequences},
               {"lwc_lr", calibration.lwc_lr},
               {"let_lr", calibration.let_lr},
               {"adam_betas", Json::array({calibration.adam.beta1, calibration.adam.beta2})},
               {"adam_eps", calibration.adam.eps},
               {"grad_clip", calibration.grad_clip},
               {"let_scale_floor", calibration.let_scale_floor},
               {"kl_finetune", kl_to_json(calibration.kl)}};
    Json eval = Json::array();
    for (const auto& e : eval_corpora) eval.push_back(swcalib::to_json(e));
    return Json{{"seed", seed},
                {"output_dir", output_dir},
                {"model", model_j},
                {"quant", swcalib::to_json(quant)},
                {"loss", swcalib::to_json(calibration.loss)},
                {"calibration", calib},
                {"corpus",
                 {{"calibration", swcalib::to_json(calib_corpus)}, {"eval", eval}, {"eval_max_windows", eval_max_windows}}},
                {"sw_probe_projections", sw_probe_projections}};
}

void RunConfig::validate() const {
    model.validate();
    quant.cfg.validate();
    calibration.validate();
    if (calibration.seq_len > model.max_seq_len) {
        throw ConfigError("calibration.seq_len " + std::to_string(calibration.seq_len) + " exceeds model.max_seq_len");
    }
    if (calibration.n_sequences < calibration.batch_size) {
        throw ConfigError("calibration.n_sequences must be >= batch_size");
    }
    std::set<std::string> names;
    for (const auto& e : eval_corpora) {
        if (!names.insert(e.name).second) throw ConfigError("duplicate eval corpus name '" + e.name + "'");
    }
    if (eval_max_windows < 1) throw ConfigError("corpus.eval_max_windows must be >= 1");
    if (sw_probe_projections < 1) throw ConfigError("sw_probe_projections must be >= 1");
}

}  // namespace swcalib
