#include "swcalib/quant.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <regex>
#include <sstream>

#include "swcalib/errors.hpp"
#include "swcalib/ops.hpp"
#include "swcalib/rng.hpp"

namespace swcalib {

namespace {

constexpr double kMinStep = 1e-8;
// Factors are kept strictly inside (0, 1) so their logits stay finite.
constexpr double kMinFactor = 1e-6;
constexpr double kMaxFactor = 1.0 - 1e-9;

int parse_int(const std::string& s, const char* what) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw ConfigError(std::string("bad ") + what + ": " + s);
    return v;
}

double parse_double(const std::string& s, const char* what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw ConfigError(std::string("bad ") + what + ": " + s);
        return v;
    } catch (const std::logic_error&) {
        throw ConfigError(std::string("bad ") + what + ": " + s);
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// QuantConfig

QuantConfig QuantConfig::parse(std::string_view tag) {
    static const std::regex kTag(R"(W(\d+)A(\d+)(?:g(\d+|T))?)");
    std::smatch m;
    const std::string s(tag);
    if (!std::regex_match(s, m, kTag)) throw ConfigError("bad quant tag '" + s + "', expected e.g. W2A16g128");
    QuantConfig cfg;
    cfg.weight_bits = parse_int(m[1], "weight bits");
    cfg.act_bits = parse_int(m[2], "activation bits");
    if (!m[3].matched) {
        cfg.grouping = Grouping::kPerChannel;
    } else if (m[3] == "T") {
        cfg.grouping = Grouping::kPerTensor;
    } else {
        cfg.grouping = Grouping::kGroups;
        cfg.group_size = static_cast<std::size_t>(parse_int(m[3], "group size"));
    }
    cfg.validate();
    return cfg;
}

std::string QuantConfig::tag() const {
    std::ostringstream os;
    os << 'W' << weight_bits << 'A' << act_bits;
    if (grouping == Grouping::kGroups) os << 'g' << group_size;
    if (grouping == Grouping::kPerTensor) os << "gT";
    return os.str();
}

void QuantConfig::validate() const {
    if (weight_bits < 1 || weight_bits > 8) {
        throw ConfigError("weight_bits must be in 1..8, got " + std::to_string(weight_bits));
    }
    if (act_bits < 1) throw ConfigError("act_bits must be >= 1");
    if (grouping == Grouping::kGroups && group_size == 0) throw ConfigError("group size must be >= 1");
}

// ---------------------------------------------------------------------------
// Grouping

std::size_t group_length(const Shape& weight_shape, const QuantConfig& cfg) {
    if (weight_shape.size() != 2) throw DimensionError("weights must be 2-D, got " + shape_str(weight_shape));
    const std::size_t in = weight_shape[0], out = weight_shape[1];
    if (in == 0 || out == 0) throw ConfigError("empty quantization group");
    switch (cfg.grouping) {
        case Grouping::kPerChannel:
            return in;
        case Grouping::kPerTensor:
            return in * out;
        case Grouping::kGroups:
            if (cfg.group_size == 0) throw ConfigError("empty quantization group");
            if (in % cfg.group_size != 0) {
                throw ConfigError("group size " + std::to_string(cfg.group_size) + " does not divide input dim " +
                                  std::to_string(in));
            }
            return cfg.group_size;
    }
    throw ConfigError("unknown grouping");
}

std::size_t group_count(const Shape& weight_shape, const QuantConfig& cfg) {
    return shape_numel(weight_shape) / group_length(weight_shape, cfg);
}

Tensor group_weights(const Tensor& w, const QuantConfig& cfg) {
    const std::size_t g = group_length(w.shape(), cfg);
    return reshape(transpose(w), {w.numel() / g, g});
}

Tensor ungroup_weights(const Tensor& grouped, const Shape& weight_shape) {
    return transpose(reshape(grouped, {weight_shape[1], weight_shape[0]}));
}

// ---------------------------------------------------------------------------
// Fake quantization

ClipBounds lwc_clip_bounds(const Tensor& grouped, const LwcParams& lwc, bool symmetric) {
    const Shape expect{grouped.size(0), 1};
    if (lwc.gamma_raw.shape() != expect || lwc.beta_raw.shape() != expect) {
        throw DimensionError("LWC params must be " + shape_str(expect) + ", got " + shape_str(lwc.gamma_raw.shape()));
    }
    if (symmetric) {
        Tensor a = sigmoid(lwc.gamma_raw) * max_along(abs(grouped), 1);
        return {neg(a), a};
    }
    return {sigmoid(lwc.beta_raw) * min_along(grouped, 1), sigmoid(lwc.gamma_raw) * max_along(grouped, 1)};
}

Tensor fake_quantize_range(const Tensor& grouped, const Tensor& lower, const Tensor& upper, int bits) {
    if (bits < 1 || bits > 30) throw ConfigError("quantizer bits must be in 1..30, got " + std::to_string(bits));
    if (grouped.rank() != 2 || grouped.size(1) == 0) throw ConfigError("empty quantization group");
    const double qmax = std::ldexp(1.0, bits) - 1.0;
    Tensor step = clamp_min((upper - lower) / qmax, kMinStep);
    Tensor zero_point = round_ste(neg(lower) / step);
    Tensor q = round_ste(grouped / step + zero_point, 0.0, qmax);
    return (q - zero_point) * step;
}

Tensor fake_quantize_bits(const Tensor& w, int bits, const QuantConfig& cfg, const LwcParams& lwc) {
    Tensor grouped = group_weights(w, cfg);
    const auto bounds = lwc_clip_bounds(grouped, lwc, cfg.symmetric);
    return ungroup_weights(fake_quantize_range(grouped, bounds.lower, bounds.upper, bits), w.shape());
}

Tensor fake_quantize(const Tensor& w, const QuantConfig& cfg, const LwcParams& lwc) {
    cfg.validate();
    return fake_quantize_bits(w, cfg.weight_bits, cfg, lwc);
}

Tensor quantize_activations(const Tensor& x, int bits) {
    if (x.rank() != 2) throw DimensionError("quantize_activations expects [N x d]");
    return fake_quantize_range(x, min_along(x, 1), max_along(x, 1), bits);
}

// ---------------------------------------------------------------------------
// LET

LetParams LetParams::identity(std::size_t d, bool requires_grad) {
    return {Tensor::zeros({d}, requires_grad), Tensor::full({d}, 1.0, requires_grad)};
}

void check_let_scale(const LetParams& let) {
    for (double s : let.scale.data()) {
        if (!(s > 0.0)) throw DomainError("LET scale must be strictly positive");
    }
}

LetOutputs let_transform(const Tensor& x, const Tensor& w, const Tensor& bias, const LetParams& let) {
    check_let_scale(let);
    if (x.rank() != 2 || w.rank() != 2) throw DimensionError("let_transform expects x [N x d], w [d x m]");
    const std::size_t d = w.size(0), m = w.size(1);
    if (x.size(1) != d || let.delta.shape() != Shape{d} || let.scale.shape() != Shape{d} ||
        bias.shape() != Shape{m}) {
        throw DimensionError("let_transform: shapes disagree");
    }
    Tensor x_t = (x - let.delta) / let.scale;
    Tensor w_t = w * reshape(let.scale, {d, 1});
    Tensor b_t = bias + reshape(matmul(reshape(let.delta, {1, d}), w), {m});
    return {x_t, w_t, b_t};
}

NormAffine fold_let_into_norm(const NormAffine& norm, const LetParams& let) {
    check_let_scale(let);
    return {norm.gain / let.scale, (norm.shift - let.delta) / let.scale};
}

TokenScaled hier_let_token_scale(const Tensor& x, const HierLetState& state) {
    if (x.rank() != 2 || x.size(1) == 0) throw DimensionError("hier_let_token_scale expects [N x d], d >= 1");
    if (!(state.epsilon > 0.0)) throw ConfigError("hierarchical LET epsilon must be positive");
    // max(sqrt(v), eps) == sqrt(max(v, eps^2)); the second form keeps the
    // sqrt derivative finite on constant rows.
    Tensor s_tok = sqrt(clamp_min(variance_along_axis(x, 1), state.epsilon * state.epsilon));
    return {x / s_tok, s_tok};
}

// ---------------------------------------------------------------------------
// LWC initialization

LwcInit LwcInit::parse(std::string_view text) {
    const std::string s(text);
    LwcInit init;
    const auto colon = s.find(':');
    const std::string head = s.substr(0, colon);
    const std::string args = colon == std::string::npos ? "" : s.substr(colon + 1);
    if (head == "default" && args.empty()) {
        init.kind = Kind::kDefault;
    } else if (head == "soft" && args.empty()) {
        init.kind = Kind::kSoft;
    } else if (head == "aggressive" && args.empty()) {
        init.kind = Kind::kAggressive;
    } else if (head == "percentile") {
        init.kind = Kind::kPercentile;
        if (!args.empty()) init.percentile = parse_double(args, "percentile");
    } else if (head == "random") {
        init.kind = Kind::kRandom;
        if (!args.empty()) {
            const auto comma = args.find(',');
            if (comma == std::string::npos) throw ConfigError("random init expects 'random:lo,hi'");
            init.lo = parse_double(args.substr(0, comma), "random lo");
            init.hi = parse_double(args.substr(comma + 1), "random hi");
        }
    } else {
        throw ConfigError("unknown LWC init strategy '" + s + "'");
    }
    init.validate();
    return init;
}

std::string LwcInit::str() const {
    std::ostringstream os;
    switch (kind) {
        case Kind::kDefault:
            return "default";
        case Kind::kSoft:
            return "soft";
        case Kind::kAggressive:
            return "aggressive";
        case Kind::kPercentile:
            os << "percentile:" << percentile;
            return os.str();
        case Kind::kRandom:
            os << "random:" << lo << ',' << hi;
            return os.str();
    }
    return "default";
}

void LwcInit::validate() const {
    if (kind == Kind::kPercentile && !(percentile > 0.0 && percentile < 100.0)) {
        throw ConfigError("percentile must be in (0, 100)");
    }
    if (kind == Kind::kRandom && !(lo > 0.0 && lo < hi && hi <= 1.0)) {
        throw ConfigError("random init needs 0 < lo < hi <= 1");
    }
}

double logit_exact(double p) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("logit of value outside (0, 1)");
    double raw = std::log(p / (1.0 - p));
    // Nudge by ulps until the forward sigmoid lands on p.
    for (int i = 0; i < 8 && sigmoid_value(raw) != p; ++i) {
        raw = std::nextafter(raw, sigmoid_value(raw) < p ? INFINITY : -INFINITY);
    }
    return raw;
}

namespace {

double percentile_of(std::vector<double> values, double p) {
    std::sort(values.begin(), values.end());
    const double pos = p / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (values[hi] - values[lo]) * (pos - static_cast<double>(lo));
}

// Ratio target / extreme as a clip factor in (0, 1).
double clip_factor(double target, double extreme) {
    if (extreme == 0.0) return kMaxFactor;
    return std::clamp(target / extreme, kMinFactor, kMaxFactor);
}

}  // namespace

LwcParams lwc_init(const Tensor& w, const QuantConfig& cfg, const LwcInit& strategy, std::uint64_t seed,
                   bool requires_grad) {
    strategy.validate();
    const std::size_t g = group_length(w.shape(), cfg);
    const std::size_t groups = w.numel() / g;
    std::vector<double> gamma(groups), beta(groups);
    switch (strategy.kind) {
        case LwcInit::Kind::kDefault:
            std::fill(gamma.begin(), gamma.end(), kDefaultLwcLogit);
            std::fill(beta.begin(), beta.end(), kDefaultLwcLogit);
            break;
        case LwcInit::Kind::kSoft:
            std::fill(gamma.begin(), gamma.end(), logit_exact(kSoftClipFactor));
            std::fill(beta.begin(), beta.end(), logit_exact(kSoftClipFactor));
            break;
        case LwcInit::Kind::kAggressive:
            std::fill(gamma.begin(), gamma.end(), logit_exact(kAggressiveClipFactor));
            std::fill(beta.begin(), beta.end(), logit_exact(kAggressiveClipFactor));
            break;
        case LwcInit::Kind::kPercentile: {
            NoGradGuard no_grad;
            const auto grouped = group_weights(w.detach(), cfg).to_vector();
            for (std::size_t i = 0; i < groups; ++i) {
                std::vector<double> values(grouped.begin() + i * g, grouped.begin() + (i + 1) * g);
                const double mx = *std::max_element(values.begin(), values.end());
                const double mn = *std::min_element(values.begin(), values.end());
                gamma[i] = logit_exact(clip_factor(percentile_of(values, strategy.percentile), mx));
                beta[i] = logit_exact(clip_factor(percentile_of(values, 100.0 - strategy.percentile), mn));
            }
            break;
        }
        case LwcInit::Kind::kRandom: {
            Rng rng(mix_seed(seed, 0x1c3));
            for (std::size_t i = 0; i < groups; ++i) {
                gamma[i] = logit_exact(std::clamp(rng.uniform(strategy.lo, strategy.hi), kMinFactor, kMaxFactor));
                beta[i] = logit_exact(std::clamp(rng.uniform(strategy.lo, strategy.hi), kMinFactor, kMaxFactor));
            }
            break;
        }
    }
    return {Tensor({groups, 1}, std::move(gamma), requires_grad), Tensor({groups, 1}, std::move(beta), requires_grad)};
}

}  // namespace swcalib
