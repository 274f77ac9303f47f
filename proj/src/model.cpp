#include "swcalib/model.hpp"

#include <cmath>

#include "swcalib/errors.hpp"
#include "swcalib/ops.hpp"
#include "swcalib/rng.hpp"

namespace swcalib {

void ModelSpec::validate() const {
    if (vocab_size < 1 || d_model < 1 || n_heads < 1 || n_blocks < 1 || ff_mult < 1 || max_seq_len < 1) {
        throw ConfigError("model spec fields must all be >= 1");
    }
    if (d_model % n_heads != 0) {
        throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by n_heads " + std::to_string(n_heads));
    }
}

namespace {

Tensor gaussian(Rng& rng, Shape shape, double std) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = std * rng.normal();
    return Tensor(std::move(shape), std::move(v));
}

std::size_t linear_in(const ModelSpec& s, Linear l) { return l == Linear::kFc2 ? s.d_ff() : s.d_model; }
std::size_t linear_out(const ModelSpec& s, Linear l) { return l == Linear::kFc1 ? s.d_ff() : s.d_model; }

}  // namespace

Model Model::init(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    const std::size_t d = spec.d_model;
    std::uint64_t stream = 0;
    auto next_rng = [&] { return Rng(mix_seed(seed, stream++)); };

    Model m;
    m.spec = spec;
    {
        Rng r = next_rng();
        m.embed = gaussian(r, {spec.vocab_size, d}, 1.0 / std::sqrt(static_cast<double>(d)));
    }
    {
        Rng r = next_rng();
        m.pos = gaussian(r, {spec.max_seq_len, d}, 1.0 / std::sqrt(static_cast<double>(d)));
    }
    for (std::size_t b = 0; b < spec.n_blocks; ++b) {
        BlockWeights bw;
        bw.ln1_gain = Tensor::full({d}, 1.0);
        bw.ln1_shift = Tensor::zeros({d});
        bw.ln2_gain = Tensor::full({d}, 1.0);
        bw.ln2_shift = Tensor::zeros({d});
        for (std::size_t i = 0; i < kLinearCount; ++i) {
            const auto l = static_cast<Linear>(i);
            const std::size_t in = linear_in(spec, l), out = linear_out(spec, l);
            Rng r = next_rng();
            bw.linear[i] = {gaussian(r, {in, out}, 1.0 / std::sqrt(static_cast<double>(in))), Tensor::zeros({out})};
        }
        m.blocks.push_back(std::move(bw));
    }
    m.lnf_gain = Tensor::full({d}, 1.0);
    m.lnf_shift = Tensor::zeros({d});
    return m;
}

std::vector<std::pair<std::string, Tensor>> Model::named_tensors() const {
    std::vector<std::pair<std::string, Tensor>> out{{"embed", embed}, {"pos", pos}};
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const std::string p = "block" + std::to_string(b) + ".";
        const auto& bw = blocks[b];
        out.emplace_back(p + "ln1.gain", bw.ln1_gain);
        out.emplace_back(p + "ln1.shift", bw.ln1_shift);
        for (std::size_t i = 0; i < kLinearCount; ++i) {
            out.emplace_back(p + kLinearNames[i] + ".w", bw.linear[i].w);
            out.emplace_back(p + kLinearNames[i] + ".b", bw.linear[i].b);
        }
        out.emplace_back(p + "ln2.gain", bw.ln2_gain);
        out.emplace_back(p + "ln2.shift", bw.ln2_shift);
    }
    out.emplace_back("lnf.gain", lnf_gain);
    out.emplace_back("lnf.shift", lnf_shift);
    return out;
}

std::size_t model_bytes(const Model& m) {
    std::size_t n = 0;
    for (const auto& [name, t] : m.named_tensors()) n += t.numel() * sizeof(double);
    return n;
}

// ---------------------------------------------------------------------------
// Quantizers

std::vector<Tensor> BlockQuantizers::lwc_parameters() const {
    std::vector<Tensor> out;
    for (const auto& lq : linear) {
        out.push_back(lq.lwc.gamma_raw);
        out.push_back(lq.lwc.beta_raw);
    }
    return out;
}

std::vector<Tensor> BlockQuantizers::let_parameters() const {
    std::vector<Tensor> out;
    for (const auto& lq : linear) {
        if (!lq.let) continue;
        out.push_back(lq.let->delta);
        out.push_back(lq.let->scale);
    }
    return out;
}

BlockQuantizers BlockQuantizers::clone(bool requires_grad) const {
    BlockQuantizers out = *this;
    for (auto& lq : out.linear) {
        lq.lwc = {lq.lwc.gamma_raw.clone(requires_grad), lq.lwc.beta_raw.clone(requires_grad)};
        if (lq.let) lq.let = LetParams{lq.let->delta.clone(requires_grad), lq.let->scale.clone(requires_grad)};
    }
    return out;
}

BlockQuantizers init_block_quantizers(const BlockWeights& w, const QuantOptions& opts, std::uint64_t seed,
                                      bool requires_grad) {
    opts.cfg.validate();
    BlockQuantizers q;
    q.cfg = opts.cfg;
    q.hier_let = opts.hier_let;
    for (std::size_t i = 0; i < kLinearCount; ++i) {
        const Tensor& weight = w.linear[i].w;
        q.linear[i].lwc = lwc_init(weight, opts.cfg, opts.lwc_init, mix_seed(seed, i), requires_grad);
        if (opts.let_enabled()) q.linear[i].let = LetParams::identity(weight.size(0), requires_grad);
    }
    return q;
}

std::vector<BlockQuantizers> init_model_quantizers(const Model& m, const QuantOptions& opts, std::uint64_t seed) {
    std::vector<BlockQuantizers> out;
    for (std::size_t b = 0; b < m.blocks.size(); ++b) out.push_back(init_block_quantizers(m.blocks[b], opts, mix_seed(seed, b)));
    return out;
}

// ---------------------------------------------------------------------------
// Forward

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift) {
    if (x.rank() != 2) throw DimensionError("layer_norm expects [N x d]");
    Tensor xc = x - mean_along(x, 1);
    Tensor var = mean_along(square(xc), 1);
    return xc / sqrt(var + kLayerNormEps) * gain + shift;
}

Tensor linear_forward(const Tensor& x, const LinearWeights& lw, const BlockQuantizers* q, Linear which) {
    if (!q) return matmul(x, lw.w) + lw.b;
    const LinearQuant& lq = q->at(which);

    Tensor xin = x, s_tok;
    if (q->hier_let) {
        auto ts = hier_let_token_scale(x, q->hier);
        xin = ts.x;
        s_tok = ts.s_tok;
    }
    Tensor w = lw.w, bias = lw.b;
    if (lq.let) {
        auto t = let_transform(xin, lw.w, lw.b, *lq.let);
        xin = t.x;
        w = t.w;
        bias = t.bias;
    }
    if (q->cfg.quantizes_activations()) xin = quantize_activations(xin, q->cfg.act_bits);
    Tensor y = matmul(xin, fake_quantize_bits(w, q->cfg.weight_bits, q->cfg, lq.lwc));
    if (!q->hier_let) return y + bias;

    // x = s_tok * x1, so x w + b = s_tok * (x~1 w~ + delta w) + b.
    if (lq.let) y = y + matmul(reshape(lq.let->delta, {1, lw.w.size(0)}), lw.w);
    return y * s_tok + lw.b;
}

Tensor block_forward_flat(const Tensor& x, std::size_t batch, std::size_t seq, const BlockWeights& w,
                          const ModelSpec& spec, const BlockQuantizers* q) {
    if (x.rank() != 2 || x.size(0) != batch * seq || x.size(1) != spec.d_model) {
        throw DimensionError("block input " + shape_str(x.shape()) + " does not match [" + std::to_string(batch * seq) +
                             " x " + std::to_string(spec.d_model) + "]");
    }
    Tensor a = layer_norm(x, w.ln1_gain, w.ln1_shift);
    Tensor qh = linear_forward(a, w.at(Linear::kQ), q, Linear::kQ);
    Tensor kh = linear_forward(a, w.at(Linear::kK), q, Linear::kK);
    Tensor vh = linear_forward(a, w.at(Linear::kV), q, Linear::kV);
    Tensor ctx = causal_attention(qh, kh, vh, batch, seq, spec.n_heads);
    Tensor h = x + linear_forward(ctx, w.at(Linear::kO), q, Linear::kO);
    Tensor m = layer_norm(h, w.ln2_gain, w.ln2_shift);
    Tensor u = gelu(linear_forward(m, w.at(Linear::kFc1), q, Linear::kFc1));
    return h + linear_forward(u, w.at(Linear::kFc2), q, Linear::kFc2);
}

Tensor block_forward(const Tensor& x, const BlockWeights& w, const ModelSpec& spec, const BlockQuantizers* q) {
    if (x.rank() != 3) throw DimensionError("block_forward expects [B x S x d], got " + shape_str(x.shape()));
    const std::size_t b = x.size(0), s = x.size(1), d = x.size(2);
    Tensor y = block_forward_flat(reshape(x, {b * s, d}), b, s, w, spec, q);
    return reshape(y, {b, s, d});
}

Tensor embed_tokens(const Model& m, const TokenBatch& tokens) {
    if (tokens.batch == 0 || tokens.seq == 0 || tokens.ids.size() != tokens.batch * tokens.seq) {
        throw DimensionError("token batch has " + std::to_string(tokens.ids.size()) + " ids for " +
                             std::to_string(tokens.batch) + " x " + std::to_string(tokens.seq));
    }
    if (tokens.seq > m.spec.max_seq_len) {
        throw DimensionError("sequence length " + std::to_string(tokens.seq) + " exceeds max_seq_len " +
                             std::to_string(m.spec.max_seq_len));
    }
    std::vector<std::uint32_t> positions(tokens.ids.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<std::uint32_t>(i % tokens.seq);
    return gather_rows(m.embed, tokens.ids) + gather_rows(m.pos, positions);
}

Tensor model_head(const Model& m, const Tensor& hidden) {
    Tensor h = layer_norm(hidden, m.lnf_gain, m.lnf_shift);
    return matmul(h, transpose(m.embed)) * (1.0 / std::sqrt(static_cast<double>(m.spec.d_model)));
}

ForwardTrace model_forward_flat(const Model& m, const TokenBatch& tokens,
                                const std::vector<BlockQuantizers>* quantizers) {
    if (quantizers && quantizers->size() != m.blocks.size()) {
        throw DimensionError("expected " + std::to_string(m.blocks.size()) + " block quantizers, got " +
                             std::to_string(quantizers->size()));
    }
    Tensor x = embed_tokens(m, tokens);
    for (std::size_t b = 0; b < m.blocks.size(); ++b) {
        x = block_forward_flat(x, tokens.batch, tokens.seq, m.blocks[b], m.spec, quantizers ? &(*quantizers)[b] : nullptr);
    }
    return {x, model_head(m, x)};
}

Tensor model_forward(const Model& m, const TokenBatch& tokens, const std::vector<BlockQuantizers>* quantizers) {
    return reshape(model_forward_flat(m, tokens, quantizers).logits, {tokens.batch, tokens.seq, m.spec.vocab_size});
}

}  // namespace swcalib
