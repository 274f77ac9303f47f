#include "swcalib/eval.hpp"

#include <cmath>

#include "swcalib/errors.hpp"
#include "swcalib/losses.hpp"
#include "swcalib/ops.hpp"

namespace swcalib {

PerplexityResult perplexity(const Model& m, const Corpus& corpus, std::size_t seq, std::size_t batch,
                            std::size_t max_windows, const std::vector<BlockQuantizers>* quantizers) {
    if (seq < 2) throw ConfigError("perplexity needs windows of at least 2 tokens");
    if (corpus.vocab > m.spec.vocab_size) throw DomainError("corpus vocab exceeds model vocab");
    std::size_t windows = corpus.ids.size() / seq;
    if (max_windows > 0) windows = std::min(windows, max_windows);
    if (windows == 0) throw ConfigError("corpus shorter than one evaluation window");
    batch = std::min(batch, windows);

    NoGradGuard no_grad;
    const std::size_t v = m.spec.vocab_size;
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& tb : make_batches(corpus, seq, batch, windows)) {
        const auto logp = log_softmax_rows(model_forward_flat(m, tb, quantizers).logits);
        const auto lp = logp.data();
        for (std::size_t w = 0; w < tb.batch; ++w) {
            for (std::size_t t = 0; t + 1 < seq; ++t) {
                const std::size_t row = w * seq + t;
                total -= lp[row * v + tb.ids[row + 1]];
                ++count;
            }
        }
    }
    const double mean = total / static_cast<double>(count);
    return {std::exp(mean), mean, count};
}

SwEstimate sw_estimate(const Tensor& a, const Tensor& b, std::size_t n_proj, std::uint64_t seed) {
    BlockOutputs outs{a, b};
    outs.validate();
    const auto per = per_projection_w1(outs, sample_projections(outs.dim(), n_proj, seed));
    double mean = 0.0;
    for (double x : per) mean += x;
    mean /= static_cast<double>(per.size());
    double var = 0.0;
    for (double x : per) var += (x - mean) * (x - mean);
    const double k = static_cast<double>(per.size());
    const double se = per.size() > 1 ? std::sqrt(var / (k - 1.0) / k) : 0.0;
    return {mean, se, per.size()};
}

FinalBlockOutputs final_block_outputs(const Model& m, const std::vector<TokenBatch>& batches,
                                      const std::vector<BlockQuantizers>& quantizers) {
    if (batches.empty()) throw UsageError("final_block_outputs needs at least one batch");
    NoGradGuard no_grad;
    std::vector<double> fp, q;
    for (const auto& b : batches) {
        const auto f = model_forward_flat(m, b).last_hidden.to_vector();
        const auto g = model_forward_flat(m, b, &quantizers).last_hidden.to_vector();
        fp.insert(fp.end(), f.begin(), f.end());
        q.insert(q.end(), g.begin(), g.end());
    }
    const std::size_t d = m.spec.d_model, n = fp.size() / d;
    return {Tensor({n, d}, std::move(fp)), Tensor({n, d}, std::move(q))};
}

}  // namespace swcalib
