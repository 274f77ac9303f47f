#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "swcalib/corpus.hpp"
#include "swcalib/model.hpp"

namespace swcalib {

struct PerplexityResult {
    double perplexity = 0.0;
    double mean_nll = 0.0;
    std::size_t predictions = 0;
};

// exp(mean next-token negative log-likelihood) over non-overlapping windows
// of `seq` tokens (each window predicts its tokens 1..seq-1). Uses at most
// max_windows windows (0 = all).
PerplexityResult perplexity(const Model& m, const Corpus& corpus, std::size_t seq, std::size_t batch,
                            std::size_t max_windows, const std::vector<BlockQuantizers>* quantizers = nullptr);

// Sliced-Wasserstein estimate with the standard error of the mean over
// projections.
struct SwEstimate {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t n_proj = 0;
};
SwEstimate sw_estimate(const Tensor& a, const Tensor& b, std::size_t n_proj, std::uint64_t seed);

// Final-block outputs of the full-precision and quantized paths on the given
// batches, stacked to [N x d].
struct FinalBlockOutputs {
    Tensor fp;
    Tensor q;
};
FinalBlockOutputs final_block_outputs(const Model& m, const std::vector<TokenBatch>& batches,
                                      const std::vector<BlockQuantizers>& quantizers);

}  // namespace swcalib
