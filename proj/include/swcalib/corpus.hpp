#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "swcalib/model.hpp"

namespace swcalib {

// "SWC1" token corpus, little-endian:
//   magic "SWC1" | u32 version | u64 vocab | u64 count | u32 ids[count]
constexpr std::uint32_t kCorpusVersion = 1;

enum class CorpusKind { kUniform, kMixed };
CorpusKind parse_corpus_kind(std::string_view s);
const char* to_string(CorpusKind k);

struct Corpus {
    std::uint64_t vocab = 0;
    std::vector<std::uint32_t> ids;
};

// uniform: i.i.d. ids. mixed: Zipf(1.1) unigram runs interleaved with
// phrases repeated from a fixed bank of 32. Deterministic in seed.
Corpus generate_corpus(std::uint64_t vocab, std::uint64_t tokens, CorpusKind kind, std::uint64_t seed);

std::vector<std::uint8_t> encode_corpus(const Corpus& c);
// Every id must be < vocab.
Corpus decode_corpus(std::span<const std::uint8_t> bytes);
void save_corpus(const std::filesystem::path& path, const Corpus& c);
Corpus load_corpus(const std::filesystem::path& path);

// Cuts the corpus into non-overlapping windows of `seq` tokens and groups
// them into batches of `batch` windows; at most max_windows windows are used
// (0 = all). A trailing partial batch is dropped.
std::vector<TokenBatch> make_batches(const Corpus& c, std::size_t seq, std::size_t batch, std::size_t max_windows = 0);

}  // namespace swcalib
