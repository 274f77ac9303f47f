#include "swcalib/corpus.hpp"

#include <algorithm>
#include <cmath>

#include "byteio.hpp"
#include "swcalib/errors.hpp"
#include "swcalib/rng.hpp"

namespace swcalib {

namespace {

constexpr char kMagic[4] = {'S', 'W', 'C', '1'};
constexpr double kZipfExponent = 1.1;
constexpr std::size_t kPhraseBank = 32;
constexpr double kPhraseProb = 0.3;

class ZipfSampler {
   public:
    ZipfSampler(std::uint64_t vocab, double s) : cdf_(vocab) {
        double total = 0.0;
        for (std::uint64_t r = 0; r < vocab; ++r) cdf_[r] = total += std::pow(static_cast<double>(r + 1), -s);
        for (auto& c : cdf_) c /= total;
    }
    std::uint32_t operator()(Rng& rng) const {
        const double u = rng.uniform();
        auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
        return static_cast<std::uint32_t>(std::min<std::ptrdiff_t>(it - cdf_.begin(), cdf_.size() - 1));
    }

   private:
    std::vector<double> cdf_;
};

}  // namespace

CorpusKind parse_corpus_kind(std::string_view s) {
    if (s == "uniform") return CorpusKind::kUniform;
    if (s == "mixed") return CorpusKind::kMixed;
    throw ConfigError("corpus kind must be uniform or mixed, got '" + std::string(s) + "'");
}

const char* to_string(CorpusKind k) { return k == CorpusKind::kUniform ? "uniform" : "mixed"; }

Corpus generate_corpus(std::uint64_t vocab, std::uint64_t tokens, CorpusKind kind, std::uint64_t seed) {
    if (vocab < 1 || tokens < 1) throw ConfigError("corpus needs vocab >= 1 and tokens >= 1");
    if (vocab > (std::uint64_t{1} << 32)) throw ConfigError("vocab exceeds the u32 id range");
    Corpus c{vocab, {}};
    c.ids.reserve(tokens);
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(kind)));
    if (kind == CorpusKind::kUniform) {
        while (c.ids.size() < tokens) c.ids.push_back(static_cast<std::uint32_t>(rng.below(vocab)));
        return c;
    }
    const ZipfSampler zipf(vocab, kZipfExponent);
    std::vector<std::vector<std::uint32_t>> phrases(kPhraseBank);
    for (auto& p : phrases) {
        p.resize(4 + rng.below(9));
        for (auto& t : p) t = zipf(rng);
    }
    while (c.ids.size() < tokens) {
        if (rng.uniform() < kPhraseProb) {
            const auto& p = phrases[rng.below(kPhraseBank)];
            c.ids.insert(c.ids.end(), p.begin(), p.end());
        } else {
            const std::size_t run = 8 + rng.below(25);
            for (std::size_t i = 0; i < run; ++i) c.ids.push_back(zipf(rng));
        }
    }
    c.ids.resize(tokens);
    return c;
}

std::vector<std::uint8_t> encode_corpus(const Corpus& c) {
    byteio::Writer w;
    w.bytes(kMagic, 4);
    w.u32(kCorpusVersion);
    w.u64(c.vocab);
    w.u64(c.ids.size());
    for (auto id : c.ids) w.u32(id);
    return std::move(w.buffer());
}

Corpus decode_corpus(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
        throw FormatError(FormatErrc::kBadMagic, "expected \"SWC1\"");
    }
    byteio::Reader r(bytes);
    r.take(4, "magic");
    const std::uint32_t version = r.u32("version");
    if (version != kCorpusVersion) {
        throw FormatError(FormatErrc::kVersionMismatch, "corpus version " + std::to_string(version));
    }
    Corpus c;
    c.vocab = r.u64("vocab");
    const std::uint64_t count = r.u64("count");
    if (count > r.remaining() / 4) throw FormatError(FormatErrc::kTruncated, "corpus shorter than its token count");
    if (r.remaining() != count * 4) throw FormatError(FormatErrc::kMalformed, "trailing bytes after corpus ids");
    c.ids.resize(count);
    for (auto& id : c.ids) {
        id = r.u32("id");
        if (id >= c.vocab) throw FormatError(FormatErrc::kMalformed, "token id " + std::to_string(id) + " >= vocab");
    }
    return c;
}

void save_corpus(const std::filesystem::path& path, const Corpus& c) { byteio::write_file(path, encode_corpus(c)); }

Corpus load_corpus(const std::filesystem::path& path) { return decode_corpus(byteio::read_file(path)); }

std::vector<TokenBatch> make_batches(const Corpus& c, std::size_t seq, std::size_t batch, std::size_t max_windows) {
    if (seq < 1 || batch < 1) throw ConfigError("batches need seq >= 1 and batch >= 1");
    std::size_t windows = c.ids.size() / seq;
    if (max_windows > 0) windows = std::min(windows, max_windows);
    std::vector<TokenBatch> out;
    for (std::size_t w = 0; w + batch <= windows; w += batch) {
        TokenBatch b;
        b.batch = batch;
        b.seq = seq;
        b.ids.assign(c.ids.begin() + static_cast<std::ptrdiff_t>(w * seq),
                     c.ids.begin() + static_cast<std::ptrdiff_t>((w + batch) * seq));
        out.push_back(std::move(b));
    }
    if (out.empty()) {
        throw ConfigError("corpus of " + std::to_string(c.ids.size()) + " tokens yields no batch of " +
                          std::to_string(batch) + " x " + std::to_string(seq));
    }
    return out;
}

}  // namespace swcalib
