#include "swcalib/container.hpp"

#include <algorithm>
#include <set>

#include "byteio.hpp"
#include "swcalib/errors.hpp"

namespace swcalib {

namespace {

constexpr char kMagic[4] = {'S', 'W', 'Q', '1'};
constexpr std::uint32_t kMaxNameBytes = 4096;
constexpr std::uint32_t kMaxRank = 8;

}  // namespace

void WeightContainer::add(std::string name, const Tensor& t) {
    add(NamedTensor{std::move(name), t.shape(), t.to_vector()});
}

void WeightContainer::add(NamedTensor entry) {
    if (entry.name.empty() || entry.name.size() > kMaxNameBytes) throw UsageError("bad tensor name '" + entry.name + "'");
    if (find(entry.name)) throw UsageError("duplicate tensor name '" + entry.name + "'");
    if (shape_numel(entry.shape) != entry.values.size()) throw DimensionError("tensor '" + entry.name + "' size mismatch");
    entries_.push_back(std::move(entry));
}

const NamedTensor* WeightContainer::find(const std::string& name) const {
    auto it = std::find_if(entries_.begin(), entries_.end(), [&](const NamedTensor& e) { return e.name == name; });
    return it == entries_.end() ? nullptr : &*it;
}

Tensor WeightContainer::get(const std::string& name, bool requires_grad) const {
    const NamedTensor* e = find(name);
    if (!e) throw FormatError(FormatErrc::kMalformed, "missing tensor '" + name + "'");
    return Tensor(e->shape, e->values, requires_grad);
}

std::vector<std::uint8_t> encode_container(const WeightContainer& c) {
    byteio::Writer w;
    w.bytes(kMagic, 4);
    w.u32(kContainerVersion);
    w.u64(c.entries().size());
    std::uint64_t offset = 0;
    for (const auto& e : c.entries()) {
        w.u32(static_cast<std::uint32_t>(e.name.size()));
        w.bytes(e.name.data(), e.name.size());
        w.u32(static_cast<std::uint32_t>(e.shape.size()));
        for (auto d : e.shape) w.u64(d);
        w.u64(offset);
        offset += e.values.size() * sizeof(double);
    }
    for (const auto& e : c.entries()) {
        for (double v : e.values) w.f64(v);
    }
    return std::move(w.buffer());
}

WeightContainer decode_container(std::span<const std::uint8_t> bytes) {
    byteio::Reader r(bytes);
    if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
        throw FormatError(FormatErrc::kBadMagic, "expected \"SWQ1\"");
    }
    r.take(4, "magic");
    const std::uint32_t version = r.u32("version");
    if (version != kContainerVersion) {
        throw FormatError(FormatErrc::kVersionMismatch,
                          "file version " + std::to_string(version) + ", supported " + std::to_string(kContainerVersion));
    }
    const std::uint64_t count = r.u64("tensor count");
    // Each manifest entry needs at least 16 bytes.
    if (count > r.remaining() / 16) throw FormatError(FormatErrc::kTruncated, "manifest shorter than its tensor count");

    struct Entry {
        std::string name;
        Shape shape;
        std::uint64_t offset;
        std::uint64_t bytes;
    };
    std::vector<Entry> manifest;
    std::set<std::string> names;
    for (std::uint64_t i = 0; i < count; ++i) {
        Entry e;
        const std::uint32_t name_len = r.u32("name length");
        if (name_len == 0 || name_len > kMaxNameBytes) throw FormatError(FormatErrc::kMalformed, "bad name length");
        auto name = r.take(name_len, "name");
        e.name.assign(name.begin(), name.end());
        if (!names.insert(e.name).second) throw FormatError(FormatErrc::kMalformed, "duplicate tensor '" + e.name + "'");
        const std::uint32_t rank = r.u32("rank");
        if (rank > kMaxRank) throw FormatError(FormatErrc::kMalformed, "rank " + std::to_string(rank) + " of '" + e.name + "'");
        std::uint64_t numel = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            const std::uint64_t d = r.u64("dims");
            if (d != 0 && numel > (std::uint64_t{1} << 60) / d) throw FormatError(FormatErrc::kMalformed, "dims overflow");
            numel *= d;
            e.shape.push_back(static_cast<std::size_t>(d));
        }
        e.offset = r.u64("offset");
        e.bytes = numel * sizeof(double);
        if (e.offset % sizeof(double) != 0) throw FormatError(FormatErrc::kMalformed, "unaligned offset of '" + e.name + "'");
        manifest.push_back(std::move(e));
    }

    const std::size_t payload_start = r.pos();
    const std::uint64_t payload_size = r.remaining();
    std::vector<const Entry*> by_offset;
    for (const auto& e : manifest) {
        if (e.offset > payload_size || e.bytes > payload_size - e.offset) {
            throw FormatError(FormatErrc::kTruncated, "payload of '" + e.name + "' runs past end of file");
        }
        if (e.bytes > 0) by_offset.push_back(&e);
    }
    std::sort(by_offset.begin(), by_offset.end(), [](const Entry* a, const Entry* b) { return a->offset < b->offset; });
    for (std::size_t i = 1; i < by_offset.size(); ++i) {
        if (by_offset[i - 1]->offset + by_offset[i - 1]->bytes > by_offset[i]->offset) {
            throw FormatError(FormatErrc::kOverlappingOffsets,
                              "'" + by_offset[i - 1]->name + "' overlaps '" + by_offset[i]->name + "'");
        }
    }

    WeightContainer c;
    const auto payload = bytes.subspan(payload_start);
    for (const auto& e : manifest) {
        NamedTensor t{e.name, e.shape, std::vector<double>(e.bytes / sizeof(double))};
        const auto slice = payload.subspan(e.offset, e.bytes);
        for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] = byteio::f64_at(slice, i);
        c.add(std::move(t));
    }
    return c;
}

void save_container(const std::filesystem::path& path, const WeightContainer& c) {
    byteio::write_file(path, encode_container(c));
}

WeightContainer load_container(const std::filesystem::path& path) { return decode_container(byteio::read_file(path)); }

}  // namespace swcalib
