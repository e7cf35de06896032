#include "hypercast/param_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_map>

namespace hypercast::ad {
namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
void put(std::vector<char>& out, T v) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
    out.insert(out.end(), bytes, bytes + sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::vector<char>& bytes) : bytes_(bytes) {}

    template <class T>
    T get() {
        need(sizeof(T));
        unsigned char b[sizeof(T)];
        std::memcpy(b, bytes_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(b), std::end(b));
        pos_ += sizeof(T);
        T v;
        std::memcpy(&v, b, sizeof(T));
        return v;
    }

    std::string str(std::size_t n) {
        need(n);
        std::string s(bytes_.data() + pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw SnapshotError("snapshot truncated");
    }
    const std::vector<char>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<char> encode_snapshot(const ParameterSet& params) {
    std::vector<char> out(std::begin(kSnapshotMagic), std::end(kSnapshotMagic));
    put<std::uint32_t>(out, kSnapshotVersion);
    put<std::uint64_t>(out, params.count());
    for (const auto& p : params) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p->name().size()));
        out.insert(out.end(), p->name().begin(), p->name().end());
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p->shape().size()));
        for (std::size_t e : p->shape()) put<std::uint64_t>(out, e);
        for (double v : p->value()) put<double>(out, v);
    }
    return out;
}

std::vector<SnapshotRecord> decode_snapshot(const std::vector<char>& bytes) {
    Reader r(bytes);
    if (r.str(8) != std::string(kSnapshotMagic, 8)) throw SnapshotError("snapshot: bad magic");
    const auto version = r.get<std::uint32_t>();
    if (version != kSnapshotVersion) throw SnapshotError("snapshot: unsupported version " + std::to_string(version));
    const auto count = r.get<std::uint64_t>();
    std::vector<SnapshotRecord> records;
    for (std::uint64_t i = 0; i < count; ++i) {
        SnapshotRecord rec;
        rec.name = r.str(r.get<std::uint32_t>());
        const auto rank = r.get<std::uint32_t>();
        for (std::uint32_t d = 0; d < rank; ++d) rec.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
        rec.data.resize(numel(rec.shape));
        for (double& v : rec.data) v = r.get<double>();
        records.push_back(std::move(rec));
    }
    if (!r.done()) throw SnapshotError("snapshot: trailing bytes");
    return records;
}

void save_snapshot(const ParameterSet& params, const std::filesystem::path& path) {
    const auto bytes = encode_snapshot(params);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw SnapshotError("cannot open " + path.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw SnapshotError("write failed: " + path.string());
}

std::vector<SnapshotRecord> read_snapshot(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw SnapshotError("cannot open " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_snapshot(bytes);
}

void load_snapshot(ParameterSet& params, const std::vector<SnapshotRecord>& records) {
    std::unordered_map<std::string, const SnapshotRecord*> by_name;
    for (const auto& r : records) by_name.emplace(r.name, &r);
    for (auto& p : params) {
        auto it = by_name.find(p->name());
        if (it == by_name.end()) throw SnapshotError("snapshot missing parameter " + p->name());
        if (it->second->shape != p->shape())
            throw SnapshotError("snapshot shape mismatch for " + p->name() + ": " + shape_str(it->second->shape) +
                                " vs " + shape_str(p->shape()));
        p->value() = it->second->data;
    }
    if (records.size() != params.count()) {
        for (const auto& r : records)
            if (params.find(r.name) == nullptr) throw SnapshotError("snapshot has unexpected parameter " + r.name);
    }
}

}  // namespace hypercast::ad
