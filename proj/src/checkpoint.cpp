#include "losslab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "losslab/util.hpp"

namespace losslab {
namespace {

constexpr char kMagic[8] = {'L', 'L', 'A', 'B', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void put_bytes(std::string& out, const void* p, size_t n) {
    out.append(static_cast<const char*>(p), n);
}

void put_u32(std::string& out, uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    put_bytes(out, b, 4);
}

void put_u64(std::string& out, uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    put_bytes(out, b, 8);
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<uint64_t>(v)); }

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > buf.size())
            throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos));
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str(size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointData& c) {
    std::string out;
    out.reserve(64 + 8 * c.values.size());
    put_bytes(out, kMagic, 8);
    put_u32(out, kVersion);
    put_u64(out, c.spec_hash);
    put_u64(out, std::bit_cast<uint64_t>(c.epoch));
    put_u64(out, c.values.size());
    for (double v : c.values) put_f64(out, v);
    put_u32(out, static_cast<uint32_t>(c.metadata.size()));
    for (const auto& [k, v] : c.metadata) {
        put_u32(out, static_cast<uint32_t>(k.size()));
        put_bytes(out, k.data(), k.size());
        put_u32(out, static_cast<uint32_t>(v.size()));
        put_bytes(out, v.data(), v.size());
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open for write: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw CheckpointError("write failed: " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r{buf};
    std::string magic = r.str(8);
    if (std::memcmp(magic.data(), kMagic, 8) != 0)
        throw CheckpointError("bad magic in " + path + ": not a checkpoint file");
    uint32_t version = r.u32();
    if (version != kVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                              " (expected " + std::to_string(kVersion) + ")");
    CheckpointData c;
    c.spec_hash = r.u64();
    c.epoch = std::bit_cast<int64_t>(r.u64());
    uint64_t count = r.u64();
    r.need(count * 8);
    c.values.resize(count);
    for (uint64_t i = 0; i < count; ++i) c.values[i] = r.f64();
    uint32_t n_meta = r.u32();
    for (uint32_t i = 0; i < n_meta; ++i) {
        std::string k = r.str(r.u32());
        std::string v = r.str(r.u32());
        c.metadata[k] = v;
    }
    if (r.pos != buf.size())
        throw CheckpointError("trailing bytes after checkpoint payload in " + path);
    return c;
}

void save_param_vector(const std::string& path, const ParamVector& theta, int64_t epoch,
                       std::map<std::string, std::string> extra) {
    CheckpointData c;
    c.spec_hash = theta.meta->spec_hash;
    c.epoch = epoch;
    c.values = theta.values;
    c.metadata = std::move(extra);
    c.metadata["kind"] = "theta";
    save_checkpoint(path, c);
}

ParamVector load_param_vector(const std::string& path, const Model& model) {
    CheckpointData c = load_checkpoint(path);
    auto meta = model.meta_ptr();
    if (c.spec_hash != meta->spec_hash)
        throw CheckpointError("checkpoint " + path + " was written for a different model spec");
    if (c.values.size() != static_cast<size_t>(meta->total))
        throw CheckpointError("checkpoint " + path + " holds " + std::to_string(c.values.size()) +
                              " values, model expects " + std::to_string(meta->total));
    ParamVector theta;
    theta.meta = meta;
    theta.values = std::move(c.values);
    return theta;
}

void save_direction(const std::string& path, const Direction& d) {
    CheckpointData c;
    c.spec_hash = d.meta->spec_hash;
    c.epoch = 0;
    c.values = d.values;
    c.metadata["kind"] = "direction";
    c.metadata["scheme"] = to_string(d.scheme);
    c.metadata["ignore"] = to_string(d.ignore);
    c.metadata["seed"] = std::to_string(d.seed);
    c.metadata["generator"] = Rng64::kIdentity;
    save_checkpoint(path, c);
}

Direction load_direction(const std::string& path, const Model& model) {
    CheckpointData c = load_checkpoint(path);
    auto meta = model.meta_ptr();
    if (c.spec_hash != meta->spec_hash)
        throw CheckpointError("direction " + path + " was written for a different model spec");
    if (c.values.size() != static_cast<size_t>(meta->total))
        throw CheckpointError("direction " + path + " holds " + std::to_string(c.values.size()) +
                              " values, model expects " + std::to_string(meta->total));
    auto want = [&](const char* key) {
        auto it = c.metadata.find(key);
        if (it == c.metadata.end())
            throw CheckpointError("direction " + path + " is missing metadata key '" + key + "'");
        return it->second;
    };
    if (want("kind") != "direction")
        throw CheckpointError(path + " is a '" + c.metadata["kind"] + "' checkpoint, not a direction");
    Direction d;
    d.meta = meta;
    d.values = std::move(c.values);
    d.scheme = norm_scheme_from(want("scheme"));
    d.ignore = ignore_policy_from(want("ignore"));
    d.seed = std::stoull(want("seed"));
    return d;
}

}  // namespace losslab
