#include "mren/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "mren/error.hpp"

namespace mren::ckpt {

namespace {

constexpr char kMagic[4] = {'M', 'R', 'E', 'N'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.append(b, 4);
}

void put_u64(std::string& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.append(b, 8);
}

// bounds-checked cursor over the loaded file
struct Reader {
    const unsigned char* p;
    std::size_t size;
    std::size_t pos = 0;
    std::string path;

    void need(std::size_t n, const char* what) {
        if (size - pos < n)
            throw IntegrityError("truncated checkpoint '" + path + "' while reading " + what);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return p[pos++];
    }
    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(p + pos), n);
        pos += n;
        return s;
    }
};

} // namespace

void save_checkpoint(const std::string& path, const Checkpoint& c) {
    std::string blob;
    blob.reserve(64);
    blob.append(kMagic, 4);
    put_u32(blob, c.version);
    put_u64(blob, c.config_json.size());
    blob += c.config_json;
    if (c.tensors.size() > std::numeric_limits<std::uint32_t>::max())
        throw UsageError("too many tensors for checkpoint format");
    put_u32(blob, static_cast<std::uint32_t>(c.tensors.size()));
    for (const auto& [name, t] : c.tensors) {
        put_u32(blob, static_cast<std::uint32_t>(name.size()));
        blob += name;
        blob.push_back(0); // dtype: 32-bit float
        blob.push_back(4); // rank
        const auto d = t.dims();
        for (std::int64_t dim : {d.n, d.c, d.h, d.w})
            put_u32(blob, static_cast<std::uint32_t>(dim));
        static_assert(sizeof(float) == 4);
        blob.append(reinterpret_cast<const char*>(t.data()),
                    static_cast<std::size_t>(t.count()) * sizeof(float));
    }

    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.parent_path() / (target.filename().string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open '" + tmp.string() + "' for writing");
        f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
        f.flush();
        if (!f) throw IoError("write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp);
        throw IoError("cannot rename '" + tmp.string() + "' to '" + path + "': " + ec.message());
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (!f.good() && !f.eof()) throw IoError("read failed for '" + path + "'");

    Reader r{reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), 0, path};
    r.need(4, "magic");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw IntegrityError("'" + path + "' is not a checkpoint file (bad magic)");
    r.pos = 4;

    Checkpoint c;
    c.version = r.u32("format version");
    if (c.version != kVersion)
        throw IntegrityError("unsupported checkpoint version " + std::to_string(c.version) +
                             " in '" + path + "'");

    const std::uint64_t json_len = r.u64("config length");
    if (json_len > r.size - r.pos)
        throw IntegrityError("truncated checkpoint '" + path + "': config length exceeds file");
    c.config_json = r.str(static_cast<std::size_t>(json_len), "config");

    const std::uint32_t count = r.u32("tensor count");
    c.tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = r.u32("tensor name length");
        if (name_len > r.size - r.pos)
            throw IntegrityError("truncated checkpoint '" + path + "': tensor name exceeds file");
        std::string name = r.str(name_len, "tensor name");
        const std::uint8_t dtype = r.u8("dtype");
        if (dtype != 0)
            throw IntegrityError("tensor '" + name + "' in '" + path + "' has dtype code " +
                                 std::to_string(dtype) + "; only 32-bit float is supported");
        const std::uint8_t rank = r.u8("rank");
        if (rank != 4)
            throw IntegrityError("tensor '" + name + "' in '" + path + "' has rank " +
                                 std::to_string(rank) + "; expected 4");
        std::int64_t d[4];
        std::uint64_t elems = 1;
        for (int k = 0; k < 4; ++k) {
            d[k] = r.u32("dims");
            if (d[k] <= 0)
                throw IntegrityError("tensor '" + name + "' in '" + path + "' has a zero dimension");
            elems *= static_cast<std::uint64_t>(d[k]);
            if (elems > (1ull << 33))
                throw IntegrityError("tensor '" + name + "' in '" + path + "' is implausibly large");
        }
        const std::uint64_t payload = elems * sizeof(float);
        if (payload > r.size - r.pos)
            throw IntegrityError("truncated checkpoint '" + path + "': payload of '" + name +
                                 "' exceeds file");
        Tensor4f t(Dims4{d[0], d[1], d[2], d[3]});
        std::memcpy(t.data(), r.p + r.pos, static_cast<std::size_t>(payload));
        r.pos += static_cast<std::size_t>(payload);
        c.tensors.emplace_back(std::move(name), std::move(t));
    }
    if (r.pos != r.size)
        throw IntegrityError("trailing bytes after last tensor in '" + path + "'");
    return c;
}

} // namespace mren::ckpt
