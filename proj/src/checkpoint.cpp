#include "kprnet/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "kprnet/errors.hpp"
#include "kprnet/kitti_io.hpp"

namespace kpr {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

struct Reader {
    const std::uint8_t* p;
    const std::uint8_t* end;

    void need(std::size_t n) const {
        if (static_cast<std::size_t>(end - p) < n)
            throw FormatError("checkpoint: truncated payload");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = static_cast<std::uint32_t>(p[0]) |
                          (static_cast<std::uint32_t>(p[1]) << 8) |
                          (static_cast<std::uint32_t>(p[2]) << 16) |
                          (static_cast<std::uint32_t>(p[3]) << 24);
        p += 4;
        return v;
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(p[0] | (p[1] << 8));
        p += 2;
        return v;
    }
    std::uint8_t u8() {
        need(1);
        return *p++;
    }
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& tensors) {
    std::vector<std::uint8_t> out{'K', 'P', 'R', 'W'};
    put_u32(out, 1);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (name.size() > 0xffff) throw ArgumentError("checkpoint: tensor name too long");
        out.push_back(static_cast<std::uint8_t>(name.size() & 0xff));
        out.push_back(static_cast<std::uint8_t>(name.size() >> 8));
        out.insert(out.end(), name.begin(), name.end());
        out.push_back(static_cast<std::uint8_t>(t.rank()));
        for (std::size_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
        for (std::size_t i = 0; i < t.size(); ++i)
            put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(t[i])));
    }
    return out;
}

NamedTensors decode_checkpoint(const std::uint8_t* bytes, std::size_t len) {
    Reader r{bytes, bytes + len};
    r.need(4);
    if (std::memcmp(r.p, "KPRW", 4) != 0) throw FormatError("checkpoint: bad magic");
    r.p += 4;
    if (r.u32() != 1) throw FormatError("checkpoint: unsupported version");
    std::uint32_t count = r.u32();
    NamedTensors out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint16_t name_len = r.u16();
        r.need(name_len);
        std::string name(reinterpret_cast<const char*>(r.p), name_len);
        r.p += name_len;
        std::uint8_t rank = r.u8();
        std::vector<std::size_t> shape(rank);
        for (std::uint8_t d = 0; d < rank; ++d) shape[d] = r.u32();
        Tensor t{shape};
        for (std::size_t j = 0; j < t.size(); ++j)
            t[j] = std::bit_cast<float>(r.u32());
        out.emplace_back(std::move(name), std::move(t));
    }
    if (r.p != r.end) throw FormatError("checkpoint: trailing bytes");
    return out;
}

void save_checkpoint(const std::string& path, const NamedTensors& tensors) {
    auto bytes = encode_checkpoint(tensors);
    write_file(path, bytes.data(), bytes.size());
}

NamedTensors load_checkpoint(const std::string& path) {
    auto bytes = read_file(path);
    try {
        return decode_checkpoint(bytes.data(), bytes.size());
    } catch (const std::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
}

}  // namespace kpr
