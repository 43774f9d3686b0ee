#include "dpgan/checkpoint.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <stdexcept>

namespace dpgan {

namespace {

constexpr std::uint32_t kVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    Reader(const std::string& buf, const std::string& path) : buf_(buf), path_(path) {}

    const char* take(std::size_t n) {
        if (pos_ + n > buf_.size())
            throw std::runtime_error("checkpoint: truncated file " + path_);
        const char* p = buf_.data() + pos_;
        pos_ += n;
        return p;
    }

    std::uint8_t u8() { return static_cast<std::uint8_t>(*take(1)); }

    std::uint16_t u16() {
        const auto* p = reinterpret_cast<const std::uint8_t*>(take(2));
        return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    }

    std::uint32_t u32() {
        const auto* p = reinterpret_cast<const std::uint8_t*>(take(4));
        return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
               (static_cast<std::uint32_t>(p[2]) << 16) |
               (static_cast<std::uint32_t>(p[3]) << 24);
    }

    std::size_t pos() const { return pos_; }

private:
    const std::string& buf_;
    std::string path_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_tensors(const std::string& path, const TensorList& tensors) {
    std::string out;
    out += "DPGK";
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (name.size() > 0xffff)
            throw std::invalid_argument("checkpoint: tensor name too long");
        if (!t.defined()) throw std::invalid_argument("checkpoint: undefined tensor " + name);
        put_u16(out, static_cast<std::uint16_t>(name.size()));
        out += name;
        out.push_back(static_cast<char>(t.rank()));
        for (int i = 0; i < t.rank(); ++i) put_u32(out, static_cast<std::uint32_t>(t.dim(i)));
        out.push_back(1);  // float64
        const std::size_t bytes = t.size() * sizeof(double);
        const std::size_t base = out.size();
        out.resize(base + bytes);
        std::memcpy(out.data() + base, t.data(), bytes);
    }
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(out.data()), static_cast<uInt>(out.size())));
    put_u32(out, crc);

    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    const std::size_t written = std::fwrite(out.data(), 1, out.size(), f);
    std::fclose(f);
    if (written != out.size()) throw std::runtime_error("checkpoint: short write to " + path);
}

TensorList load_tensors(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    std::string buf;
    char chunk[65536];
    std::size_t n;
    while ((n = std::fread(chunk, 1, sizeof chunk, f)) > 0) buf.append(chunk, n);
    std::fclose(f);

    if (buf.size() < 16) throw std::runtime_error("checkpoint: truncated file " + path);
    const auto stored_crc = [&] {
        const auto* p = reinterpret_cast<const std::uint8_t*>(buf.data() + buf.size() - 4);
        return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
               (static_cast<std::uint32_t>(p[2]) << 16) |
               (static_cast<std::uint32_t>(p[3]) << 24);
    }();
    const auto crc = static_cast<std::uint32_t>(crc32(
        0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size() - 4)));
    if (crc != stored_crc)
        throw std::runtime_error("checkpoint: CRC mismatch in " + path);

    Reader r(buf, path);
    if (std::memcmp(r.take(4), "DPGK", 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) +
                                 " in " + path);
    const std::uint32_t count = r.u32();

    TensorList out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t name_len = r.u16();
        std::string name(r.take(name_len), name_len);
        const int rank = r.u8();
        std::vector<int> shape;
        for (int d = 0; d < rank; ++d) shape.push_back(static_cast<int>(r.u32()));
        const std::uint8_t dtype = r.u8();
        Tensor t(shape);
        if (dtype == 1) {
            std::memcpy(t.data(), r.take(t.size() * sizeof(double)), t.size() * sizeof(double));
        } else if (dtype == 0) {
            const char* p = r.take(t.size() * sizeof(float));
            for (std::size_t e = 0; e < t.size(); ++e) {
                float v;
                std::memcpy(&v, p + e * sizeof(float), sizeof(float));
                t[e] = static_cast<double>(v);
            }
        } else {
            throw std::runtime_error("checkpoint: unknown dtype tag in " + path);
        }
        out.emplace_back(std::move(name), std::move(t));
    }
    if (r.pos() != buf.size() - 4)
        throw std::runtime_error("checkpoint: trailing bytes in " + path);
    return out;
}

Tensor tensor_from_string(const std::string& s) {
    if (s.empty()) return Tensor({1}, {-1.0});  // sentinel for the empty string
    Tensor t({static_cast<int>(s.size())});
    for (std::size_t i = 0; i < s.size(); ++i)
        t[i] = static_cast<double>(static_cast<unsigned char>(s[i]));
    return t;
}

std::string string_from_tensor(const Tensor& t) {
    if (t.size() == 1 && t[0] == -1.0) return {};
    std::string s(t.size(), '\0');
    for (std::size_t i = 0; i < t.size(); ++i)
        s[i] = static_cast<char>(static_cast<unsigned char>(t[i]));
    return s;
}

Tensor tensor_from_u64(std::uint64_t a, std::uint64_t b) {
    Tensor t({2});
    std::memcpy(t.data(), &a, 8);
    std::memcpy(t.data() + 1, &b, 8);
    return t;
}

void u64_from_tensor(const Tensor& t, std::uint64_t& a, std::uint64_t& b) {
    if (t.size() != 2) throw std::runtime_error("checkpoint: bad state tensor size");
    std::memcpy(&a, t.data(), 8);
    std::memcpy(&b, t.data() + 1, 8);
}

}  // namespace dpgan
