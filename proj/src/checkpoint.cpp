#include "dmad/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dmad/error.hpp"

namespace dmad {

namespace {

constexpr char kMagic[] = "DMAD-CKPT v1";

void write_f32_le(std::ostream& out, const float* data, std::size_t n) {
    static_assert(std::endian::native == std::endian::little,
                  "big-endian hosts need byte swapping here");
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 4));
}

} // namespace

void write_checkpoint(const std::string& path, const NamedParams<float>& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << kMagic << '\n';
    for (const auto& [name, p] : params) {
        out << name << '\n';
        out << p->value.rank();
        for (int e : p->value.shape()) out << ' ' << e;
        out << '\n';
        write_f32_le(out, p->value.data(), p->value.size());
    }
    if (!out) throw IoError("short write to " + path);
}

std::map<std::string, Tensor> read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != kMagic)
        throw ParseError(path + ": missing '" + kMagic + "' header");
    std::map<std::string, Tensor> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const std::string name = line;
        if (!std::getline(in, line))
            throw ParseError(path + ": truncated shape line for parameter '" + name + "'");
        std::istringstream shape_in(line);
        int rank = 0;
        if (!(shape_in >> rank) || rank < 0 || rank > 8)
            throw ParseError(path + ": bad rank for parameter '" + name + "'");
        Shape shape(static_cast<std::size_t>(rank));
        for (int i = 0; i < rank; ++i)
            if (!(shape_in >> shape[static_cast<std::size_t>(i)]) || shape[static_cast<std::size_t>(i)] < 1)
                throw ParseError(path + ": bad extent for parameter '" + name + "'");
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * 4));
        if (in.gcount() != static_cast<std::streamsize>(t.size() * 4))
            throw ParseError(path + ": truncated payload for parameter '" + name + "'");
        if (!out.emplace(name, std::move(t)).second)
            throw ParseError(path + ": duplicate parameter '" + name + "'");
    }
    return out;
}

void load_into(const std::map<std::string, Tensor>& ckpt, const NamedParams<float>& params) {
    for (const auto& [name, p] : params) {
        const auto it = ckpt.find(name);
        if (it == ckpt.end())
            throw DataError("checkpoint is missing parameter '" + name + "'");
        if (it->second.shape() != p->value.shape())
            throw DataError("checkpoint shape " + shape_str(it->second.shape()) +
                            " for '" + name + "' does not match model shape " +
                            shape_str(p->value.shape()));
        p->value = it->second;
        p->zero_grad();
    }
}

std::uint64_t tensor_bytes_hash(const Tensor& t) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
    for (std::size_t i = 0; i < t.size() * 4; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t params_hash(const NamedParams<float>& params, bool trainable_only) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, p] : params) {
        if (trainable_only && !p->trainable) continue;
        h ^= tensor_bytes_hash(p->value);
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace dmad
