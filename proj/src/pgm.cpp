#include "dmad/pgm.hpp"

#include <cmath>
#include <fstream>

#include "dmad/error.hpp"

namespace dmad {

namespace {

void skip_pgm_space(const std::string& s, std::size_t& pos) {
    while (pos < s.size()) {
        const char c = s[pos];
        if (c == '#') { // comment runs to end of line
            while (pos < s.size() && s[pos] != '\n') ++pos;
        } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
            ++pos;
        } else {
            break;
        }
    }
}

int parse_pgm_int(const std::string& s, std::size_t& pos, const char* what) {
    skip_pgm_space(s, pos);
    if (pos >= s.size() || s[pos] < '0' || s[pos] > '9')
        throw ParseError(std::string("pgm: expected ") + what + " at byte " +
                         std::to_string(pos));
    long v = 0;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
        v = v * 10 + (s[pos] - '0');
        if (v > 1 << 20) throw ParseError(std::string("pgm: ") + what + " out of range");
        ++pos;
    }
    return static_cast<int>(v);
}

} // namespace

std::string save_pgm(const Tensor& image) {
    int h = 0, w = 0;
    if (image.rank() == 3 && image.extent(0) == 1) {
        h = image.extent(1);
        w = image.extent(2);
    } else if (image.rank() == 2) {
        h = image.extent(0);
        w = image.extent(1);
    } else {
        throw DimensionError("save_pgm expects [1 x h x w] or [h x w], got " +
                             shape_str(image.shape()));
    }
    std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    out.reserve(out.size() + static_cast<std::size_t>(h) * w);
    for (std::size_t i = 0; i < image.size(); ++i) {
        const float v = image[i];
        if (!(v >= 0.0f && v <= 1.0f))
            throw DataError("save_pgm: pixel value " + std::to_string(v) + " outside [0, 1]");
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
    }
    return out;
}

Tensor load_pgm(const std::string& bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
        throw ParseError("pgm: missing P5 magic at byte 0");
    std::size_t pos = 2;
    const int w = parse_pgm_int(bytes, pos, "width");
    const int h = parse_pgm_int(bytes, pos, "height");
    const int maxval = parse_pgm_int(bytes, pos, "maxval");
    if (maxval != 255)
        throw ParseError("pgm: unsupported maxval " + std::to_string(maxval) + " at byte " +
                         std::to_string(pos));
    if (pos >= bytes.size() || (bytes[pos] != '\n' && bytes[pos] != ' ' && bytes[pos] != '\t' &&
                                bytes[pos] != '\r'))
        throw ParseError("pgm: expected single whitespace after maxval at byte " +
                         std::to_string(pos));
    ++pos; // exactly one whitespace byte separates header from payload
    const std::size_t need = static_cast<std::size_t>(w) * h;
    if (bytes.size() - pos < need)
        throw ParseError("pgm: payload truncated at byte " + std::to_string(bytes.size()) +
                         ", expected " + std::to_string(pos + need) + " bytes total");
    Tensor img(Shape{1, h, w});
    for (std::size_t i = 0; i < need; ++i)
        img[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i])) / 255.0f;
    return img;
}

void write_pgm_file(const std::string& path, const Tensor& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    const std::string bytes = save_pgm(image);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path);
}

Tensor read_pgm_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return load_pgm(bytes);
}

} // namespace dmad
