#include "paqdet/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace paqdet {

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& why) {
    throw std::runtime_error("ppm: " + path + ": " + why);
}

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    return tok;
}

int parse_dim(const std::string& path, const std::string& tok) {
    if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos)
        fail(path, "bad header field '" + tok + "'");
    long v = std::stol(tok);
    if (v < 1 || v > 4096) fail(path, "dimension " + tok + " outside [1, 4096]");
    return static_cast<int>(v);
}

}  // namespace

Image make_image(int size, double fill) {
    if (size < 1) throw std::invalid_argument("make_image: size must be positive");
    Image img;
    img.size = size;
    img.data.assign(static_cast<std::size_t>(3) * size * size, fill);
    return img;
}

void save_ppm(const Image& img, const std::string& path) {
    if (img.size < 1 || img.data.size() != static_cast<std::size_t>(3) * img.size * img.size)
        throw std::invalid_argument("save_ppm: image buffer does not match its size field");
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(path, "cannot open for writing");
    out << "P6\n" << img.size << " " << img.size << "\n255\n";
    const int s = img.size;
    std::vector<unsigned char> row(static_cast<std::size_t>(s) * 3);
    for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
            for (int c = 0; c < 3; ++c) {
                double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
                row[x * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
            }
        }
        out.write(reinterpret_cast<const char*>(row.data()), row.size());
    }
    if (!out) fail(path, "write failed");
}

Image load_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(path, "cannot open");
    std::string magic = next_token(in);
    if (magic != "P6") fail(path, "magic '" + magic + "' is not P6");
    int w = parse_dim(path, next_token(in));
    int h = parse_dim(path, next_token(in));
    if (w != h) fail(path, "expected a square image, got " + std::to_string(w) + "x" + std::to_string(h));
    std::string maxval = next_token(in);
    if (maxval != "255") fail(path, "maxval '" + maxval + "' is not 255");
    // header ends with exactly one whitespace byte, already consumed by next_token

    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size())
        fail(path, "payload truncated: expected " + std::to_string(raw.size()) + " bytes, got " +
                        std::to_string(in.gcount()));
    if (in.get() != EOF) fail(path, "trailing bytes after pixel payload");

    Image img = make_image(w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(c, y, x) = raw[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0;
    return img;
}

}  // namespace paqdet
