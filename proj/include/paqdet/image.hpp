// In-memory image (CHW doubles in [0,1]) and binary PPM (P6) round-trip.
#pragma once

#include <string>
#include <vector>

namespace paqdet {

struct Image {
    int size = 0;              // square, side length in pixels
    std::vector<double> data;  // 3*size*size, CHW, values in [0,1]

    double& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * size + y) * size + x]; }
    double at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * size + y) * size + x]; }
};

Image make_image(int size, double fill = 0.0);

// P6 with maxval 255. Values are clamped to [0,1] and rounded on save.
void save_ppm(const Image& img, const std::string& path);

// Strict parse: P6 magic, square dimensions, maxval 255, exact payload size.
// Failures throw with the path and the reason.
Image load_ppm(const std::string& path);

}  // namespace paqdet
