#include "paqdet/data.hpp"

#include "paqdet/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

namespace fs = std::filesystem;

namespace paqdet::data {

const std::array<const char*, kNumClasses> kClassNames = {
    "tall_rect", "small_square", "disc", "bar", "ellipse", "triangle"};

void DatasetConfig::validate() const {
    if (train_images < 1 || val_images < 1 || test_images < 1)
        throw std::invalid_argument("data config: every split needs at least one image");
    if (image_size < 16 || image_size > 512)
        throw std::invalid_argument("data config: image_size " + std::to_string(image_size) +
                                    " outside [16, 512]");
    if (static_cast<int>(class_probs.size()) != kNumClasses)
        throw std::invalid_argument("data config: class_probs needs exactly " +
                                    std::to_string(kNumClasses) + " entries");
    double sum = 0;
    for (double p : class_probs) {
        if (p < 0) throw std::invalid_argument("data config: negative class probability");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("data config: class_probs sum to " + std::to_string(sum) +
                                    ", expected 1");
    if (min_objects < 0 || max_objects < min_objects)
        throw std::invalid_argument("data config: need 0 <= min_objects <= max_objects");
    if (overlap_allowance < 0 || overlap_allowance > 1)
        throw std::invalid_argument("data config: overlap_allowance outside [0, 1]");
}

namespace {

struct GlyphStyle {
    double r, g, b;
};

// per-class base colors; disc (2) and ellipse (4) share the warm family
constexpr GlyphStyle kBaseColor[kNumClasses] = {
    {0.20, 0.35, 0.85},  // tall_rect: blue
    {0.90, 0.85, 0.15},  // small_square: yellow
    {0.90, 0.35, 0.20},  // disc: warm
    {0.20, 0.75, 0.30},  // bar: green
    {0.88, 0.40, 0.22},  // ellipse: warm, flattened
    {0.60, 0.25, 0.80},  // triangle: purple
};

// Draw the glyph's size for its class; the box is the exact glyph bounds.
match::Box sample_extent(int cls, Rng& rng) {
    match::Box b;
    switch (cls) {
        case 0:  // tall rectangle
            b.w = rng.uniform(0.10, 0.16);
            b.h = b.w * rng.uniform(1.8, 2.6);
            break;
        case 1:  // small square
            b.w = b.h = rng.uniform(0.09, 0.13);
            break;
        case 2:  // disc
            b.w = b.h = rng.uniform(0.16, 0.26);
            break;
        case 3:  // horizontal capsule bar
            b.w = rng.uniform(0.26, 0.40);
            b.h = rng.uniform(0.08, 0.12);
            break;
        case 4:  // ellipse: disc diameters, squashed vertically
            b.w = rng.uniform(0.16, 0.26);
            b.h = b.w * rng.uniform(0.45, 0.62);
            break;
        case 5:  // triangle
            b.w = rng.uniform(0.16, 0.26);
            b.h = rng.uniform(0.14, 0.24);
            break;
        default:
            throw std::logic_error("sample_extent: bad class");
    }
    return b;
}

bool inside_glyph(int cls, double nx, double ny) {
    // nx, ny in [-1, 1] across the glyph's box
    switch (cls) {
        case 0:
        case 1:
            return true;  // filled rectangle / square
        case 2:
        case 4:
            return nx * nx + ny * ny <= 1.0;  // disc / ellipse in box coords
        case 5:
            // apex at the top center, base along the bottom
            return std::abs(nx) <= (ny + 1.0) / 2.0;
        default:
            return false;
    }
}

void render_glyph(Image& img, int cls, const match::Box& box, const GlyphStyle& color) {
    const int S = img.size;
    const double x1 = (box.cx - box.w / 2) * S, x2 = (box.cx + box.w / 2) * S;
    const double y1 = (box.cy - box.h / 2) * S, y2 = (box.cy + box.h / 2) * S;
    const int px1 = std::max(0, static_cast<int>(std::floor(x1)));
    const int px2 = std::min(S - 1, static_cast<int>(std::ceil(x2)));
    const int py1 = std::max(0, static_cast<int>(std::floor(y1)));
    const int py2 = std::min(S - 1, static_cast<int>(std::ceil(y2)));

    const double aspect = box.h / box.w;  // capsule cap radius in nx units
    for (int y = py1; y <= py2; ++y) {
        for (int x = px1; x <= px2; ++x) {
            double cx = x + 0.5, cy = y + 0.5;
            if (cx < x1 || cx > x2 || cy < y1 || cy > y2) continue;
            double nx = 2.0 * (cx - x1) / (x2 - x1) - 1.0;
            double ny = 2.0 * (cy - y1) / (y2 - y1) - 1.0;
            bool hit;
            if (cls == 3) {
                // horizontal capsule: rectangle body plus round caps whose
                // x-extent is aspect (h/w) in normalized units
                double body = 1.0 - aspect;
                if (std::abs(nx) <= body) {
                    hit = std::abs(ny) <= 1.0;
                } else {
                    double ex = (std::abs(nx) - body) / aspect;
                    hit = ex * ex + ny * ny <= 1.0;
                }
            } else {
                hit = inside_glyph(cls, nx, ny);
            }
            if (!hit) continue;
            img.at(0, y, x) = color.r;
            img.at(1, y, x) = color.g;
            img.at(2, y, x) = color.b;
        }
    }
}

}  // namespace

Scene generate_scene(const DatasetConfig& cfg, int image_id) {
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(image_id)));

    Scene scene;
    scene.image = make_image(cfg.image_size);
    scene.annotation.image_id = image_id;

    // dim noisy background
    for (auto& v : scene.image.data) v = rng.uniform(0.05, 0.20);

    const int span = cfg.max_objects - cfg.min_objects + 1;
    const int target = cfg.min_objects + static_cast<int>(rng.uniform_int(span));

    for (int obj = 0; obj < target; ++obj) {
        int cls = rng.categorical(cfg.class_probs);
        match::Box box = sample_extent(cls, rng);
        GlyphStyle color = kBaseColor[cls];
        color.r = std::clamp(color.r + rng.uniform(-0.08, 0.08), 0.0, 1.0);
        color.g = std::clamp(color.g + rng.uniform(-0.08, 0.08), 0.0, 1.0);
        color.b = std::clamp(color.b + rng.uniform(-0.08, 0.08), 0.0, 1.0);

        bool placed = false;
        for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
            box.cx = rng.uniform(box.w / 2, 1.0 - box.w / 2);
            box.cy = rng.uniform(box.h / 2, 1.0 - box.h / 2);
            bool clash = false;
            for (const auto& other : scene.annotation.boxes) {
                if (match::iou(box, other) > cfg.overlap_allowance) {
                    clash = true;
                    break;
                }
            }
            placed = !clash;
        }
        if (!placed) continue;  // drop the object, never loop forever

        render_glyph(scene.image, cls, box, color);
        scene.annotation.boxes.push_back(box);
        scene.annotation.labels.push_back(cls);
    }
    return scene;
}

namespace {

std::string image_file_name(int image_id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "img_%05d.ppm", image_id);
    return std::string("images/") + buf;
}

}  // namespace

std::array<std::vector<long long>, 3> generate_dataset(const DatasetConfig& cfg,
                                                       const std::string& root) {
    cfg.validate();
    const std::array<std::string, 3> split_names = {"train", "val", "test"};
    const std::array<int, 3> split_sizes = {cfg.train_images, cfg.val_images, cfg.test_images};

    std::array<std::vector<long long>, 3> counts;
    int next_id = 0;
    for (int s = 0; s < 3; ++s) {
        counts[s].assign(kNumClasses, 0);
        fs::path dir = fs::path(root) / split_names[s];
        fs::create_directories(dir / "images");

        DatasetSplit split;
        split.image_size = cfg.image_size;
        for (int i = 0; i < split_sizes[s]; ++i) {
            int id = next_id++;
            Scene scene = generate_scene(cfg, id);
            std::string file = image_file_name(id);
            save_ppm(scene.image, (dir / file).string());
            for (int label : scene.annotation.labels) ++counts[s][label];
            split.scenes.push_back(std::move(scene.annotation));
            split.files.push_back(file);
        }
        save_annotations(split, (dir / "annotations.json").string());
    }
    return counts;
}

void save_annotations(const DatasetSplit& split, const std::string& path) {
    if (split.scenes.size() != split.files.size())
        throw std::invalid_argument("save_annotations: scenes/files length mismatch");
    nlohmann::json j;
    j["images"] = nlohmann::json::array();
    j["annotations"] = nlohmann::json::array();
    j["categories"] = nlohmann::json::array();
    for (int c = 0; c < kNumClasses; ++c)
        j["categories"].push_back({{"id", c}, {"name", kClassNames[c]}});
    for (std::size_t i = 0; i < split.scenes.size(); ++i) {
        const SceneAnnotation& sc = split.scenes[i];
        j["images"].push_back({{"id", sc.image_id},
                               {"file", split.files[i]},
                               {"width", split.image_size},
                               {"height", split.image_size}});
        for (std::size_t k = 0; k < sc.boxes.size(); ++k) {
            const match::Box& b = sc.boxes[k];
            j["annotations"].push_back({{"image_id", sc.image_id},
                                        {"class_id", sc.labels[k]},
                                        {"bbox", {b.cx, b.cy, b.w, b.h}}});
        }
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_annotations: cannot write " + path);
    out << j.dump(2) << "\n";
}

DatasetSplit load_annotations(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_annotations: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_annotations: " + path + ": " + e.what());
    }

    auto fail = [&](const std::string& where, const std::string& why) -> void {
        throw std::runtime_error("load_annotations: " + path + ": " + where + ": " + why);
    };

    if (!j.is_object() || !j.contains("images") || !j.contains("annotations") ||
        !j.contains("categories"))
        fail("top level", "expected keys images, annotations, categories");

    std::vector<int> valid_classes;
    for (std::size_t i = 0; i < j["categories"].size(); ++i) {
        const auto& c = j["categories"][i];
        if (!c.contains("id") || !c["id"].is_number_integer())
            fail("categories[" + std::to_string(i) + "]", "missing integer id");
        valid_classes.push_back(c["id"].get<int>());
    }

    DatasetSplit split;
    std::unordered_map<int, std::size_t> scene_of_id;
    for (std::size_t i = 0; i < j["images"].size(); ++i) {
        const auto& im = j["images"][i];
        std::string where = "images[" + std::to_string(i) + "]";
        for (const char* key : {"id", "file", "width", "height"})
            if (!im.contains(key)) fail(where, std::string("missing key '") + key + "'");
        int w = im["width"].get<int>(), h = im["height"].get<int>();
        if (w != h) fail(where, "non-square image");
        if (split.image_size == 0) split.image_size = w;
        if (w != split.image_size) fail(where, "mixed image sizes in one split");
        int id = im["id"].get<int>();
        if (scene_of_id.count(id)) fail(where, "duplicate image id " + std::to_string(id));
        scene_of_id[id] = split.scenes.size();
        SceneAnnotation sc;
        sc.image_id = id;
        split.scenes.push_back(sc);
        split.files.push_back(im["file"].get<std::string>());
    }

    for (std::size_t i = 0; i < j["annotations"].size(); ++i) {
        const auto& an = j["annotations"][i];
        std::string where = "annotations[" + std::to_string(i) + "]";
        for (const char* key : {"image_id", "class_id", "bbox"})
            if (!an.contains(key)) fail(where, std::string("missing key '") + key + "'");
        int image_id = an["image_id"].get<int>();
        auto it = scene_of_id.find(image_id);
        if (it == scene_of_id.end()) fail(where, "unknown image_id " + std::to_string(image_id));
        int cls = an["class_id"].get<int>();
        if (std::find(valid_classes.begin(), valid_classes.end(), cls) == valid_classes.end())
            fail(where, "unknown class id " + std::to_string(cls));
        const auto& bb = an["bbox"];
        if (!bb.is_array() || bb.size() != 4) fail(where, "bbox must be [cx,cy,w,h]");
        match::Box b{bb[0].get<double>(), bb[1].get<double>(), bb[2].get<double>(),
                     bb[3].get<double>()};
        if (!b.valid()) fail(where, "invalid box (needs cx,cy in [0,1], w,h in (0,1])");
        if (b.cx - b.w / 2 < -1e-9 || b.cx + b.w / 2 > 1 + 1e-9 || b.cy - b.h / 2 < -1e-9 ||
            b.cy + b.h / 2 > 1 + 1e-9)
            fail(where, "box extends outside the image");
        SceneAnnotation& sc = split.scenes[it->second];
        sc.boxes.push_back(b);
        sc.labels.push_back(cls);
    }
    return split;
}

}  // namespace paqdet::data
