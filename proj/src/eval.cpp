#include "paqdet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace paqdet::eval {

namespace {

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

// indices into dets, by descending score, input order on ties
std::vector<int> ranked(const std::vector<Detection>& dets) {
    std::vector<int> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return dets[a].score > dets[b].score; });
    return order;
}

// Greedy matcher shared by AP and precision/recall: walks detections in rank
// order, each taking the unmatched same-image GT with the best IoU >=
// threshold (lower GT index on ties). Returns per-rank hit flags.
std::vector<char> greedy_match(const std::vector<Detection>& dets, const std::vector<int>& order,
                               const std::vector<GtInstance>& gts, double iou_threshold) {
    std::vector<char> gt_used(gts.size(), 0), hits(order.size(), 0);
    for (std::size_t r = 0; r < order.size(); ++r) {
        const Detection& d = dets[order[r]];
        int best = -1;
        double best_iou = -1;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (gt_used[g] || gts[g].image_id != d.image_id) continue;
            double v = match::iou(d.box, gts[g].box);
            if (v >= iou_threshold && v > best_iou) {
                best_iou = v;
                best = static_cast<int>(g);
            }
        }
        if (best >= 0) {
            gt_used[best] = 1;
            hits[r] = 1;
        }
    }
    return hits;
}

double ap_from_hits(const std::vector<char>& hits, std::size_t num_gt) {
    const std::size_t n = hits.size();
    if (num_gt == 0) throw std::logic_error("ap_from_hits: zero ground truths");
    if (n == 0) return 0.0;

    std::vector<double> prec(n), rec(n);
    int tp = 0;
    for (std::size_t k = 0; k < n; ++k) {
        tp += hits[k];
        prec[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
        rec[k] = static_cast<double>(tp) / static_cast<double>(num_gt);
    }
    // precision envelope: best precision at or beyond each rank
    std::vector<double> env(n);
    env[n - 1] = prec[n - 1];
    for (std::size_t k = n - 1; k-- > 0;) env[k] = std::max(prec[k], env[k + 1]);

    // recall is nondecreasing: advance one cursor across the 101 levels
    double ap = 0.0;
    std::size_t k = 0;
    for (int j = 0; j <= 100; ++j) {
        double r = j / 100.0;
        while (k < n && rec[k] < r) ++k;
        if (k == n) break;
        ap += env[k];
    }
    return ap / 101.0;
}

}  // namespace

std::vector<Detection> extract_detections(const model::ModelOutput& out, int image_id,
                                          double score_threshold, int max_det) {
    if (out.per_layer_logits.empty())
        throw std::invalid_argument("extract_detections: model output has no layers");
    if (max_det < 0) throw std::invalid_argument("extract_detections: max_det must be >= 0");
    const ad::Tensor& logits = out.per_layer_logits.back();
    const ad::Tensor& boxes = out.per_layer_boxes.back();
    const int K = logits.rows(), C = logits.cols();

    std::vector<Detection> dets;
    for (int q = 0; q < K; ++q) {
        int best_c = 0;
        double best_s = -1;
        for (int c = 0; c < C; ++c) {
            double s = sigmoid(logits.values()[static_cast<std::size_t>(q) * C + c]);
            if (s > best_s) {
                best_s = s;
                best_c = c;
            }
        }
        if (best_s < score_threshold) continue;
        const double* b = &boxes.values()[static_cast<std::size_t>(q) * 4];
        dets.push_back({image_id, best_c, best_s, {b[0], b[1], b[2], b[3]}});
    }
    std::vector<int> order = ranked(dets);
    std::vector<Detection> sorted;
    sorted.reserve(std::min<std::size_t>(order.size(), max_det));
    for (int i : order) {
        if (static_cast<int>(sorted.size()) == max_det) break;
        sorted.push_back(dets[i]);
    }
    return sorted;
}

std::optional<double> compute_ap(const std::vector<Detection>& dets,
                                 const std::vector<GtInstance>& gts, int class_id,
                                 double iou_threshold) {
    std::vector<GtInstance> cls_gts;
    for (const auto& g : gts)
        if (g.class_id == class_id) cls_gts.push_back(g);
    if (cls_gts.empty()) return std::nullopt;

    std::vector<Detection> cls_dets;
    for (const auto& d : dets)
        if (d.class_id == class_id) cls_dets.push_back(d);

    std::vector<int> order = ranked(cls_dets);
    std::vector<char> hits = greedy_match(cls_dets, order, cls_gts, iou_threshold);
    return ap_from_hits(hits, cls_gts.size());
}

const std::vector<double>& iou_thresholds() {
    static const std::vector<double> t = [] {
        std::vector<double> v;
        for (int i = 0; i < 10; ++i) v.push_back(0.50 + 0.05 * i);
        return v;
    }();
    return t;
}

APResult compute_map(const std::vector<Detection>& dets, const std::vector<GtInstance>& gts) {
    if (gts.empty()) throw std::invalid_argument("compute_map: no ground truth instances at all");

    std::set<int> classes;
    for (const auto& g : gts) classes.insert(g.class_id);

    APResult res;
    for (int c : classes) {
        double ap50 = *compute_ap(dets, gts, c, 0.5);
        double sum = 0;
        for (double thr : iou_thresholds()) sum += *compute_ap(dets, gts, c, thr);
        res.per_class_ap50[c] = ap50;
        res.per_class_ap5095[c] = sum / iou_thresholds().size();
    }
    for (const auto& [c, v] : res.per_class_ap50) res.map50 += v;
    for (const auto& [c, v] : res.per_class_ap5095) res.map5095 += v;
    res.map50 /= res.per_class_ap50.size();
    res.map5095 /= res.per_class_ap5095.size();

    // aggregate precision/recall at score 0.5, IoU 0.5, matched per class
    std::size_t tp = 0, kept = 0;
    for (int c : classes) {
        std::vector<Detection> cd;
        for (const auto& d : dets)
            if (d.class_id == c && d.score >= 0.5) cd.push_back(d);
        std::vector<GtInstance> cg;
        for (const auto& g : gts)
            if (g.class_id == c) cg.push_back(g);
        std::vector<char> hits = greedy_match(cd, ranked(cd), cg, 0.5);
        kept += cd.size();
        for (char h : hits) tp += h;
    }
    // detections of classes with no GT are counted as false positives
    for (const auto& d : dets)
        if (!classes.count(d.class_id) && d.score >= 0.5) ++kept;

    res.precision = kept ? static_cast<double>(tp) / static_cast<double>(kept) : 0.0;
    res.recall = static_cast<double>(tp) / static_cast<double>(gts.size());
    return res;
}

void save_detections(const std::vector<Detection>& dets, const std::string& path) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& d : dets) {
        arr.push_back({{"image_id", d.image_id},
                       {"class_id", d.class_id},
                       {"score", d.score},
                       {"bbox", {d.box.cx, d.box.cy, d.box.w, d.box.h}}});
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_detections: cannot write " + path);
    out << arr.dump(2) << "\n";
}

std::vector<Detection> load_detections(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_detections: cannot open " + path);
    nlohmann::json arr;
    try {
        in >> arr;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_detections: " + path + ": " + e.what());
    }
    if (!arr.is_array()) throw std::runtime_error("load_detections: " + path + ": expected a JSON array");

    std::vector<Detection> dets;
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const auto& j = arr[i];
        std::string where = path + ": entry " + std::to_string(i);
        try {
            Detection d;
            d.image_id = j.at("image_id").get<int>();
            d.class_id = j.at("class_id").get<int>();
            d.score = j.at("score").get<double>();
            const auto& b = j.at("bbox");
            if (!b.is_array() || b.size() != 4)
                throw std::runtime_error(where + ": bbox must be [cx,cy,w,h]");
            d.box = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
            if (!std::isfinite(d.score)) throw std::runtime_error(where + ": non-finite score");
            if (!d.box.valid()) throw std::runtime_error(where + ": invalid box");
            dets.push_back(d);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(where + ": " + e.what());
        }
    }
    return dets;
}

}  // namespace paqdet::eval
