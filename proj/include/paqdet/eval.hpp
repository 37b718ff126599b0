// COCO-style evaluation: greedy IoU matching, 101-point interpolated AP per
// class at IoU 0.5 and averaged over 0.50:0.95, plus aggregate precision and
// recall at score 0.5. No NMS anywhere, matching the DETR family.
#pragma once

#include "paqdet/matching.hpp"
#include "paqdet/model.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace paqdet::eval {

struct Detection {
    int image_id = 0;
    int class_id = 0;
    double score = 0;
    match::Box box;
};

struct GtInstance {
    int image_id = 0;
    int class_id = 0;
    match::Box box;
};

struct APResult {
    std::map<int, double> per_class_ap50;    // only classes with >= 1 GT
    std::map<int, double> per_class_ap5095;
    double map50 = 0;
    double map5095 = 0;
    double precision = 0;  // at score threshold 0.5, IoU 0.5, all classes
    double recall = 0;
};

// Final-layer predictions of one image -> detections. Per query: the class
// with the highest sigmoid probability, kept when >= score_threshold, sorted
// by descending score (ties keep query order), truncated to max_det.
std::vector<Detection> extract_detections(const model::ModelOutput& out, int image_id,
                                          double score_threshold, int max_det);

// AP for one class at one IoU threshold; nullopt when the class has no GT
// instances (excluded from means).
std::optional<double> compute_ap(const std::vector<Detection>& dets,
                                 const std::vector<GtInstance>& gts, int class_id,
                                 double iou_threshold);

// Rejects an entirely GT-free input.
APResult compute_map(const std::vector<Detection>& dets, const std::vector<GtInstance>& gts);

const std::vector<double>& iou_thresholds();  // 0.50, 0.55, ..., 0.95

void save_detections(const std::vector<Detection>& dets, const std::string& path);
std::vector<Detection> load_detections(const std::string& path);

}  // namespace paqdet::eval
