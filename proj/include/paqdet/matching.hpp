// One-to-one matching between decoder queries and ground truths, and the
// detection objective: sigmoid focal classification + L1 + GIoU box losses,
// applied per decoder layer with the matching recomputed per layer.
#pragma once

#include "paqdet/ops.hpp"
#include "paqdet/tensor.hpp"

#include <utility>
#include <vector>

namespace paqdet::match {

// Normalized center-format box. cx,cy in [0,1], w,h in (0,1] for data boxes;
// the geometry functions below are pure and accept any finite extents.
struct Box {
    double cx = 0, cy = 0, w = 0, h = 0;
    bool valid() const {
        return cx >= 0 && cx <= 1 && cy >= 0 && cy <= 1 && w > 0 && w <= 1 && h > 0 && h <= 1;
    }
};

double iou(const Box& a, const Box& b);
double giou(const Box& a, const Box& b);  // in (-1, 1]

struct GroundTruthSet {
    std::vector<Box> boxes;
    std::vector<int> labels;
    int size() const { return static_cast<int>(boxes.size()); }
};

// One (query, gt) pair per ground truth, ordered by gt index. Query indices
// are distinct.
struct MatchAssignment {
    std::vector<std::pair<int, int>> pairs;
};

struct CostWeights {
    double cls = 2.0;
    double l1 = 5.0;
    double giou = 2.0;
};

// cost[i*G + g] = w_cls*(-prob_i[label_g]) + w_l1*||box_i - box_g||_1
//               + w_giou*(-giou(box_i, box_g)), prob = sigmoid(logit).
std::vector<double> build_cost_matrix(const ad::Tensor& logits, const ad::Tensor& boxes,
                                      const GroundTruthSet& gt, const CostWeights& w);

// Minimum-cost injective assignment of all G ground truths to queries
// (requires K >= G). Among cost ties the lexicographically smallest
// assignment by gt index wins.
MatchAssignment hungarian(const std::vector<double>& cost, int num_queries, int num_gts);

double assignment_cost(const std::vector<double>& cost, int num_queries, int num_gts,
                       const MatchAssignment& a);

// Sigmoid focal loss (alpha=0.25, gamma=2) over every (query, class) cell.
// Matched queries target their gt class, everything else targets 0;
// normalized by max(1, G).
ad::Tensor classification_loss(const ad::Tensor& logits, const MatchAssignment& a,
                               const GroundTruthSet& gt);

// (mean L1 over matched pairs, mean (1 - giou)); both zero tensors when G=0.
std::pair<ad::Tensor, ad::Tensor> box_losses(const ad::Tensor& boxes, const MatchAssignment& a,
                                             const GroundTruthSet& gt);

struct LossBreakdown {
    double total = 0, cls = 0, l1 = 0, giou = 0;
    struct Layer {
        double cls = 0, l1 = 0, giou = 0;
    };
    std::vector<Layer> per_layer;
};

struct TotalLoss {
    ad::Tensor value;  // scalar on the graph
    LossBreakdown breakdown;
    std::vector<MatchAssignment> per_layer_assignments;
};

// Auxiliary losses at every decoder layer; matching recomputed independently
// per layer from that layer's outputs. total = sum over layers of
// cls + lambda1*l1 + lambda2*giou.
TotalLoss total_loss(const std::vector<ad::Tensor>& per_layer_logits,
                     const std::vector<ad::Tensor>& per_layer_boxes, const GroundTruthSet& gt,
                     double lambda1, double lambda2, const CostWeights& cw = {});

}  // namespace paqdet::match
