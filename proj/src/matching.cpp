#include "paqdet/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace paqdet::match {

namespace {

struct Corners {
    double x1, y1, x2, y2;
};

Corners corners(const Box& b) {
    return {b.cx - b.w / 2, b.cy - b.h / 2, b.cx + b.w / 2, b.cy + b.h / 2};
}

double inter_area(const Corners& a, const Corners& b) {
    double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    return (w > 0 && h > 0) ? w * h : 0.0;
}

}  // namespace

double iou(const Box& a, const Box& b) {
    Corners ca = corners(a), cb = corners(b);
    double inter = inter_area(ca, cb);
    double uni = a.w * a.h + b.w * b.h - inter;
    return uni > 0 ? inter / uni : 0.0;
}

double giou(const Box& a, const Box& b) {
    Corners ca = corners(a), cb = corners(b);
    double inter = inter_area(ca, cb);
    double uni = a.w * a.h + b.w * b.h - inter;
    double ew = std::max(ca.x2, cb.x2) - std::min(ca.x1, cb.x1);
    double eh = std::max(ca.y2, cb.y2) - std::min(ca.y1, cb.y1);
    double enc = ew * eh;
    double i = uni > 0 ? inter / uni : 0.0;
    return enc > 0 ? i - (enc - uni) / enc : i;
}

namespace {

double sigmoid_scalar(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// Jonker-Volgenant shortest augmenting path on a square matrix. Returns the
// minimum total cost and fills col_of_row.
double jv_square(const std::vector<double>& cost, int n, std::vector<int>& col_of_row) {
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    std::vector<double> minv(n + 1);
    std::vector<char> used(n + 1);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::fill(minv.begin(), minv.end(), kInf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            int i0 = p[j0], j1 = 0;
            double delta = kInf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                double cur = cost[static_cast<std::size_t>(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j]) { minv[j] = cur; way[j] = j0; }
                if (minv[j] < delta) { delta = minv[j]; j1 = j; }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) { u[p[j]] += delta; v[j] -= delta; }
                else minv[j] -= delta;
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    col_of_row.assign(n, -1);
    double total = 0.0;
    for (int j = 1; j <= n; ++j) {
        if (p[j]) {
            col_of_row[p[j] - 1] = j - 1;
            total += cost[static_cast<std::size_t>(p[j] - 1) * n + (j - 1)];
        }
    }
    return total;
}

// Optimal assignment cost for a subproblem: rows restricted to `rows`,
// columns g0..G-1 of the full K x G matrix. Pads with zero-cost dummy
// columns so JV runs square.
double subproblem_cost(const std::vector<double>& cost, int G, const std::vector<int>& rows, int g0) {
    const int nc = G - g0;
    if (nc == 0) return 0.0;
    const int n = static_cast<int>(rows.size());
    std::vector<double> sq(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < nc; ++j)
            sq[static_cast<std::size_t>(i) * n + j] = cost[static_cast<std::size_t>(rows[i]) * G + g0 + j];
    std::vector<int> dummy;
    return jv_square(sq, n, dummy);
}

// Lower bound on subproblem_cost: sum of per-column minima.
double subproblem_lower_bound(const std::vector<double>& cost, int G, const std::vector<int>& rows, int g0) {
    double lb = 0.0;
    for (int g = g0; g < G; ++g) {
        double mn = kInf;
        for (int r : rows) mn = std::min(mn, cost[static_cast<std::size_t>(r) * G + g]);
        lb += mn;
    }
    return lb;
}

}  // namespace

MatchAssignment hungarian(const std::vector<double>& cost, int num_queries, int num_gts) {
    const int K = num_queries, G = num_gts;
    if (G == 0) return {};
    if (K < G)
        throw std::invalid_argument("hungarian: " + std::to_string(G) + " ground truths but only " +
                                    std::to_string(K) + " queries; one-to-one matching impossible");
    if (cost.size() != static_cast<std::size_t>(K) * G)
        throw std::invalid_argument("hungarian: cost size " + std::to_string(cost.size()) + " != K*G");
    for (double c : cost)
        if (!std::isfinite(c)) throw std::invalid_argument("hungarian: non-finite cost entry");

    std::vector<int> all_rows(K);
    for (int i = 0; i < K; ++i) all_rows[i] = i;
    const double best = subproblem_cost(cost, G, all_rows, 0);
    const double tol = 1e-9 * std::max(1.0, std::fabs(best));

    // Fix gt columns in order, choosing the smallest query index that still
    // admits an optimal completion. A cheap lower bound skips most probes.
    MatchAssignment out;
    std::vector<char> used(K, 0);
    std::vector<int> avail;
    double fixed = 0.0;
    for (int g = 0; g < G; ++g) {
        int chosen = -1;
        double chosen_total = kInf;
        for (int q = 0; q < K; ++q) {
            if (used[q]) continue;
            double edge = fixed + cost[static_cast<std::size_t>(q) * G + g];
            avail.clear();
            for (int r = 0; r < K; ++r)
                if (!used[r] && r != q) avail.push_back(r);
            if (edge + subproblem_lower_bound(cost, G, avail, g + 1) > best + tol) continue;
            double total = edge + subproblem_cost(cost, G, avail, g + 1);
            if (total <= best + tol) { chosen = q; chosen_total = total; break; }
            if (total < chosen_total) { chosen = q; chosen_total = total; }
        }
        if (chosen < 0) {
            // All lower bounds pruned every candidate; fall back to exact probes.
            for (int q = 0; q < K; ++q) {
                if (used[q]) continue;
                avail.clear();
                for (int r = 0; r < K; ++r)
                    if (!used[r] && r != q) avail.push_back(r);
                double total = fixed + cost[static_cast<std::size_t>(q) * G + g] +
                               subproblem_cost(cost, G, avail, g + 1);
                if (total < chosen_total) { chosen = q; chosen_total = total; }
                if (total <= best + tol) break;
            }
        }
        used[chosen] = 1;
        fixed += cost[static_cast<std::size_t>(chosen) * G + g];
        out.pairs.emplace_back(chosen, g);
    }
    return out;
}

double assignment_cost(const std::vector<double>& cost, int num_queries, int num_gts,
                       const MatchAssignment& a) {
    (void)num_queries;
    double s = 0.0;
    for (auto [q, g] : a.pairs) s += cost[static_cast<std::size_t>(q) * num_gts + g];
    return s;
}

std::vector<double> build_cost_matrix(const ad::Tensor& logits, const ad::Tensor& boxes,
                                      const GroundTruthSet& gt, const CostWeights& w) {
    const int K = logits.rows();
    const int C = logits.cols();
    const int G = gt.size();
    if (G < 1) throw std::invalid_argument("build_cost_matrix: needs at least one ground truth");
    if (boxes.rows() != K || boxes.cols() != 4)
        throw std::invalid_argument("build_cost_matrix: boxes shape " + ad::shape_str(boxes.shape()) +
                                    ", expected (" + std::to_string(K) + ",4)");
    const auto& lv = logits.values();
    const auto& bv = boxes.values();
    std::vector<double> cost(static_cast<std::size_t>(K) * G);
    for (int i = 0; i < K; ++i) {
        Box pb{bv[i * 4 + 0], bv[i * 4 + 1], bv[i * 4 + 2], bv[i * 4 + 3]};
        for (int g = 0; g < G; ++g) {
            const int label = gt.labels[g];
            if (label < 0 || label >= C)
                throw std::invalid_argument("build_cost_matrix: label " + std::to_string(label) +
                                            " out of range [0," + std::to_string(C) + ")");
            double prob = sigmoid_scalar(lv[static_cast<std::size_t>(i) * C + label]);
            const Box& gb = gt.boxes[g];
            double l1 = std::fabs(pb.cx - gb.cx) + std::fabs(pb.cy - gb.cy) +
                        std::fabs(pb.w - gb.w) + std::fabs(pb.h - gb.h);
            cost[static_cast<std::size_t>(i) * G + g] =
                w.cls * (-prob) + w.l1 * l1 + w.giou * (-giou(pb, gb));
        }
    }
    return cost;
}

ad::Tensor classification_loss(const ad::Tensor& logits, const MatchAssignment& a,
                               const GroundTruthSet& gt) {
    constexpr double kAlpha = 0.25;
    constexpr double kGamma = 2.0;
    const int K = logits.rows();
    const int C = logits.cols();
    const int G = gt.size();

    std::vector<double> target(static_cast<std::size_t>(K) * C, 0.0);
    for (auto [q, g] : a.pairs) {
        if (q < 0 || q >= K) throw std::invalid_argument("classification_loss: query index out of range");
        target[static_cast<std::size_t>(q) * C + gt.labels[g]] = 1.0;
    }
    std::vector<double> alpha(target.size());
    std::vector<double> not_target(target.size());
    for (std::size_t i = 0; i < target.size(); ++i) {
        alpha[i] = target[i] > 0.5 ? kAlpha : 1.0 - kAlpha;
        not_target[i] = 1.0 - target[i];
    }
    ad::Tensor t = ad::make_constant({K, C}, std::move(target));
    ad::Tensor nt = ad::make_constant({K, C}, std::move(not_target));
    ad::Tensor al = ad::make_constant({K, C}, std::move(alpha));

    // focal BCE in log-space: -log sigmoid(x) = softplus(-x), -log(1-sigmoid(x)) = softplus(x)
    ad::Tensor p = ad::sigmoid(logits);
    ad::Tensor pos = ad::mul(ad::mul(ad::pow(ad::add_scalar(ad::neg(p), 1.0), kGamma),
                                     ad::softplus(ad::neg(logits))), t);
    ad::Tensor negt = ad::mul(ad::mul(ad::pow(p, kGamma), ad::softplus(logits)), nt);
    ad::Tensor cells = ad::mul(ad::add(pos, negt), al);
    return ad::scale(ad::sum(cells), 1.0 / std::max(1, G));
}

std::pair<ad::Tensor, ad::Tensor> box_losses(const ad::Tensor& boxes, const MatchAssignment& a,
                                             const GroundTruthSet& gt) {
    const int G = gt.size();
    if (G == 0) return {ad::zeros({1}), ad::zeros({1})};
    if (static_cast<int>(a.pairs.size()) != G)
        throw std::invalid_argument("box_losses: assignment covers " + std::to_string(a.pairs.size()) +
                                    " of " + std::to_string(G) + " ground truths");

    std::vector<int> rows(G);
    std::vector<double> gtbox(static_cast<std::size_t>(G) * 4);
    for (int g = 0; g < G; ++g) {
        rows[g] = a.pairs[g].first;
        const Box& b = gt.boxes[a.pairs[g].second];
        gtbox[g * 4 + 0] = b.cx;
        gtbox[g * 4 + 1] = b.cy;
        gtbox[g * 4 + 2] = b.w;
        gtbox[g * 4 + 3] = b.h;
    }
    ad::Tensor pred = ad::gather_rows(boxes, rows);
    ad::Tensor gtb = ad::make_constant({G, 4}, gtbox);

    ad::Tensor l1 = ad::scale(ad::sum(ad::abs(ad::sub(pred, gtb))), 1.0 / G);

    auto col = [](const ad::Tensor& t, int c) { return ad::slice_cols(t, c, c + 1); };
    ad::Tensor pcx = col(pred, 0), pcy = col(pred, 1), pw = col(pred, 2), ph = col(pred, 3);
    ad::Tensor px1 = ad::sub(pcx, ad::scale(pw, 0.5)), px2 = ad::add(pcx, ad::scale(pw, 0.5));
    ad::Tensor py1 = ad::sub(pcy, ad::scale(ph, 0.5)), py2 = ad::add(pcy, ad::scale(ph, 0.5));

    std::vector<double> gx1(G), gy1(G), gx2(G), gy2(G), garea(G);
    for (int g = 0; g < G; ++g) {
        Corners c = corners(gt.boxes[a.pairs[g].second]);
        gx1[g] = c.x1; gy1[g] = c.y1; gx2[g] = c.x2; gy2[g] = c.y2;
        garea[g] = (c.x2 - c.x1) * (c.y2 - c.y1);
    }
    ad::Tensor cgx1 = ad::make_constant({G, 1}, gx1), cgy1 = ad::make_constant({G, 1}, gy1);
    ad::Tensor cgx2 = ad::make_constant({G, 1}, gx2), cgy2 = ad::make_constant({G, 1}, gy2);
    ad::Tensor carea = ad::make_constant({G, 1}, garea);

    ad::Tensor iw = ad::relu(ad::sub(ad::minimum(px2, cgx2), ad::maximum(px1, cgx1)));
    ad::Tensor ih = ad::relu(ad::sub(ad::minimum(py2, cgy2), ad::maximum(py1, cgy1)));
    ad::Tensor inter = ad::mul(iw, ih);
    ad::Tensor uni = ad::sub(ad::add(ad::mul(pw, ph), carea), inter);
    ad::Tensor iou_t = ad::divide(inter, uni);

    ad::Tensor ew = ad::sub(ad::maximum(px2, cgx2), ad::minimum(px1, cgx1));
    ad::Tensor eh = ad::sub(ad::maximum(py2, cgy2), ad::minimum(py1, cgy1));
    ad::Tensor enc = ad::mul(ew, eh);
    ad::Tensor giou_t = ad::sub(iou_t, ad::divide(ad::sub(enc, uni), enc));
    ad::Tensor giou_loss = ad::scale(ad::sum(ad::add_scalar(ad::neg(giou_t), 1.0)), 1.0 / G);

    return {l1, giou_loss};
}

TotalLoss total_loss(const std::vector<ad::Tensor>& per_layer_logits,
                     const std::vector<ad::Tensor>& per_layer_boxes, const GroundTruthSet& gt,
                     double lambda1, double lambda2, const CostWeights& cw) {
    if (per_layer_logits.empty() || per_layer_logits.size() != per_layer_boxes.size())
        throw std::invalid_argument("total_loss: per-layer outputs missing or mismatched");
    if (gt.boxes.size() != gt.labels.size())
        throw std::invalid_argument("total_loss: ground truth boxes/labels length mismatch");

    TotalLoss result;
    ad::Tensor total;
    const int L = static_cast<int>(per_layer_logits.size());
    for (int l = 0; l < L; ++l) {
        const ad::Tensor& logits = per_layer_logits[l];
        const ad::Tensor& boxes = per_layer_boxes[l];
        MatchAssignment a;
        if (gt.size() > 0) {
            auto cost = build_cost_matrix(logits, boxes, gt, cw);
            a = hungarian(cost, logits.rows(), gt.size());
        }
        ad::Tensor cls = classification_loss(logits, a, gt);
        auto [l1, gl] = box_losses(boxes, a, gt);
        ad::Tensor layer = ad::add(cls, ad::add(ad::scale(l1, lambda1), ad::scale(gl, lambda2)));
        total = l == 0 ? layer : ad::add(total, layer);
        result.breakdown.per_layer.push_back({cls.item(), l1.item(), gl.item()});
        result.breakdown.cls += cls.item();
        result.breakdown.l1 += l1.item();
        result.breakdown.giou += gl.item();
        result.per_layer_assignments.push_back(std::move(a));
    }
    result.value = total;
    result.breakdown.total = total.item();
    return result;
}

}  // namespace paqdet::match
