#include "paqdet/modelcheck.hpp"

#include "paqdet/rng.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace paqdet {

namespace {

constexpr double kLambda1 = 5.0;
constexpr double kLambda2 = 2.0;

struct EvalResult {
    double loss;
    std::vector<int> selected;
    std::vector<match::MatchAssignment> assignments;
};

EvalResult eval_loss(const model::Detector& det, const Image& img,
                     const match::GroundTruthSet& gt,
                     const std::vector<std::vector<double>>& values) {
    model::Bound b;
    b.store = &det.params();
    b.tensors.reserve(values.size());
    for (std::size_t i = 0; i < values.size(); ++i)
        b.tensors.push_back(ad::make_constant(det.params().at(static_cast<int>(i)).shape, values[i]));
    model::ForwardResult fr = det.forward(img, b);
    auto tl = match::total_loss(fr.out.per_layer_logits, fr.out.per_layer_boxes, gt, kLambda1,
                                kLambda2);
    return {tl.value.item(), fr.queries.selected_indices, std::move(tl.per_layer_assignments)};
}

bool same_structure(const EvalResult& a, const EvalResult& b) {
    if (a.selected != b.selected) return false;
    if (a.assignments.size() != b.assignments.size()) return false;
    for (std::size_t l = 0; l < a.assignments.size(); ++l)
        if (a.assignments[l].pairs != b.assignments[l].pairs) return false;
    return true;
}

}  // namespace

ModelCheckReport model_gradient_check(const model::Detector& det, const Image& img,
                                      const match::GroundTruthSet& gt, int num_coords,
                                      double eps, std::uint64_t seed, double corrupt) {
    if (num_coords < 1) throw std::invalid_argument("model_gradient_check: num_coords must be >= 1");
    if (!(eps > 0.0) || eps > 1e-2)
        throw std::invalid_argument("model_gradient_check: eps must be in (0, 1e-2]");

    // analytic pass
    ad::Graph g;
    model::Bound bound = det.bind(&g);
    model::ForwardResult fr = det.forward(img, bound);
    auto tl = match::total_loss(fr.out.per_layer_logits, fr.out.per_layer_boxes, gt, kLambda1,
                                kLambda2);
    g.backward(tl.value);

    const model::ParamStore& store = det.params();
    std::vector<std::vector<double>> base(store.size());
    for (int i = 0; i < store.size(); ++i) base[i] = store.at(i).values;

    EvalResult ref;
    ref.loss = tl.value.item();
    ref.selected = fr.queries.selected_indices;
    ref.assignments = tl.per_layer_assignments;

    Rng rng(seed);
    ModelCheckReport report;
    int attempts = 0;
    const int max_attempts = num_coords * 20;
    while (report.coords_checked < num_coords && attempts < max_attempts) {
        ++attempts;
        int pi = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(store.size())));
        std::size_t ci = rng.uniform_int(base[pi].size());

        double saved = base[pi][ci];
        base[pi][ci] = saved + eps;
        EvalResult up = eval_loss(det, img, gt, base);
        base[pi][ci] = saved - eps;
        EvalResult down = eval_loss(det, img, gt, base);
        base[pi][ci] = saved;

        if (!same_structure(ref, up) || !same_structure(ref, down)) {
            ++report.unstable_skipped;
            continue;
        }

        double analytic = g.grad(bound.tensors[pi])[ci] * (1.0 + corrupt);
        double fd = (up.loss - down.loss) / (2.0 * eps);
        double rel = std::abs(analytic - fd) / std::max(1.0, std::abs(analytic));
        if (rel > report.max_rel_err) {
            report.max_rel_err = rel;
            report.worst_param = store.at(pi).name + "[" + std::to_string(ci) + "]";
        }
        ++report.coords_checked;
    }
    if (report.coords_checked < num_coords)
        throw std::runtime_error("model_gradient_check: could not find " +
                                 std::to_string(num_coords) + " stable coordinates (" +
                                 std::to_string(report.unstable_skipped) + " unstable probes)");
    return report;
}

}  // namespace paqdet
