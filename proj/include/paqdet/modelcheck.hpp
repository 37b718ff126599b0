// Whole-model gradient verification: analytic gradients of the full
// detection loss vs central finite differences over sampled parameter
// coordinates. Top-K selection and Hungarian matching are discrete, so
// coordinates whose probes flip either are resampled rather than compared.
#pragma once

#include "paqdet/image.hpp"
#include "paqdet/matching.hpp"
#include "paqdet/model.hpp"

#include <cstdint>
#include <string>

namespace paqdet {

struct ModelCheckReport {
    double max_rel_err = 0.0;
    int coords_checked = 0;
    int unstable_skipped = 0;    // probes that flipped selection or matching
    std::string worst_param;     // "name[flat_index]"
};

// corrupt != 0 scales the analytic gradients by (1 + corrupt), a negative
// control that must push max_rel_err past any sane tolerance.
ModelCheckReport model_gradient_check(const model::Detector& det, const Image& img,
                                      const match::GroundTruthSet& gt, int num_coords,
                                      double eps, std::uint64_t seed, double corrupt = 0.0);

}  // namespace paqdet
