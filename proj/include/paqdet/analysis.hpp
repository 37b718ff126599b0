// Instrumentation for query-activation imbalance (the phenomenon PaQ
// targets) and for the PaQ overhead accounting: exact parameter counts and
// multiply-accumulate counts per forward.
#pragma once

#include "paqdet/matching.hpp"
#include "paqdet/model.hpp"

#include <vector>

namespace paqdet::analysis {

// Gini coefficient of a nonnegative vector: 0 for any constant vector,
// (n-1)/n for one-hot. All-zero input is defined as 0.
double gini(const std::vector<double>& values);

struct ActivationStats {
    std::vector<long long> match_counts;      // per query slot, final layer
    std::vector<double> pattern_grad_norms;   // cumulative L2 per pattern row
    double gini_query_matches = 0;
    double gini_pattern_grads = 0;
    double matched_fraction = 0;              // slots matched >= 1 time
    // exploratory: mean W^D mass per (gt class, pattern) among matched
    // queries; empty in baseline mode
    std::vector<std::vector<double>> class_pattern_mass;
};

// Accumulates over one epoch of training steps.
class ActivationRecorder {
public:
    // num_patterns = 0 disables the pattern-side statistics (baseline mode)
    ActivationRecorder(int num_queries, int num_patterns, int num_classes, int d);

    // final_assignment: last decoder layer's matching for one image.
    // weights: that image's W^D values (K x m, flat), null in baseline.
    // pattern_grad: gradient of the pattern bank (m x d, flat) for the step;
    // pass once per step, null in baseline.
    void record_image(const match::MatchAssignment& final_assignment,
                      const std::vector<int>& gt_labels, const std::vector<double>* weights);
    void record_pattern_grad(const std::vector<double>& pattern_grad);

    ActivationStats finish() const;

private:
    int k_, m_, c_, d_;
    std::vector<long long> counts_;
    std::vector<double> grad_norms_;
    std::vector<std::vector<double>> mass_;
    std::vector<long long> mass_n_;
};

struct CostReport {
    long long total_params = 0;
    long long paq_params = 0;
    // closed-form terms of paq_params: m*d + d*h + h + h*m + m
    long long term_patterns = 0, term_w1 = 0, term_b1 = 0, term_w2 = 0, term_b2 = 0;
    long long total_flops = 0;  // MACs per forward pass, matmuls only
    long long paq_flops = 0;
};

CostReport count_params(const model::ModelConfig& cfg);  // exact, by tensor enumeration
CostReport count_flops(const model::ModelConfig& cfg);

}  // namespace paqdet::analysis
