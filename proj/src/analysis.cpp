#include "paqdet/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace paqdet::analysis {

double gini(const std::vector<double>& values) {
    const std::size_t n = values.size();
    if (n == 0) return 0.0;
    for (double v : values)
        if (v < 0 || !std::isfinite(v))
            throw std::invalid_argument("gini: values must be finite and nonnegative");
    double total = std::accumulate(values.begin(), values.end(), 0.0);
    if (total <= 0.0) return 0.0;
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    double weighted = 0.0;
    for (std::size_t i = 0; i < n; ++i) weighted += (i + 1) * sorted[i];
    return (2.0 * weighted) / (n * total) - (static_cast<double>(n) + 1) / n;
}

ActivationRecorder::ActivationRecorder(int num_queries, int num_patterns, int num_classes, int d)
    : k_(num_queries), m_(num_patterns), c_(num_classes), d_(d), counts_(num_queries, 0),
      grad_norms_(std::max(num_patterns, 0), 0.0) {
    if (num_queries < 1) throw std::invalid_argument("ActivationRecorder: need >= 1 query");
    if (m_ > 0) {
        mass_.assign(c_, std::vector<double>(m_, 0.0));
        mass_n_.assign(c_, 0);
    }
}

void ActivationRecorder::record_image(const match::MatchAssignment& final_assignment,
                                      const std::vector<int>& gt_labels,
                                      const std::vector<double>* weights) {
    for (auto [q, g] : final_assignment.pairs) {
        if (q < 0 || q >= k_) throw std::invalid_argument("ActivationRecorder: query index out of range");
        ++counts_[q];
        if (m_ > 0 && weights) {
            int label = gt_labels.at(g);
            if (label < 0 || label >= c_)
                throw std::invalid_argument("ActivationRecorder: label out of range");
            for (int j = 0; j < m_; ++j)
                mass_[label][j] += (*weights)[static_cast<std::size_t>(q) * m_ + j];
            ++mass_n_[label];
        }
    }
}

void ActivationRecorder::record_pattern_grad(const std::vector<double>& pattern_grad) {
    if (m_ == 0) return;
    if (pattern_grad.size() != static_cast<std::size_t>(m_) * d_)
        throw std::invalid_argument("ActivationRecorder: pattern grad size mismatch");
    for (int j = 0; j < m_; ++j) {
        double sq = 0;
        for (int c = 0; c < d_; ++c) {
            double v = pattern_grad[static_cast<std::size_t>(j) * d_ + c];
            sq += v * v;
        }
        grad_norms_[j] += std::sqrt(sq);
    }
}

ActivationStats ActivationRecorder::finish() const {
    ActivationStats s;
    s.match_counts = counts_;
    s.pattern_grad_norms = grad_norms_;
    std::vector<double> cf(counts_.begin(), counts_.end());
    s.gini_query_matches = gini(cf);
    s.gini_pattern_grads = m_ > 0 ? gini(grad_norms_) : 0.0;
    long long hit = 0;
    for (long long c : counts_)
        if (c > 0) ++hit;
    s.matched_fraction = static_cast<double>(hit) / k_;
    if (m_ > 0) {
        s.class_pattern_mass.assign(c_, std::vector<double>(m_, 0.0));
        for (int c = 0; c < c_; ++c)
            if (mass_n_[c] > 0)
                for (int j = 0; j < m_; ++j)
                    s.class_pattern_mass[c][j] = mass_[c][j] / mass_n_[c];
    }
    return s;
}

CostReport count_params(const model::ModelConfig& cfg) {
    cfg.validate();
    CostReport r;
    model::Detector det(cfg, 0);
    const auto& store = det.params();
    for (int i = 0; i < store.size(); ++i) {
        const auto& p = store.at(i);
        long long n = static_cast<long long>(p.values.size());
        r.total_params += n;
        if (p.name.rfind("paq.", 0) == 0) r.paq_params += n;
    }
    if (cfg.mode == model::Mode::paq) {
        r.term_patterns = static_cast<long long>(cfg.m) * cfg.d;
        r.term_w1 = static_cast<long long>(cfg.d) * cfg.wgen_hidden;
        r.term_b1 = cfg.wgen_hidden;
        r.term_w2 = static_cast<long long>(cfg.wgen_hidden) * cfg.m;
        r.term_b2 = cfg.m;
    }
    return r;
}

CostReport count_flops(const model::ModelConfig& cfg) {
    cfg.validate();
    const long long d = cfg.d, M = cfg.tokens(), K = cfg.K, C = cfg.C, F = cfg.ffn_hidden;
    const long long pdim = 3LL * cfg.patch * cfg.patch;

    CostReport r;
    auto mha_flops = [&](long long nq, long long nk) {
        // q/o projections on nq rows, k/v on nk rows, then scores and A*V
        return 2 * nq * d * d + 2 * nk * d * d + 2 * nq * nk * d;
    };

    long long enc = M * pdim * d          // patch embedding
                    + mha_flops(M, M)     // encoder self-attention
                    + 2 * M * d * F       // encoder FFN
                    + M * d * C;          // score head
    long long dec = 0;
    for (int l = 0; l < cfg.L; ++l) {
        long long posq = (l == 0 || cfg.reposition_each_layer) ? (K * 4 * d + K * d * d) : 0;
        dec += posq + mha_flops(K, K) + mha_flops(K, M) + 2 * K * d * F  // sublayers
               + K * d * C                                              // class head
               + K * d * d + K * d * 4;                                 // box head
    }
    r.total_flops = enc + dec;
    if (cfg.mode == model::Mode::paq) {
        r.paq_flops = K * d * cfg.wgen_hidden + K * cfg.wgen_hidden * cfg.m + K * cfg.m * d;
        r.total_flops += r.paq_flops;
    }
    return r;
}

}  // namespace paqdet::analysis
