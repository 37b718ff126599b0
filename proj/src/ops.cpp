#include "paqdet/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace paqdet::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

using Values = std::shared_ptr<const std::vector<double>>;

Tensor finish(Graph* g, Shape shape, std::vector<double> out, std::vector<int> inputs,
              Graph::Backward bw) {
    if (!g) return make_constant(std::move(shape), std::move(out));
    auto sp = std::make_shared<const std::vector<double>>(std::move(out));
    return g->record(std::move(shape), std::move(sp), std::move(inputs), std::move(bw));
}

void require_2d(const Tensor& t, const char* op) {
    if (t.shape().size() != 2)
        throw std::invalid_argument(std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

// b broadcasts over a's leading dims when b.shape is a suffix of a.shape.
// Returns the repeat count, or throws.
std::size_t suffix_reps(const Tensor& a, const Tensor& b, const char* op) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sb.size() > sa.size())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(sa) + " vs " + shape_str(sb));
    for (std::size_t i = 0; i < sb.size(); ++i)
        if (sb[sb.size() - 1 - i] != sa[sa.size() - 1 - i])
            throw std::invalid_argument(std::string(op) + ": " + shape_str(sb) +
                                        " is not a suffix of " + shape_str(sa));
    return numel(sa) / std::max<std::size_t>(1, numel(sb));
}

// Shared driver for elementwise unary ops whose derivative is computed from
// the input value.
template <typename F, typename DF>
Tensor unary_from_input(const Tensor& a, F f, DF df) {
    std::vector<double> out(a.size());
    const auto& x = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
    Graph* g = recording_graph({&a});
    if (!g) return make_constant(a.shape(), std::move(out));
    Values xv = a.values_ptr();
    int ida = a.node_id();
    return finish(g, a.shape(), std::move(out), {ida},
                  [ida, xv, df](Graph& gr, const std::vector<double>& gout) {
                      double* ga = gr.grad_data(ida);
                      const auto& x = *xv;
                      for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i] * df(x[i]);
                  });
}

}  // namespace

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul: inner dims disagree, " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    const int r = a.rows(), k = a.cols(), c = b.cols();
    std::vector<double> out(static_cast<std::size_t>(r) * c);
    {
        CMap A(a.values().data(), r, k), B(b.values().data(), k, c);
        MMap(out.data(), r, c).noalias() = A * B;
    }
    Graph* g = recording_graph({&a, &b});
    if (!g) return make_constant({r, c}, std::move(out));
    Values av = a.values_ptr(), bv = b.values_ptr();
    int ida = a.requires_grad() ? a.node_id() : -1;
    int idb = b.requires_grad() ? b.node_id() : -1;
    return finish(g, {r, c}, std::move(out), {ida, idb},
                  [=](Graph& gr, const std::vector<double>& gout) {
                      CMap G(gout.data(), r, c);
                      if (double* ga = gr.grad_data(ida)) {
                          CMap B(bv->data(), k, c);
                          MMap(ga, r, k).noalias() += G * B.transpose();
                      }
                      if (double* gb = gr.grad_data(idb)) {
                          CMap A(av->data(), r, k);
                          MMap(gb, k, c).noalias() += A.transpose() * G;
                      }
                  });
}

Tensor transpose(const Tensor& a) {
    require_2d(a, "transpose");
    const int r = a.rows(), c = a.cols();
    std::vector<double> out(a.size());
    const auto& x = a.values();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(j) * r + i] = x[static_cast<std::size_t>(i) * c + j];
    Graph* g = recording_graph({&a});
    int ida = a.node_id();
    return finish(g, {c, r}, std::move(out), {ida},
                  [=](Graph& gr, const std::vector<double>& gout) {
                      double* ga = gr.grad_data(ida);
                      for (int j = 0; j < c; ++j)
                          for (int i = 0; i < r; ++i)
                              ga[static_cast<std::size_t>(i) * c + j] += gout[static_cast<std::size_t>(j) * r + i];
                  });
}

// ---------------------------------------------------------------------------
// elementwise / broadcast
// ---------------------------------------------------------------------------

namespace {

// add/sub share the same structure; sign = +1 or -1 applied to b.
Tensor addsub(const Tensor& a, const Tensor& b, double sign, const char* op) {
    std::size_t reps = suffix_reps(a, b, op);
    const std::size_t nb = b.size();
    std::vector<double> out(a.size());
    const auto& xa = a.values();
    const auto& xb = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xa[i] + sign * xb[i % nb];
    Graph* g = recording_graph({&a, &b});
    if (!g) return make_constant(a.shape(), std::move(out));
    int ida = a.requires_grad() ? a.node_id() : -1;
    int idb = b.requires_grad() ? b.node_id() : -1;
    (void)reps;
    return finish(g, a.shape(), std::move(out), {ida, idb},
                  [=](Graph& gr, const std::vector<double>& gout) {
                      if (double* ga = gr.grad_data(ida))
                          for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i];
                      if (double* gb = gr.grad_data(idb))
                          for (std::size_t i = 0; i < gout.size(); ++i) gb[i % nb] += sign * gout[i];
                  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return addsub(a, b, 1.0, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return addsub(a, b, -1.0, "sub"); }

Tensor mul(const Tensor& a, const Tensor& b) {
    suffix_reps(a, b, "mul");
    const std::size_t nb = b.size();
    std::vector<double> out(a.size());
    const auto& xa = a.values();
    const auto& xb = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xa[i] * xb[i % nb];
    Graph* g = recording_graph({&a, &b});
    if (!g) return make_constant(a.shape(), std::move(out));
    Values av = a.values_ptr(), bv = b.values_ptr();
    int ida = a.requires_grad() ? a.node_id() : -1;
    int idb = b.requires_grad() ? b.node_id() : -1;
    return finish(g, a.shape(), std::move(out), {ida, idb},
                  [=](Graph& gr, const std::vector<double>& gout) {
                      if (double* ga = gr.grad_data(ida)) {
                          const auto& xb2 = *bv;
                          for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i] * xb2[i % nb];
                      }
                      if (double* gb = gr.grad_data(idb)) {
                          const auto& xa2 = *av;
                          for (std::size_t i = 0; i < gout.size(); ++i) gb[i % nb] += gout[i] * xa2[i];
                      }
                  });
}

Tensor divide(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "divide");
    std::vector<double> out(a.size());
    const auto& xa = a.values();
    const auto& xb = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xa[i] / xb[i];
    Graph* g = recording_graph({&a, &b});
    if (!g) return make_constant(a.shape(), std::move(out));
    Values av = a.values_ptr(), bv = b.values_ptr();
    int ida = a.requires_grad() ? a.node_id() : -1;
    int idb = b.requires_grad() ? b.node_id() : -1;
    return finish(g, a.shape(), std::move(out), {ida, idb},
                  [=](Graph& gr, const std::vector<double>& gout) {
                      const auto& xa2 = *av;
                      const auto& xb2 = *bv;
                      if (double* ga = gr.grad_data(ida))
                          for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i] / xb2[i];
                      if (double* gb = gr.grad_data(idb))
                          for (std::size_t i = 0; i < gout.size(); ++i)
                              gb[i] -= gout[i] * xa2[i] / (xb2[i] * xb2[i]);
                  });
}

namespace {

Tensor minmax(const Tensor& a, const Tensor& b, bool take_min, const char* op) {
    require_same_shape(a, b, op);
    std::vector<double> out(a.size());
    // Ties route the (sub)gradient to a.
    std::vector<unsigned char> pick_a(a.size());
    const auto& xa = a.values();
    const auto& xb = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        bool pa = take_min ? (xa[i] <= xb[i]) : (xa[i] >= xb[i]);
        pick_a[i] = pa;
        out[i] = pa ? xa[i] : xb[i];
    }
    Graph* g = recording_graph({&a, &b});
    if (!g) return make_constant(a.shape(), std::move(out));
    int ida = a.requires_grad() ? a.node_id() : -1;
    int idb = b.requires_grad() ? b.node_id() : -1;
    auto picks = std::make_shared<std::vector<unsigned char>>(std::move(pick_a));
    return finish(g, a.shape(), std::move(out), {ida, idb},
                  [=](Graph& gr, const std::vector<double>& gout) {
                      double* ga = gr.grad_data(ida);
                      double* gb = gr.grad_data(idb);
                      for (std::size_t i = 0; i < gout.size(); ++i) {
                          if ((*picks)[i]) { if (ga) ga[i] += gout[i]; }
                          else             { if (gb) gb[i] += gout[i]; }
                      }
                  });
}

}  // namespace

Tensor minimum(const Tensor& a, const Tensor& b) { return minmax(a, b, true, "minimum"); }
Tensor maximum(const Tensor& a, const Tensor& b) { return minmax(a, b, false, "maximum"); }

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.size());
    const auto& x = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
    Graph* g = recording_graph({&a});
    int ida = a.node_id();
    return finish(g, a.shape(), std::move(out), {ida},
                  [=](Graph& gr, const std::vector<double>& gout) {
                      double* ga = gr.grad_data(ida);
                      for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i] * s;
                  });
}

Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.size());
    const auto& x = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + s;
    Graph* g = recording_graph({&a});
    int ida = a.node_id();
    return finish(g, a.shape(), std::move(out), {ida},
                  [=](Graph& gr, const std::vector<double>& gout) {
                      double* ga = gr.grad_data(ida);
                      for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i];
                  });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

// ---------------------------------------------------------------------------
// nonlinearities
// ---------------------------------------------------------------------------

Tensor relu(const Tensor& a) {
    return unary_from_input(a, [](double x) { return x > 0.0 ? x : 0.0; },
                            [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

namespace {
double sigmoid_scalar(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}
}  // namespace

Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.size());
    const auto& x = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(x[i]);
    Graph* g = recording_graph({&a});
    if (!g) return make_constant(a.shape(), std::move(out));
    auto sp = std::make_shared<const std::vector<double>>(std::move(out));
    int ida = a.node_id();
    return g->record(a.shape(), sp, {ida},
                     [=](Graph& gr, const std::vector<double>& gout) {
                         double* ga = gr.grad_data(ida);
                         const auto& y = *sp;
                         for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i] * y[i] * (1.0 - y[i]);
                     });
}

Tensor softplus(const Tensor& a) {
    return unary_from_input(
        a,
        [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
        [](double x) { return sigmoid_scalar(x); });
}

Tensor inverse_sigmoid(const Tensor& a) {
    auto clamp01 = [](double x) { return std::clamp(x, 1e-12, 1.0 - 1e-12); };
    return unary_from_input(
        a,
        [clamp01](double x) {
            double c = clamp01(x);
            return std::log(c) - std::log1p(-c);
        },
        [clamp01](double x) {
            double c = clamp01(x);
            return 1.0 / (c * (1.0 - c));
        });
}

Tensor log(const Tensor& a) {
    return unary_from_input(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Tensor exp(const Tensor& a) {
    std::vector<double> out(a.size());
    const auto& x = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x[i]);
    Graph* g = recording_graph({&a});
    if (!g) return make_constant(a.shape(), std::move(out));
    auto sp = std::make_shared<const std::vector<double>>(std::move(out));
    int ida = a.node_id();
    return g->record(a.shape(), sp, {ida},
                     [=](Graph& gr, const std::vector<double>& gout) {
                         double* ga = gr.grad_data(ida);
                         const auto& y = *sp;
                         for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i] * y[i];
                     });
}

Tensor pow(const Tensor& a, double p) {
    return unary_from_input(a, [p](double x) { return std::pow(x, p); },
                            [p](double x) { return p * std::pow(x, p - 1.0); });
}

Tensor abs(const Tensor& a) {
    return unary_from_input(a, [](double x) { return std::fabs(x); },
                            [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

// ---------------------------------------------------------------------------
// row-structured
// ---------------------------------------------------------------------------

Tensor softmax_rows(const Tensor& a) {
    require_2d(a, "softmax_rows");
    const int r = a.rows(), c = a.cols();
    std::vector<double> out(a.size());
    const auto& x = a.values();
    for (int i = 0; i < r; ++i) {
        const double* row = x.data() + static_cast<std::size_t>(i) * c;
        double* orow = out.data() + static_cast<std::size_t>(i) * c;
        double mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (int j = 0; j < c; ++j) { orow[j] = std::exp(row[j] - mx); s += orow[j]; }
        for (int j = 0; j < c; ++j) orow[j] /= s;
    }
    Graph* g = recording_graph({&a});
    if (!g) return make_constant(a.shape(), std::move(out));
    auto sp = std::make_shared<const std::vector<double>>(std::move(out));
    int ida = a.node_id();
    return g->record(a.shape(), sp, {ida},
                     [=](Graph& gr, const std::vector<double>& gout) {
                         double* ga = gr.grad_data(ida);
                         const auto& y = *sp;
                         for (int i = 0; i < r; ++i) {
                             const std::size_t off = static_cast<std::size_t>(i) * c;
                             double dot = 0.0;
                             for (int j = 0; j < c; ++j) dot += gout[off + j] * y[off + j];
                             for (int j = 0; j < c; ++j) ga[off + j] += y[off + j] * (gout[off + j] - dot);
                         }
                     });
}

Tensor layer_norm_rows(const Tensor& a, double eps) {
    require_2d(a, "layer_norm_rows");
    const int r = a.rows(), c = a.cols();
    std::vector<double> out(a.size());
    std::vector<double> inv_std(r);
    const auto& x = a.values();
    for (int i = 0; i < r; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * c;
        double mu = 0.0;
        for (int j = 0; j < c; ++j) mu += x[off + j];
        mu /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) { double d = x[off + j] - mu; var += d * d; }
        var /= c;
        double inv = 1.0 / std::sqrt(var + eps);
        inv_std[i] = inv;
        for (int j = 0; j < c; ++j) out[off + j] = (x[off + j] - mu) * inv;
    }
    Graph* g = recording_graph({&a});
    if (!g) return make_constant(a.shape(), std::move(out));
    auto sp = std::make_shared<const std::vector<double>>(std::move(out));
    auto invp = std::make_shared<const std::vector<double>>(std::move(inv_std));
    int ida = a.node_id();
    return g->record(a.shape(), sp, {ida},
                     [=](Graph& gr, const std::vector<double>& gout) {
                         double* ga = gr.grad_data(ida);
                         const auto& y = *sp;
                         for (int i = 0; i < r; ++i) {
                             const std::size_t off = static_cast<std::size_t>(i) * c;
                             double gmean = 0.0, gymean = 0.0;
                             for (int j = 0; j < c; ++j) {
                                 gmean += gout[off + j];
                                 gymean += gout[off + j] * y[off + j];
                             }
                             gmean /= c;
                             gymean /= c;
                             const double inv = (*invp)[i];
                             for (int j = 0; j < c; ++j)
                                 ga[off + j] += inv * (gout[off + j] - gmean - y[off + j] * gymean);
                         }
                     });
}

// ---------------------------------------------------------------------------
// indexing / assembly
// ---------------------------------------------------------------------------

Tensor gather_rows(const Tensor& a, const std::vector<int>& rows) {
    require_2d(a, "gather_rows");
    const int r = a.rows(), c = a.cols();
    for (int idx : rows)
        if (idx < 0 || idx >= r)
            throw std::invalid_argument("gather_rows: index " + std::to_string(idx) + " out of range [0," +
                                        std::to_string(r) + ")");
    const int n = static_cast<int>(rows.size());
    std::vector<double> out(static_cast<std::size_t>(n) * c);
    const auto& x = a.values();
    for (int i = 0; i < n; ++i)
        std::copy_n(x.data() + static_cast<std::size_t>(rows[i]) * c, c,
                    out.data() + static_cast<std::size_t>(i) * c);
    Graph* g = recording_graph({&a});
    if (!g) return make_constant({n, c}, std::move(out));
    auto idxp = std::make_shared<const std::vector<int>>(rows);
    int ida = a.node_id();
    return finish(g, {n, c}, std::move(out), {ida},
                  [=](Graph& gr, const std::vector<double>& gout) {
                      double* ga = gr.grad_data(ida);
                      for (int i = 0; i < n; ++i) {
                          const std::size_t src = static_cast<std::size_t>(i) * c;
                          const std::size_t dst = static_cast<std::size_t>((*idxp)[i]) * c;
                          for (int j = 0; j < c; ++j) ga[dst + j] += gout[src + j];
                      }
                  });
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
    require_2d(a, "slice_cols");
    const int r = a.rows(), c = a.cols();
    if (c0 < 0 || c1 > c || c0 >= c1)
        throw std::invalid_argument("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                                    ") invalid for " + shape_str(a.shape()));
    const int w = c1 - c0;
    std::vector<double> out(static_cast<std::size_t>(r) * w);
    const auto& x = a.values();
    for (int i = 0; i < r; ++i)
        std::copy_n(x.data() + static_cast<std::size_t>(i) * c + c0, w,
                    out.data() + static_cast<std::size_t>(i) * w);
    Graph* g = recording_graph({&a});
    int ida = a.node_id();
    return finish(g, {r, w}, std::move(out), {ida},
                  [=](Graph& gr, const std::vector<double>& gout) {
                      double* ga = gr.grad_data(ida);
                      for (int i = 0; i < r; ++i)
                          for (int j = 0; j < w; ++j)
                              ga[static_cast<std::size_t>(i) * c + c0 + j] += gout[static_cast<std::size_t>(i) * w + j];
                  });
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
    require_2d(a, "concat");
    require_2d(b, "concat");
    if (axis != 0 && axis != 1) throw std::invalid_argument("concat: axis must be 0 or 1");
    const int ra = a.rows(), ca = a.cols(), rb = b.rows(), cb = b.cols();
    if (axis == 0 && ca != cb)
        throw std::invalid_argument("concat axis 0: column mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    if (axis == 1 && ra != rb)
        throw std::invalid_argument("concat axis 1: row mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    Shape oshape = axis == 0 ? Shape{ra + rb, ca} : Shape{ra, ca + cb};
    std::vector<double> out(numel(oshape));
    const auto& xa = a.values();
    const auto& xb = b.values();
    if (axis == 0) {
        std::copy(xa.begin(), xa.end(), out.begin());
        std::copy(xb.begin(), xb.end(), out.begin() + xa.size());
    } else {
        for (int i = 0; i < ra; ++i) {
            std::copy_n(xa.data() + static_cast<std::size_t>(i) * ca, ca,
                        out.data() + static_cast<std::size_t>(i) * (ca + cb));
            std::copy_n(xb.data() + static_cast<std::size_t>(i) * cb, cb,
                        out.data() + static_cast<std::size_t>(i) * (ca + cb) + ca);
        }
    }
    Graph* g = recording_graph({&a, &b});
    if (!g) return make_constant(std::move(oshape), std::move(out));
    int ida = a.requires_grad() ? a.node_id() : -1;
    int idb = b.requires_grad() ? b.node_id() : -1;
    return finish(g, std::move(oshape), std::move(out), {ida, idb},
                  [=](Graph& gr, const std::vector<double>& gout) {
                      double* ga = gr.grad_data(ida);
                      double* gb = gr.grad_data(idb);
                      if (axis == 0) {
                          const std::size_t na = static_cast<std::size_t>(ra) * ca;
                          if (ga) for (std::size_t i = 0; i < na; ++i) ga[i] += gout[i];
                          if (gb) for (std::size_t i = 0; i < static_cast<std::size_t>(rb) * cb; ++i) gb[i] += gout[na + i];
                      } else {
                          for (int i = 0; i < ra; ++i) {
                              const std::size_t off = static_cast<std::size_t>(i) * (ca + cb);
                              if (ga) for (int j = 0; j < ca; ++j) ga[static_cast<std::size_t>(i) * ca + j] += gout[off + j];
                              if (gb) for (int j = 0; j < cb; ++j) gb[static_cast<std::size_t>(i) * cb + j] += gout[off + ca + j];
                          }
                      }
                  });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size())
        throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    std::vector<double> out(a.values());
    Graph* g = recording_graph({&a});
    int ida = a.node_id();
    return finish(g, std::move(shape), std::move(out), {ida},
                  [=](Graph& gr, const std::vector<double>& gout) {
                      double* ga = gr.grad_data(ida);
                      for (std::size_t i = 0; i < gout.size(); ++i) ga[i] += gout[i];
                  });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    Graph* g = recording_graph({&a});
    int ida = a.node_id();
    std::size_t n = a.size();
    return finish(g, {1}, {s}, {ida},
                  [=](Graph& gr, const std::vector<double>& gout) {
                      double* ga = gr.grad_data(ida);
                      for (std::size_t i = 0; i < n; ++i) ga[i] += gout[0];
                  });
}

Tensor mean(const Tensor& a) {
    if (a.size() == 0) throw std::invalid_argument("mean: empty tensor");
    double s = 0.0;
    for (double v : a.values()) s += v;
    const std::size_t n = a.size();
    Graph* g = recording_graph({&a});
    int ida = a.node_id();
    return finish(g, {1}, {s / static_cast<double>(n)}, {ida},
                  [=](Graph& gr, const std::vector<double>& gout) {
                      double* ga = gr.grad_data(ida);
                      const double w = gout[0] / static_cast<double>(n);
                      for (std::size_t i = 0; i < n; ++i) ga[i] += w;
                  });
}

std::vector<double> rowwise_max_values(const Tensor& a) {
    require_2d(a, "rowwise_max_values");
    const int r = a.rows(), c = a.cols();
    std::vector<double> out(r);
    const auto& x = a.values();
    for (int i = 0; i < r; ++i) {
        double mx = x[static_cast<std::size_t>(i) * c];
        for (int j = 1; j < c; ++j) mx = std::max(mx, x[static_cast<std::size_t>(i) * c + j]);
        out[i] = mx;
    }
    return out;
}

}  // namespace paqdet::ad
