// Differentiable primitives. Exactly the operation set the detector needs:
// matmul, broadcast add, elementwise arithmetic, relu, row softmax, layer
// norm, sigmoid/softplus/inverse-sigmoid, log/exp/pow/abs/min/max, row
// gather, column slice, concat, reshape/transpose, sum/mean reductions.
// All shapes are validated and rejected with the offending shapes named.
#pragma once

#include "paqdet/tensor.hpp"

namespace paqdet::ad {

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);       // (r,k)x(k,c) -> (r,c)
Tensor transpose(const Tensor& a);                     // 2-D only

// ---- elementwise / broadcast ----
// add: same shape, or b's shape a strict suffix of a's (broadcast over
// leading dims, e.g. (K,d)+(d) bias add).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);          // same shape or suffix broadcast
Tensor divide(const Tensor& a, const Tensor& b);       // same shape
Tensor minimum(const Tensor& a, const Tensor& b);      // same shape; ties route grad to a
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

// ---- nonlinearities ----
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);                      // log(1+e^x), stable both tails
Tensor inverse_sigmoid(const Tensor& a);               // logit with inputs clamped to [1e-12, 1-1e-12]
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor pow(const Tensor& a, double p);
Tensor abs(const Tensor& a);

// ---- row-structured ----
Tensor softmax_rows(const Tensor& a);                  // softmax over last dim of a 2-D tensor
Tensor layer_norm_rows(const Tensor& a, double eps = 1e-5);  // normalize last dim, no affine

// ---- indexing / assembly ----
Tensor gather_rows(const Tensor& a, const std::vector<int>& rows);
Tensor slice_cols(const Tensor& a, int c0, int c1);    // [c0, c1)
Tensor concat(const Tensor& a, const Tensor& b, int axis);  // 2-D, axis 0 or 1
Tensor reshape(const Tensor& a, Shape shape);

// ---- reductions ----
Tensor sum(const Tensor& a);                           // scalar
Tensor mean(const Tensor& a);                          // scalar

// Max over the last dim of a 2-D tensor, returned as plain values (no
// gradient path); used for confidence-based selection which is discrete.
std::vector<double> rowwise_max_values(const Tensor& a);

}  // namespace paqdet::ad
