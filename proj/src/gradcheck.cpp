#include "paqdet/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace paqdet::ad {

double finite_difference_check(const ScalarFn& f, const Shape& shape,
                               const std::vector<double>& x, double eps) {
  if (!(eps > 0.0) || eps > 1e-2) {
    throw std::invalid_argument("finite_difference_check: eps must be in (0, 1e-2], got " +
                                std::to_string(eps));
  }
  if (static_cast<std::size_t>(numel(shape)) != x.size()) {
    throw std::invalid_argument("finite_difference_check: x has " + std::to_string(x.size()) +
                                " values, shape wants " + std::to_string(numel(shape)));
  }

  Graph g;
  Tensor in = g.leaf(shape, x);
  Tensor out = f(&g, in);
  if (out.size() != 1) {
    throw std::invalid_argument("finite_difference_check: f must return a scalar");
  }
  g.backward(out);
  std::vector<double> analytic = g.grad(in);

  auto eval = [&](const std::vector<double>& v) {
    Tensor c = make_constant(shape, v);
    Tensor r = f(nullptr, c);
    if (r.size() != 1) {
      throw std::invalid_argument("finite_difference_check: f must return a scalar");
    }
    return r.item();
  };

  double worst = 0.0;
  std::vector<double> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    double up = eval(probe);
    probe[i] = x[i] - eps;
    double down = eval(probe);
    probe[i] = x[i];
    double fd = (up - down) / (2.0 * eps);
    double rel = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace paqdet::ad
