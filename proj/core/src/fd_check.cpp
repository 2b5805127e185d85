#include <algorithm>
#include <cmath>

#include "metaseg/tensor.hpp"

namespace metaseg {

FdReport fd_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h, double tol,
                  int64_t max_coords, uint64_t coord_seed) {
  // Analytic gradient first, via a fresh taped forward/backward.
  tape_clear();
  x.zero_grad();
  bool prev_rg = x.requires_grad();
  x.set_requires_grad(true);
  Tensor y = f(x);
  if (y.numel() != 1)
    throw ValueError("fd_check: f must be scalar-valued, got shape " + shape_str(y.shape()));
  backward(y);
  std::vector<double> analytic = x.grad_vector();
  x.set_requires_grad(prev_rg);

  int64_t n = x.numel();
  std::vector<int64_t> coords;
  if (max_coords > 0 && max_coords < n) {
    Rng rng(coord_seed == 0 ? 0x9e3779b97f4a7c15ull : coord_seed);
    coords.reserve(static_cast<size_t>(max_coords));
    for (int64_t i = 0; i < max_coords; ++i)
      coords.push_back(static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(n))));
    std::sort(coords.begin(), coords.end());
    coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
  } else {
    coords.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
  }

  FdReport rep;
  NoGradGuard ng;
  for (int64_t i : coords) {
    double orig = x.at(i);
    x.set(i, orig + h);
    double fp = f(x).at(0);
    x.set(i, orig - h);
    double fm = f(x).at(0);
    x.set(i, orig);
    double numeric = (fp - fm) / (2.0 * h);
    double a = analytic[static_cast<size_t>(i)];
    double abs_err = std::fabs(a - numeric);
    // Components below ~1e-6 sit at the difference-quotient noise floor, so
    // they are measured against that floor instead of their own magnitude.
    double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-6});
    double rel = abs_err / denom;
    if (abs_err > rep.max_abs_err) rep.max_abs_err = abs_err;
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_coord = i;
    }
    rep.coords_checked++;
  }
  rep.pass = rep.max_rel_err <= tol;
  return rep;
}

}  // namespace metaseg
