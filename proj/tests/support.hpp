#pragma once

// Oracles and small fixtures shared by the unit and acceptance tests. They are
// written independently of the library internals on purpose.

#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "devexplain/devexplain.hpp"

namespace testsupport {

using devexplain::Dataset;
using devexplain::Matrix;

inline Dataset make_dataset(const std::vector<std::string>& names,
                            const std::vector<std::vector<double>>& rows,
                            const std::vector<double>& labels) {
  Dataset d;
  d.feature_names = names;
  d.features = Matrix(0, names.size());
  for (std::size_t r = 0; r < rows.size(); ++r) d.append(rows[r], labels[r]);
  return d;
}

// Composite Simpson rule on n (even) intervals.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n = 20000) {
  if (n % 2) ++n;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
  return s * h / 3.0;
}

// Plain pdf of a weighted sum of normals.
inline double mixture_pdf(const devexplain::GaussianMixture1D& g, double y) {
  double p = 0.0;
  for (const auto& c : g.components)
    p += c.weight * std::exp(-(y - c.mean) * (y - c.mean) / (2.0 * c.variance)) /
         std::sqrt(2.0 * std::numbers::pi * c.variance);
  return p;
}

// Local maxima of the density on a uniform grid.
inline std::vector<double> grid_scan_modes(const devexplain::GaussianMixture1D& g, double lo,
                                           double hi, double step) {
  std::vector<double> out;
  const auto n = static_cast<long>((hi - lo) / step);
  double prev = mixture_pdf(g, lo), cur = mixture_pdf(g, lo + step);
  for (long i = 2; i <= n; ++i) {
    const double next = mixture_pdf(g, lo + i * step);
    if (cur > prev && cur >= next) out.push_back(lo + (i - 1) * step);
    prev = cur;
    cur = next;
  }
  return out;
}

// Log-likelihood of samples under a mixture, summed directly.
inline double log_likelihood(const devexplain::GaussianMixture1D& g, std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += std::log(mixture_pdf(g, v));
  return s;
}

struct ConstantModel {
  double c = 0.0;
  double predict(std::span<const double>) const { return c; }
};

// f(x) = x_i * x_j
struct ProductModel {
  std::size_t i = 0, j = 1;
  double predict(std::span<const double> x) const { return x[i] * x[j]; }
};

// f(x) = sum of sin(x_k) over used features, ignoring the rest.
struct SineModel {
  std::vector<bool> used;
  double predict(std::span<const double> x) const {
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k)
      if (used[k]) s += std::sin(x[k]) + 0.3 * x[k] * x[(k + 1) % x.size()];
    return s;
  }
};

// Brute-force Shapley by permutations, v(S) as the background mean.
template <typename M>
std::vector<double> shapley_by_permutations(const M& model, const devexplain::BackgroundSample& bg,
                                            std::span<const double> x) {
  const std::size_t d = x.size();
  auto value = [&](const std::vector<bool>& in) {
    double s = 0.0;
    std::vector<double> buf(d);
    for (std::size_t r = 0; r < bg.size(); ++r) {
      for (std::size_t k = 0; k < d; ++k) buf[k] = in[k] ? x[k] : bg.points(r, k);
      s += model.predict(buf);
    }
    return s / static_cast<double>(bg.size());
  };
  std::vector<std::size_t> perm(d);
  for (std::size_t k = 0; k < d; ++k) perm[k] = k;
  std::vector<double> phi(d, 0.0);
  double count = 0.0;
  do {
    std::vector<bool> in(d, false);
    double before = value(in);
    for (std::size_t k : perm) {
      in[k] = true;
      const double after = value(in);
      phi[k] += after - before;
      before = after;
    }
    count += 1.0;
  } while (std::next_permutation(perm.begin(), perm.end()));
  for (double& v : phi) v /= count;
  return phi;
}

// The three trimodal features, y = x0 + x1 + x2.
inline devexplain::FeaturePriors trimodal_priors() {
  return devexplain::priors_from_specs(devexplain::SyntheticSpec::trimodal_example().feature_specs);
}

}  // namespace testsupport
