#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "devexplain/dataset.hpp"
#include "devexplain/errors.hpp"
#include "devexplain/rng.hpp"
#include "json.hpp"

namespace devexplain {

namespace detail {

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

inline double log_normal_pdf(double y, double mean, double variance) {
  const double z = y - mean;
  return -0.5 * z * z / variance - 0.5 * std::log(variance) - kLogSqrt2Pi;
}

inline double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace detail

struct GaussianComponent {
  double weight;
  double mean;
  double variance;
};

class GaussianMixture1D {
 public:
  std::vector<GaussianComponent> components;
  std::size_t fitted_n = 0;
  double log_likelihood = 0.0;
  // Log-likelihood after each EM iteration of the selected restart (empty if not fitted).
  std::vector<double> log_likelihood_trace;

  std::size_t size() const noexcept { return components.size(); }

  double log_density(double y) const {
    double buf[64];
    std::vector<double> heap;
    double* terms = buf;
    if (components.size() > 64) {
      heap.resize(components.size());
      terms = heap.data();
    }
    for (std::size_t k = 0; k < components.size(); ++k) {
      const auto& c = components[k];
      terms[k] = std::log(c.weight) + detail::log_normal_pdf(y, c.mean, c.variance);
    }
    return detail::log_sum_exp({terms, components.size()});
  }

  double mean() const {
    double m = 0.0;
    for (const auto& c : components) m += c.weight * c.mean;
    return m;
  }

  double sample(Rng& rng) const {
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t k = 0;
    for (; k + 1 < components.size(); ++k) {
      acc += components[k].weight;
      if (u < acc) break;
    }
    return rng.normal(components[k].mean, std::sqrt(components[k].variance));
  }

  void validate() const {
    require(!components.empty(), "mixture: no components");
    double total = 0.0;
    for (const auto& c : components) {
      require(c.weight > 0.0 && c.variance > 0.0 && std::isfinite(c.mean),
              "mixture: weights and variances must be positive");
      total += c.weight;
    }
    require(std::abs(total - 1.0) <= 1e-9, "mixture: weights do not sum to 1");
  }

  static GaussianMixture1D from_spec(const MixtureSpec& spec) {
    spec.validate();
    GaussianMixture1D g;
    for (const auto& c : spec.components)
      if (c.weight > 0.0) g.components.push_back({c.weight, c.mean, c.std * c.std});
    return g;
  }

  MixtureSpec to_spec() const {
    MixtureSpec s;
    for (const auto& c : components) s.components.push_back({c.weight, c.mean, std::sqrt(c.variance)});
    return s;
  }
};

// sum_k w_k phi((y - mu_k) / sigma_k) / sigma_k
inline double density(const GaussianMixture1D& gmm, double y) {
  double p = 0.0;
  for (const auto& c : gmm.components) {
    const double z = y - c.mean;
    p += c.weight * std::exp(-0.5 * z * z / c.variance) /
         std::sqrt(2.0 * std::numbers::pi * c.variance);
  }
  return p;
}

struct EmOptions {
  int restarts = 5;
  int max_iterations = 500;
  double relative_tolerance = 1e-8;
  double variance_floor_ratio = 1e-6;
};

namespace detail {

// k-means++ seeding followed by Lloyd iterations; clusters become the
// initial components.
inline GaussianMixture1D kmeanspp_init(std::span<const double> x, std::size_t k, Rng& rng,
                                       double var_floor, double global_var) {
  const std::size_t n = x.size();
  std::vector<double> centers{x[rng.below(n)]};
  std::vector<double> d2(n);
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (double c : centers) best = std::min(best, (x[i] - c) * (x[i] - c));
      d2[i] = best;
      total += best;
    }
    if (!(total > 0.0)) {
      centers.push_back(x[rng.below(n)]);
      continue;
    }
    double u = rng.uniform() * total;
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      u -= d2[i];
      if (u < 0.0) {
        pick = i;
        break;
      }
    }
    centers.push_back(x[pick]);
  }

  std::vector<std::size_t> label(n, 0);
  std::vector<double> sum(k), sum_sq(k), count(k);
  for (int it = 0; it < 100; ++it) {
    bool changed = it == 0;
    std::fill(sum.begin(), sum.end(), 0.0);
    std::fill(sum_sq.begin(), sum_sq.end(), 0.0);
    std::fill(count.begin(), count.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < k; ++c)
        if (std::abs(x[i] - centers[c]) < std::abs(x[i] - centers[best])) best = c;
      changed = changed || best != label[i];
      label[i] = best;
      sum[best] += x[i];
      sum_sq[best] += x[i] * x[i];
      count[best] += 1.0;
    }
    if (!changed) break;
    for (std::size_t c = 0; c < k; ++c)
      if (count[c] > 0.0) centers[c] = sum[c] / count[c];
  }

  GaussianMixture1D g;
  for (std::size_t c = 0; c < k; ++c) {
    if (count[c] < 2.0) {
      g.components.push_back({1.0 / static_cast<double>(n), centers[c], global_var});
      continue;
    }
    const double m = sum[c] / count[c];
    const double v = std::max(sum_sq[c] / count[c] - m * m, var_floor);
    g.components.push_back({count[c] / static_cast<double>(n), m, v});
  }
  double total_w = 0.0;
  for (const auto& c : g.components) total_w += c.weight;
  for (auto& c : g.components) c.weight /= total_w;
  return g;
}

// One fused pass per iteration: the E-step at the current parameters yields
// both the log-likelihood and the sufficient statistics for the M-step.
inline GaussianMixture1D run_em(std::span<const double> x, GaussianMixture1D g,
                                const EmOptions& opt, double var_floor) {
  const std::size_t n = x.size();
  const std::size_t k = g.components.size();
  std::vector<double> r(k), offset(k), inv_var(k), mean(k), nk(k), sx(k), sxx(k);
  double prev = -std::numeric_limits<double>::infinity();
  g.log_likelihood_trace.clear();
  for (int it = 0; it < opt.max_iterations; ++it) {
    for (std::size_t c = 0; c < k; ++c) {
      const auto& comp = g.components[c];
      offset[c] = std::log(comp.weight) - 0.5 * std::log(comp.variance) - kLogSqrt2Pi;
      inv_var[c] = 1.0 / comp.variance;
      mean[c] = comp.mean;
    }
    std::fill(nk.begin(), nk.end(), 0.0);
    std::fill(sx.begin(), sx.end(), 0.0);
    std::fill(sxx.begin(), sxx.end(), 0.0);
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double xi = x[i];
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double z = xi - mean[c];
        r[c] = offset[c] - 0.5 * z * z * inv_var[c];
        mx = std::max(mx, r[c]);
      }
      double total = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        // exp(-40) is below the rounding error of total >= 1.
        const double e = r[c] - mx;
        r[c] = e < -40.0 ? 0.0 : std::exp(e);
        total += r[c];
      }
      ll += mx + std::log(total);
      const double inv_total = 1.0 / total;
      for (std::size_t c = 0; c < k; ++c) {
        // Shifted by the current mean to limit cancellation in the variance.
        const double w = r[c] * inv_total;
        const double z = xi - mean[c];
        nk[c] += w;
        sx[c] += w * z;
        sxx[c] += w * z * z;
      }
    }
    g.log_likelihood = ll;
    g.log_likelihood_trace.push_back(ll);
    if (it > 0 && std::abs(ll - prev) < opt.relative_tolerance * std::abs(prev)) break;
    prev = ll;

    for (std::size_t c = 0; c < k; ++c) {
      if (nk[c] <= 0.0) continue;
      auto& comp = g.components[c];
      const double shift = sx[c] / nk[c];
      comp.weight = std::max(nk[c] / static_cast<double>(n), 1e-300);
      comp.mean = mean[c] + shift;
      comp.variance = std::max(sxx[c] / nk[c] - shift * shift, var_floor);
    }
    double total_w = 0.0;
    for (const auto& c : g.components) total_w += c.weight;
    for (auto& c : g.components) c.weight /= total_w;
  }
  return g;
}

}  // namespace detail

// EM with k-means++ seeding; best of `restarts` seeded runs by log-likelihood.
// Components are returned sorted by mean.
inline GaussianMixture1D fit_gmm(std::span<const double> samples, std::size_t k, std::uint64_t seed,
                                 const EmOptions& opt = {}) {
  require(k >= 1, "fit_gmm: k must be at least 1");
  require(samples.size() >= 2 * k, "fit_gmm: need at least 2k samples (k=" + std::to_string(k) +
                                       ", n=" + std::to_string(samples.size()) + ")");
  for (double v : samples) require(std::isfinite(v), "fit_gmm: non-finite sample");
  const double sd = pop_std_of(samples);
  if (!(sd > 0.0)) throw NumericalError("fit_gmm: all samples identical, mixture is degenerate");
  const double global_var = sd * sd;
  const double var_floor = opt.variance_floor_ratio * global_var;

  GaussianMixture1D best;
  bool have = false;
  for (int r = 0; r < std::max(opt.restarts, 1); ++r) {
    Rng rng(seed, static_cast<std::uint64_t>(r));
    auto init = detail::kmeanspp_init(samples, k, rng, var_floor, global_var);
    auto fitted = detail::run_em(samples, std::move(init), opt, var_floor);
    if (!have || fitted.log_likelihood > best.log_likelihood) {
      best = std::move(fitted);
      have = true;
    }
  }
  std::sort(best.components.begin(), best.components.end(),
            [](const auto& a, const auto& b) { return a.mean < b.mean; });
  best.fitted_n = samples.size();
  return best;
}

inline double bic(const GaussianMixture1D& g) {
  const auto k = static_cast<double>(g.size());
  return -2.0 * g.log_likelihood + (3.0 * k - 1.0) * std::log(static_cast<double>(g.fitted_n));
}

struct KSelection {
  std::size_t k = 1;
  GaussianMixture1D mixture;
  std::vector<double> bics;  // bics[j] is the BIC for k = j + 1
};

// Fits k = 1..k_max (capped so that n >= 2k) and keeps the BIC minimizer;
// ties go to the smaller k.
inline KSelection fit_gmm_bic(std::span<const double> samples, std::size_t k_max, std::uint64_t seed,
                              const EmOptions& opt = {}) {
  require(k_max >= 1, "select_k: k_max must be at least 1");
  KSelection out;
  const std::size_t cap = std::min(k_max, samples.size() / 2);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k <= std::max<std::size_t>(cap, 1); ++k) {
    auto g = fit_gmm(samples, k, seed, opt);
    const double b = bic(g);
    out.bics.push_back(b);
    if (b < best) {
      best = b;
      out.k = k;
      out.mixture = std::move(g);
    }
  }
  return out;
}

inline std::size_t select_k(std::span<const double> samples, std::size_t k_max, std::uint64_t seed,
                            const EmOptions& opt = {}) {
  return fit_gmm_bic(samples, k_max, seed, opt).k;
}

struct ModeInfo {
  double location = 0.0;
  double density = 0.0;
  std::size_t component_index = 0;
  double sigma_m = 1.0;
  double weight = 1.0;
};

// Index of the component with the largest responsibility w_k phi_k(y).
inline std::size_t dominant_component(const GaussianMixture1D& gmm, double y) {
  std::size_t best = 0;
  double best_lp = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < gmm.size(); ++k) {
    const auto& c = gmm.components[k];
    const double lp = std::log(c.weight) + detail::log_normal_pdf(y, c.mean, c.variance);
    if (lp > best_lp) {
      best_lp = lp;
      best = k;
    }
  }
  return best;
}

// Local maxima of the density, highest first. Each component mean seeds the
// fixed point y <- sum_k a_k mu_k / sum_k a_k with a_k = w_k phi_k(y) / sigma_k^2.
inline std::vector<ModeInfo> modes(const GaussianMixture1D& gmm) {
  gmm.validate();
  const std::size_t k = gmm.size();
  double min_sigma = std::numeric_limits<double>::infinity();
  for (const auto& c : gmm.components) min_sigma = std::min(min_sigma, std::sqrt(c.variance));

  std::vector<double> found;
  std::vector<double> loga(k);
  for (const auto& start : gmm.components) {
    double y = start.mean;
    for (int it = 0; it < 200000; ++it) {
      for (std::size_t c = 0; c < k; ++c) {
        const auto& comp = gmm.components[c];
        loga[c] = std::log(comp.weight) + detail::log_normal_pdf(y, comp.mean, comp.variance) -
                  std::log(comp.variance);
      }
      const double mx = *std::max_element(loga.begin(), loga.end());
      double num = 0.0, den = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        const double a = std::exp(loga[c] - mx);
        num += a * gmm.components[c].mean;
        den += a;
      }
      const double next = num / den;
      const bool done = std::abs(next - y) < 1e-10;
      y = next;
      if (done) break;
    }
    found.push_back(y);
  }

  std::sort(found.begin(), found.end());
  std::vector<double> unique;
  for (double y : found)
    if (unique.empty() || std::abs(y - unique.back()) > 1e-3 * min_sigma) unique.push_back(y);

  std::vector<ModeInfo> out;
  for (double y : unique) {
    ModeInfo m;
    m.location = y;
    m.density = density(gmm, y);
    m.component_index = dominant_component(gmm, y);
    m.sigma_m = std::sqrt(gmm.components[m.component_index].variance);
    m.weight = gmm.components[m.component_index].weight;
    const double h = 1e-4 * m.sigma_m;
    if (m.density >= density(gmm, y - h) && m.density >= density(gmm, y + h)) out.push_back(m);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const ModeInfo& a, const ModeInfo& b) { return a.density > b.density; });
  return out;
}

// (y - mean) / std with the population (1/N) standard deviation.
inline double z_score(double y, std::span<const double> samples) {
  const double sd = pop_std_of(samples);
  if (!(sd > 0.0)) throw NumericalError("z_score: sample standard deviation is zero");
  return (y - mean_of(samples)) / sd;
}

inline double mode_z_score(double y, const ModeInfo& mode) {
  require(mode.sigma_m > 0.0, "mode_z_score: sigma_m must be positive");
  return (y - mode.location) / mode.sigma_m;
}

// Product prior p(x) = prod_I p_I(x_I) over independent 1-D mixtures.
struct FeaturePriors {
  std::vector<GaussianMixture1D> per_feature;

  std::size_t dim() const noexcept { return per_feature.size(); }

  std::vector<double> sample(Rng& rng) const {
    std::vector<double> x(dim());
    for (std::size_t i = 0; i < dim(); ++i) x[i] = per_feature[i].sample(rng);
    return x;
  }

  // Number of joint prior components, prod_I k_I.
  std::size_t joint_components() const {
    std::size_t k = 1;
    for (const auto& g : per_feature) k *= g.size();
    return k;
  }
};

inline double log_prior(const FeaturePriors& priors, std::span<const double> x) {
  require(x.size() == priors.dim(), "log_prior: expected " + std::to_string(priors.dim()) +
                                        " features, got " + std::to_string(x.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += priors.per_feature[i].log_density(x[i]);
  return s;
}

inline FeaturePriors priors_from_specs(std::span<const MixtureSpec> specs) {
  FeaturePriors p;
  for (const auto& s : specs) p.per_feature.push_back(GaussianMixture1D::from_spec(s));
  return p;
}

// Per-column select_k + fit_gmm; column c uses seed derive_seed(seed, c).
inline FeaturePriors fit_priors(const Dataset& data, std::size_t k_max, std::uint64_t seed,
                                const EmOptions& opt = {}) {
  FeaturePriors p;
  for (std::size_t c = 0; c < data.dim(); ++c) {
    const auto col = data.features.column(c);
    p.per_feature.push_back(fit_gmm_bic(col, k_max, derive_seed(seed, c), opt).mixture);
  }
  return p;
}

// One Gaussian per feature with the column's sample mean and population variance.
inline FeaturePriors moment_matched_priors(const Dataset& data) {
  FeaturePriors p;
  for (std::size_t c = 0; c < data.dim(); ++c) {
    const auto col = data.features.column(c);
    const double sd = pop_std_of(col);
    if (!(sd > 0.0))
      throw NumericalError("moment-matched prior: feature '" + data.feature_names[c] +
                           "' is constant");
    GaussianMixture1D g;
    g.components.push_back({1.0, mean_of(col), sd * sd});
    g.fitted_n = col.size();
    p.per_feature.push_back(std::move(g));
  }
  return p;
}

inline void to_json(nlohmann::json& j, const GaussianMixture1D& g) { j = g.to_spec(); }

inline void from_json(const nlohmann::json& j, GaussianMixture1D& g) {
  g = GaussianMixture1D::from_spec(j.get<MixtureSpec>());
}

inline void to_json(nlohmann::json& j, const ModeInfo& m) {
  j = nlohmann::json{{"location", m.location},
                     {"density", m.density},
                     {"component_index", m.component_index},
                     {"sigma_m", m.sigma_m},
                     {"weight", m.weight}};
}

}  // namespace devexplain
