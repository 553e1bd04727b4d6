#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "devexplain/dataset.hpp"
#include "devexplain/errors.hpp"
#include "devexplain/matrix.hpp"
#include "devexplain/mixtures.hpp"
#include "devexplain/rng.hpp"
#include "json.hpp"

namespace devexplain {

// Anything that maps a feature vector to a real prediction.
template <typename M>
concept Predictor = requires(const M& m, std::span<const double> x) {
  { m.predict(x) } -> std::convertible_to<double>;
};

enum class BackgroundSource { prior_sampled, dataset_resampled };

inline const char* to_string(BackgroundSource s) {
  return s == BackgroundSource::prior_sampled ? "prior" : "dataset";
}

// Rows over which the conditional expectations are averaged.
struct BackgroundSample {
  Matrix points;
  BackgroundSource source = BackgroundSource::prior_sampled;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return points.rows(); }
  std::size_t dim() const noexcept { return points.cols(); }
};

// Column c is drawn from stream c of `seed`.
inline BackgroundSample draw_background(const FeaturePriors& priors, std::size_t np,
                                        std::uint64_t seed) {
  require(np >= 1, "draw_background: np must be at least 1");
  BackgroundSample bg{Matrix(np, priors.dim()), BackgroundSource::prior_sampled, seed};
  for (std::size_t c = 0; c < priors.dim(); ++c) {
    Rng rng(seed, c);
    for (std::size_t r = 0; r < np; ++r) bg.points(r, c) = priors.per_feature[c].sample(rng);
  }
  return bg;
}

// Rows drawn uniformly with replacement, which keeps the dependence between features.
inline BackgroundSample draw_background(const Dataset& data, std::size_t np, std::uint64_t seed) {
  require(np >= 1, "draw_background: np must be at least 1");
  require(data.size() > 0, "draw_background: cannot resample an empty dataset");
  BackgroundSample bg{Matrix(0, data.dim()), BackgroundSource::dataset_resampled, seed};
  Rng rng(seed, 0);
  for (std::size_t r = 0; r < np; ++r) bg.points.append_row(data.row(rng.below(data.size())));
  return bg;
}

struct McEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
};

namespace detail {

// Recursive pairwise summation; fixed split points keep it deterministic.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 16) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

inline McEstimate summarize(std::span<const double> v) {
  const auto n = static_cast<double>(v.size());
  const double mean = pairwise_sum(v) / n;
  if (v.size() < 2) return {mean, 0.0};
  std::vector<double> sq(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - mean) * (v[i] - mean);
  return {mean, std::sqrt(pairwise_sum(sq) / (n - 1.0) / n)};
}

// Doubles mapped to unsigned keys that sort the same way.
inline std::uint64_t order_key(double x) {
  const auto u = std::bit_cast<std::uint64_t>(x);
  return (u >> 63) ? ~u : u | (std::uint64_t{1} << 63);
}

inline double from_order_key(std::uint64_t k) {
  return std::bit_cast<double>((k >> 63) ? k & ~(std::uint64_t{1} << 63) : ~k);
}

// Residual r making explained + r land on total in floating point. The rounded
// sum is monotone in r, so bracket around total - explained and bisect over the
// doubles. Always exact when |r| <= |total| / 2. With heavier cancellation the
// sum of two large doubles can lack the bits of total; the closest r is returned.
inline double closing_residual(double explained, double total) {
  const double r0 = total - explained;
  if (!std::isfinite(r0) || explained + r0 == total) return r0;
  const bool low = explained + r0 < total;
  double step = std::max(std::abs(r0), std::abs(total)) * 1e-15 + 1e-300;
  double far = r0;
  for (int k = 0; k < 64; ++k) {
    far = low ? r0 + step : r0 - step;
    if (low ? explained + far >= total : explained + far <= total) break;
    step *= 2.0;
  }
  std::uint64_t lo = order_key(low ? r0 : far), hi = order_key(low ? far : r0);
  while (hi - lo > 1) {
    const std::uint64_t mid = lo + (hi - lo) / 2;
    const double sum = explained + from_order_key(mid);
    if (sum == total) return from_order_key(mid);
    (sum < total ? lo : hi) = mid;
  }
  const double a = from_order_key(lo), b = from_order_key(hi);
  if (explained + b == total) return b;
  if (explained + a == total) return a;
  return std::abs(explained + a - total) <= std::abs(explained + b - total) ? a : b;
}

// Calls fn(row, buffer) for each background row with a writable copy of the row.
template <typename Fn>
std::vector<double> per_row(const BackgroundSample& bg, Fn&& fn) {
  std::vector<double> out(bg.size());
  std::vector<double> buf(bg.dim());
  for (std::size_t s = 0; s < bg.size(); ++s) {
    const auto row = bg.points.row(s);
    out[s] = fn(row, buf);
  }
  return out;
}

inline void check_feature(const BackgroundSample& bg, std::size_t i) {
  require(i < bg.dim(), "feature index " + std::to_string(i) + " out of range (d_x = " +
                            std::to_string(bg.dim()) + ")");
}

}  // namespace detail

// f_0 with its Monte Carlo standard error.
template <Predictor M>
McEstimate f_zero_estimate(const M& model, const BackgroundSample& bg) {
  require(bg.size() >= 1, "f_zero: empty background");
  const auto preds = detail::per_row(bg, [&](auto row, auto&) { return model.predict(row); });
  return detail::summarize(preds);
}

template <Predictor M>
double f_zero(const M& model, const BackgroundSample& bg) {
  return f_zero_estimate(model, bg).estimate;
}

// f_I(v) = E[f | x_I = v] - f_0, both expectations over the same rows, so the
// estimate is the mean of the paired differences f(row | x_I = v) - f(row)
// and the standard error is theirs.
template <Predictor M>
McEstimate first_order_effect(const M& model, const BackgroundSample& bg, std::size_t feature,
                              double value) {
  detail::check_feature(bg, feature);
  require(std::isfinite(value), "first_order_effect: value must be finite");
  const auto diffs = detail::per_row(bg, [&](std::span<const double> row, std::vector<double>& buf) {
    std::copy(row.begin(), row.end(), buf.begin());
    buf[feature] = value;
    return model.predict(buf) - model.predict(row);
  });
  return detail::summarize(diffs);
}

namespace detail {

// f(I=a, J=b) - f(I=a) - f(J=b) + f(row) on one background row.
template <Predictor M>
double interaction_term(const M& model, std::span<const double> row, std::vector<double>& buf,
                        std::size_t i, std::size_t j, double a, double b) {
  std::copy(row.begin(), row.end(), buf.begin());
  buf[i] = a;
  buf[j] = b;
  const double fab = model.predict(buf);
  buf[j] = row[j];
  const double fa = model.predict(buf);
  buf[i] = row[i];
  buf[j] = b;
  const double fb = model.predict(buf);
  return fab - fa - fb + model.predict(row);
}

}  // namespace detail

// f_IJ(a, b) = E[f | x_I = a, x_J = b] - f_I(a) - f_J(b) - f_0 on common rows.
template <Predictor M>
McEstimate second_order_effect(const M& model, const BackgroundSample& bg, std::size_t i,
                               std::size_t j, double a, double b) {
  detail::check_feature(bg, j);
  require(i < j, "second_order_effect: requires I < J");
  const auto terms = detail::per_row(bg, [&](std::span<const double> row, std::vector<double>& buf) {
    return detail::interaction_term(model, row, buf, i, j, a, b);
  });
  return detail::summarize(terms);
}

struct DeviationDecomposition {
  std::vector<double> observation;
  std::vector<double> reference;
  double y_obs = 0.0;
  double y_ref = 0.0;
  double total_delta = 0.0;
  std::vector<double> first_order;
  std::vector<double> stderr_first_order;
  // Row-major d x d, only entries with I < J are used.
  std::optional<Matrix> second_order;
  std::optional<Matrix> stderr_second_order;
  double residual = 0.0;
  double f0 = 0.0;
  std::size_t np_used = 0;
  std::uint64_t background_seed = 0;
  BackgroundSource background_source = BackgroundSource::prior_sampled;

  // Sum of the explained terms in a fixed order: first order by I, then
  // second order row-major over I < J.
  double explained() const {
    double s = 0.0;
    for (double v : first_order) s += v;
    if (second_order) {
      const std::size_t d = first_order.size();
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i + 1; j < d; ++j) s += (*second_order)(i, j);
    }
    return s;
  }

  // explained() + residual; equals total_delta bit-for-bit unless the residual
  // dwarfs the deviation (see detail::closing_residual).
  double closure_sum() const { return explained() + residual; }
};

// delta = y_obs - y_ref split into ANOVA term differences between x_obs and x_ref.
// Third and higher orders plus observation noise end up in the residual.
template <Predictor M>
DeviationDecomposition decompose_deviation(const M& model, const BackgroundSample& bg,
                                           std::span<const double> x_obs,
                                           std::span<const double> x_ref, double y_obs, double y_ref,
                                           int order = 1) {
  const std::size_t d = bg.dim();
  require(x_obs.size() == d && x_ref.size() == d, "decompose_deviation: dimension mismatch");
  require(order == 1 || order == 2, "decompose_deviation: order must be 1 or 2");
  require(bg.size() >= 1, "decompose_deviation: empty background");

  DeviationDecomposition out;
  out.observation.assign(x_obs.begin(), x_obs.end());
  out.reference.assign(x_ref.begin(), x_ref.end());
  out.y_obs = y_obs;
  out.y_ref = y_ref;
  out.total_delta = y_obs - y_ref;
  out.np_used = bg.size();
  out.background_seed = bg.seed;
  out.background_source = bg.source;
  out.f0 = f_zero(model, bg);

  for (std::size_t i = 0; i < d; ++i) {
    const auto diffs = detail::per_row(bg, [&](std::span<const double> row, std::vector<double>& buf) {
      std::copy(row.begin(), row.end(), buf.begin());
      buf[i] = x_obs[i];
      const double hi = model.predict(buf);
      buf[i] = x_ref[i];
      return hi - model.predict(buf);
    });
    const auto est = detail::summarize(diffs);
    out.first_order.push_back(est.estimate);
    out.stderr_first_order.push_back(est.std_error);
  }

  if (order == 2) {
    Matrix so(d, d), se(d, d);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j) {
        const auto diffs =
            detail::per_row(bg, [&](std::span<const double> row, std::vector<double>& buf) {
              return detail::interaction_term(model, row, buf, i, j, x_obs[i], x_obs[j]) -
                     detail::interaction_term(model, row, buf, i, j, x_ref[i], x_ref[j]);
            });
        const auto est = detail::summarize(diffs);
        so(i, j) = est.estimate;
        se(i, j) = est.std_error;
      }
    out.second_order = std::move(so);
    out.stderr_second_order = std::move(se);
  }

  out.residual = detail::closing_residual(out.explained(), out.total_delta);
  return out;
}

inline void to_json(nlohmann::json& j, const DeviationDecomposition& d) {
  j = nlohmann::json{{"observation", d.observation},
                     {"reference", d.reference},
                     {"y_obs", d.y_obs},
                     {"y_ref", d.y_ref},
                     {"total_delta", d.total_delta},
                     {"first_order", d.first_order},
                     {"stderr_first_order", d.stderr_first_order},
                     {"residual", d.residual},
                     {"f0", d.f0},
                     {"np", d.np_used},
                     {"background_seed", d.background_seed},
                     {"background_source", to_string(d.background_source)}};
  if (d.second_order) {
    auto rows = nlohmann::json::array();
    auto se_rows = nlohmann::json::array();
    const std::size_t n = d.first_order.size();
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b) {
        rows.push_back({{"i", a}, {"j", b}, {"delta", (*d.second_order)(a, b)}});
        se_rows.push_back((*d.stderr_second_order)(a, b));
      }
    j["second_order"] = rows;
    j["stderr_second_order"] = se_rows;
  } else {
    j["second_order"] = nullptr;
  }
}

}  // namespace devexplain
