#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "devexplain/errors.hpp"
#include "devexplain/mixtures.hpp"
#include "devexplain/models.hpp"
#include "devexplain/optimize.hpp"
#include "devexplain/rng.hpp"
#include "json.hpp"

namespace devexplain {

// log p(y_target | x) + log p(x), dropping the likelihood normalization.
struct PosteriorObjective {
  const PredictiveModel* model = nullptr;
  const FeaturePriors* priors = nullptr;
  double y_target = 0.0;
  double sigma_e_squared = 1.0;

  PosteriorObjective(const PredictiveModel& m, const FeaturePriors& p, double target, double sigma2)
      : model(&m), priors(&p), y_target(target), sigma_e_squared(sigma2) {
    require(sigma2 > 0.0 && std::isfinite(sigma2), "posterior: sigma_e_squared must be positive");
    require(m.dim() == p.dim(), "posterior: model and priors disagree on the number of features");
    require(std::isfinite(target), "posterior: target label must be finite");
  }

  std::size_t dim() const { return model->dim(); }
};

inline double log_posterior(const PosteriorObjective& obj, std::span<const double> x) {
  const double misfit = obj.y_target - obj.model->predict(x);
  return -misfit * misfit / (2.0 * obj.sigma_e_squared) + log_prior(*obj.priors, x);
}

// Smallest run count with (log beta - log K) / log(1 - p) <= runs, at least 1.
inline std::size_t required_runs(std::size_t assumed_k, double min_basin_prob, double failure_prob) {
  require(assumed_k >= 1, "required_runs: K must be at least 1");
  require(min_basin_prob > 0.0 && min_basin_prob < 1.0, "required_runs: p must be in (0,1)");
  require(failure_prob > 0.0 && failure_prob < 1.0, "required_runs: beta must be in (0,1)");
  const double bound = (std::log(failure_prob) - std::log(static_cast<double>(assumed_k))) /
                       std::log1p(-min_basin_prob);
  return bound <= 1.0 ? 1 : static_cast<std::size_t>(std::ceil(bound));
}

struct SearchBudget {
  std::size_t n_runs = 1;
  std::size_t assumed_k = 1;
  double min_basin_prob = 0.5;
  double failure_prob = 0.01;

  void validate() const {
    require(n_runs >= 1, "budget: n_runs must be at least 1");
    require(assumed_k >= 1, "budget: assumed K must be at least 1");
    require(min_basin_prob > 0.0 && min_basin_prob < 1.0, "budget: p must be in (0,1)");
    require(failure_prob > 0.0 && failure_prob < 1.0, "budget: beta must be in (0,1)");
  }

  static SearchBudget from_bound(std::size_t k, double p, double beta) {
    return {required_runs(k, p, beta), k, p, beta};
  }

  // K = number of joint prior components, p = 1/(2K), beta = 0.01.
  static SearchBudget default_for(const FeaturePriors& priors) {
    const std::size_t k = priors.joint_components();
    return from_bound(k, 1.0 / (2.0 * static_cast<double>(k)), 0.01);
  }
};

struct LocalSettings {
  double grad_tol = 1e-6;
  double step_tol = 1e-8;
  int max_iters = 500;
  std::optional<bool> smooth;  // default: model.is_smooth()
};

struct LocalResult {
  std::vector<double> point;
  double value = 0.0;
  bool converged = false;
};

// Smooth models: BFGS ascent with central-difference gradients. Tree models:
// Nelder-Mead on the negated objective. The returned value is never below the
// value at x0.
inline LocalResult local_maximize(const PosteriorObjective& obj, std::vector<double> x0,
                                  const LocalSettings& settings = {}) {
  require(x0.size() == obj.dim(), "local_maximize: start point has wrong dimension");
  for (double v : x0) require(std::isfinite(v), "local_maximize: start point must be finite");
  auto neg = [&](std::span<const double> x) { return -log_posterior(obj, x); };
  const bool smooth = settings.smooth.value_or(obj.model->is_smooth());
  OptimResult r;
  if (smooth) {
    r = minimize_bfgs(neg, std::move(x0),
                      BfgsOptions{settings.grad_tol, 1e-14, settings.max_iters});
  } else {
    SimplexOptions so;
    so.step_tol = settings.step_tol;
    so.max_iters = settings.max_iters * 10;
    r = minimize_simplex(neg, std::move(x0), so);
  }
  return {std::move(r.x), -r.value, r.converged};
}

struct LocalOptimum {
  std::vector<double> point;
  double log_posterior = 0.0;
  std::size_t hit_count = 0;
};

struct MapResult {
  std::vector<double> map_point;
  double map_log_posterior = 0.0;
  std::vector<LocalOptimum> local_optima;
  std::size_t n_runs_executed = 0;
  std::size_t n_converged = 0;
  SearchBudget budget;
  double y_target = 0.0;
};

inline double dedup_radius(std::span<const double> point) {
  return 1e-3 * (1.0 + detail::inf_norm(point));
}

// Multistart MAP search. Run r starts from a draw of Rng(seed, r) from the
// prior, so a longer run shares its first starts with a shorter one.
// Converged endpoints within the dedup radius (inf-norm) merge into one
// optimum; the best log-posterior among the optima is the MAP.
inline MapResult direct_search_map(const PosteriorObjective& obj, const FeaturePriors& priors,
                                   const SearchBudget& budget, std::uint64_t seed,
                                   const LocalSettings& settings = {}) {
  budget.validate();
  require(priors.dim() == obj.dim(), "direct_search_map: start priors have wrong dimension");
  MapResult out;
  out.budget = budget;
  out.y_target = obj.y_target;
  double best_unconverged = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < budget.n_runs; ++r) {
    Rng rng(seed, r);
    auto start = priors.sample(rng);
    LocalResult lr;
    try {
      lr = local_maximize(obj, std::move(start), settings);
    } catch (const NumericalError&) {
      continue;
    }
    ++out.n_runs_executed;
    if (!lr.converged) {
      best_unconverged = std::max(best_unconverged, lr.value);
      continue;
    }
    ++out.n_converged;
    const double radius = dedup_radius(lr.point);
    LocalOptimum* match = nullptr;
    for (auto& opt : out.local_optima) {
      double dist = 0.0;
      for (std::size_t i = 0; i < lr.point.size(); ++i)
        dist = std::max(dist, std::abs(opt.point[i] - lr.point[i]));
      if (dist <= radius) {
        match = &opt;
        break;
      }
    }
    if (match == nullptr) {
      out.local_optima.push_back({std::move(lr.point), lr.value, 1});
    } else {
      ++match->hit_count;
      if (lr.value > match->log_posterior) {
        match->point = std::move(lr.point);
        match->log_posterior = lr.value;
      }
    }
  }
  if (out.local_optima.empty())
    throw NumericalError("MAP search failed: 0 of " + std::to_string(budget.n_runs) +
                         " runs converged (target " + std::to_string(obj.y_target) +
                         ", best unconverged log-posterior " + std::to_string(best_unconverged) +
                         ")");
  std::size_t best = 0;
  for (std::size_t k = 1; k < out.local_optima.size(); ++k)
    if (out.local_optima[k].log_posterior > out.local_optima[best].log_posterior) best = k;
  out.map_point = out.local_optima[best].point;
  out.map_log_posterior = out.local_optima[best].log_posterior;
  return out;
}

enum class ReferenceKind { mean, mode };

inline const char* to_string(ReferenceKind k) { return k == ReferenceKind::mean ? "mean" : "mode"; }

struct Reference {
  ReferenceKind kind = ReferenceKind::mode;
  double y_ref = 0.0;
  std::optional<std::size_t> mode_index;
  std::optional<ModeInfo> mode;

  static Reference mean(std::span<const double> labels) {
    require(!labels.empty(), "reference: no labels for the mean");
    return {ReferenceKind::mean, mean_of(labels), std::nullopt, std::nullopt};
  }
  static Reference at_mode(const ModeInfo& m, std::size_t index) {
    return {ReferenceKind::mode, m.location, index, m};
  }
};

// MAP feature vector for a reference label: x' for the mean, x*_m for a mode.
inline MapResult reference_point(const PredictiveModel& model, const FeaturePriors& priors,
                                 double sigma_e_squared, const Reference& reference,
                                 const SearchBudget& budget, std::uint64_t seed,
                                 const LocalSettings& settings = {}) {
  PosteriorObjective obj(model, priors, reference.y_ref, sigma_e_squared);
  return direct_search_map(obj, priors, budget, seed, settings);
}

inline void to_json(nlohmann::json& j, const SearchBudget& b) {
  j = nlohmann::json{{"n_runs", b.n_runs},
                     {"assumed_k", b.assumed_k},
                     {"min_basin_prob", b.min_basin_prob},
                     {"failure_prob", b.failure_prob}};
}

inline void to_json(nlohmann::json& j, const MapResult& m) {
  auto optima = nlohmann::json::array();
  for (const auto& o : m.local_optima)
    optima.push_back(
        {{"point", o.point}, {"log_posterior", o.log_posterior}, {"hit_count", o.hit_count}});
  j = nlohmann::json{{"y_target", m.y_target},
                     {"map_point", m.map_point},
                     {"map_log_posterior", m.map_log_posterior},
                     {"local_optima", optima},
                     {"n_runs_executed", m.n_runs_executed},
                     {"n_converged", m.n_converged},
                     {"budget", m.budget}};
}

}  // namespace devexplain
