#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "devexplain/anova.hpp"
#include "devexplain/dataset.hpp"
#include "devexplain/errors.hpp"
#include "devexplain/inverse.hpp"
#include "devexplain/mixtures.hpp"
#include "devexplain/models.hpp"
#include "json.hpp"

namespace devexplain {

inline constexpr double kDefaultDegeneracyTau = 0.05;

// s_I = delta_I / delta. Empty score vectors when the explanation is degenerate.
struct ResponsibleScores {
  std::vector<double> first_order;
  std::optional<Matrix> second_order;
  double residual_share = 0.0;
  ReferenceKind reference_kind = ReferenceKind::mode;
  std::optional<std::size_t> mode_index;
  bool degenerate = false;

  double total() const {
    double s = residual_share;
    for (double v : first_order) s += v;
    if (second_order)
      for (std::size_t i = 0; i < first_order.size(); ++i)
        for (std::size_t j = i + 1; j < first_order.size(); ++j) s += (*second_order)(i, j);
    return s;
  }
};

// Scores are signed and unclamped. |delta| < tau * label_std marks the
// result degenerate: the ratio is dominated by noise there.
inline ResponsibleScores responsible_scores(const DeviationDecomposition& decomp, double label_std,
                                            double degeneracy_tau = kDefaultDegeneracyTau,
                                            ReferenceKind kind = ReferenceKind::mode,
                                            std::optional<std::size_t> mode_index = std::nullopt) {
  require(degeneracy_tau > 0.0, "responsible_scores: degeneracy_tau must be positive");
  ResponsibleScores s;
  s.reference_kind = kind;
  s.mode_index = mode_index;
  const double delta = decomp.total_delta;
  if (!(std::abs(delta) >= degeneracy_tau * label_std) || delta == 0.0) {
    s.degenerate = true;
    return s;
  }
  for (double v : decomp.first_order) s.first_order.push_back(v / delta);
  if (decomp.second_order) {
    const std::size_t d = decomp.first_order.size();
    Matrix m(d, d);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j) m(i, j) = (*decomp.second_order)(i, j) / delta;
    s.second_order = std::move(m);
  }
  s.residual_share = decomp.residual / delta;
  return s;
}

struct ShapleyAttribution {
  std::vector<double> values;
  double base_value = 0.0;
  std::size_t np_used = 0;

  double sum() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
};

inline constexpr std::size_t kMaxShapleyFeatures = 20;

// Interventional Shapley values by exact subset enumeration. v(S) is the mean
// prediction over background rows with the coordinates in S set to x_obs;
// every coalition uses the same rows.
template <Predictor M>
ShapleyAttribution shapley_values(const M& model, const BackgroundSample& bg,
                                  std::span<const double> x_obs) {
  const std::size_t d = bg.dim();
  require(x_obs.size() == d, "shapley_values: dimension mismatch");
  if (d > kMaxShapleyFeatures)
    throw ValidationError("shapley_values: exact enumeration supports at most " +
                          std::to_string(kMaxShapleyFeatures) + " features, got " +
                          std::to_string(d));
  require(bg.size() >= 1, "shapley_values: empty background");

  const std::size_t n_sets = std::size_t{1} << d;
  std::vector<double> value(n_sets);
  std::vector<double> preds(bg.size());
  std::vector<double> buf(d);
  for (std::size_t mask = 0; mask < n_sets; ++mask) {
    for (std::size_t s = 0; s < bg.size(); ++s) {
      const auto row = bg.points.row(s);
      for (std::size_t i = 0; i < d; ++i) buf[i] = (mask >> i & 1U) ? x_obs[i] : row[i];
      preds[s] = model.predict(buf);
    }
    value[mask] = detail::pairwise_sum(preds) / static_cast<double>(bg.size());
  }

  // weight[k] = k! (d - k - 1)! / d!
  std::vector<double> weight(d);
  for (std::size_t k = 0; k < d; ++k)
    weight[k] = std::exp(std::lgamma(static_cast<double>(k) + 1.0) +
                         std::lgamma(static_cast<double>(d - k)) -
                         std::lgamma(static_cast<double>(d) + 1.0));

  ShapleyAttribution out;
  out.values.assign(d, 0.0);
  out.base_value = value[0];
  out.np_used = bg.size();
  for (std::size_t i = 0; i < d; ++i) {
    const std::size_t bit = std::size_t{1} << i;
    double phi = 0.0;
    for (std::size_t mask = 0; mask < n_sets; ++mask) {
      if (mask & bit) continue;
      const auto k = static_cast<std::size_t>(std::popcount(mask));
      phi += weight[k] * (value[mask | bit] - value[mask]);
    }
    out.values[i] = phi;
  }
  return out;
}

enum class MeanReferencePrior {
  // Gaussian per feature with the data's mean and variance. For a least-squares
  // linear model the MAP for y = mean(y) is then the feature mean itself.
  moment_matched,
  // The same priors used for mode references.
  feature_priors,
};

inline const char* to_string(MeanReferencePrior p) {
  return p == MeanReferencePrior::moment_matched ? "moment_matched" : "feature_priors";
}

struct ReferenceRequest {
  ReferenceKind kind = ReferenceKind::mode;
  std::size_t mode_index = 0;

  static ReferenceRequest mean() { return {ReferenceKind::mean, 0}; }
  static ReferenceRequest mode(std::size_t m = 0) { return {ReferenceKind::mode, m}; }
};

struct ExplainSettings {
  std::uint64_t seed = 0;
  std::size_t np = 0;  // 0: min(N, 2000) when resampling, 2000 when prior-sampling
  BackgroundSource background = BackgroundSource::dataset_resampled;
  int order = 1;
  std::optional<std::size_t> n_runs;  // overrides the default budget's run count
  std::size_t label_k_max = 8;
  double degeneracy_tau = kDefaultDegeneracyTau;
  MeanReferencePrior mean_prior = MeanReferencePrior::moment_matched;
  double sigma_floor_ratio = kSigmaFloorRatio;
  LocalSettings local;
  // Label mixture for mode references; fitted with BIC up to label_k_max when absent.
  std::optional<GaussianMixture1D> label_mixture;
};

// Seeds derived from the master seed, one per stochastic stage.
struct StageSeeds {
  std::uint64_t label_gmm;
  std::uint64_t map_search;
  std::uint64_t background;

  explicit StageSeeds(std::uint64_t master)
      : label_gmm(derive_seed(master, 1)),
        map_search(derive_seed(master, 2)),
        background(derive_seed(master, 3)) {}
};

// Everything shared by all observations explained against one reference.
struct ExplainContext {
  const PredictiveModel* model = nullptr;
  const Dataset* data = nullptr;
  ExplainSettings settings;
  StageSeeds seeds{0};
  ResidualStats residuals;
  double sigma_e_squared = 1.0;  // after the floor
  double label_mean = 0.0;
  double label_std = 0.0;
  std::optional<GaussianMixture1D> label_mixture;
  std::vector<ModeInfo> label_modes;
  Reference reference;
  FeaturePriors reference_priors;
  MapResult map;
  BackgroundSample background;
};

inline ExplainContext prepare_explanation(const PredictiveModel& model, const FeaturePriors& priors,
                                          const Dataset& data, const ReferenceRequest& request,
                                          const ExplainSettings& settings) {
  in_stage("input", [&] {
    data.validate();
    require(data.size() >= 2, "need at least 2 observations");
    require(model.dim() == data.dim(), "model and data disagree on the number of features");
    require(priors.dim() == data.dim(), "priors and data disagree on the number of features");
    require(settings.order == 1 || settings.order == 2, "order must be 1 or 2");
  });
  ExplainContext ctx;
  ctx.model = &model;
  ctx.data = &data;
  ctx.settings = settings;
  ctx.seeds = StageSeeds(settings.seed);
  ctx.label_mean = mean_of(data.labels);
  ctx.label_std = pop_std_of(data.labels);

  in_stage("residual-stats", [&] {
    ctx.residuals = residual_stats(model, data);
    ctx.sigma_e_squared = likelihood_variance(ctx.residuals.sigma_e_squared,
                                              ctx.label_std * ctx.label_std,
                                              settings.sigma_floor_ratio);
  });

  if (request.kind == ReferenceKind::mode) {
    in_stage("label-modes", [&] {
      ctx.label_mixture =
          settings.label_mixture
              ? *settings.label_mixture
              : fit_gmm_bic(data.labels, settings.label_k_max, ctx.seeds.label_gmm).mixture;
      ctx.label_modes = modes(*ctx.label_mixture);
      require(request.mode_index < ctx.label_modes.size(),
              "mode index " + std::to_string(request.mode_index) + " out of range (" +
                  std::to_string(ctx.label_modes.size()) + " modes found)");
      ctx.reference = Reference::at_mode(ctx.label_modes[request.mode_index], request.mode_index);
    });
    ctx.reference_priors = priors;
  } else {
    ctx.reference = Reference::mean(data.labels);
    ctx.reference_priors = in_stage("reference-prior", [&] {
      return settings.mean_prior == MeanReferencePrior::moment_matched ? moment_matched_priors(data)
                                                                       : priors;
    });
  }

  ctx.map = in_stage("map-search", [&] {
    auto budget = SearchBudget::default_for(ctx.reference_priors);
    if (settings.n_runs) budget.n_runs = *settings.n_runs;
    return reference_point(model, ctx.reference_priors, ctx.sigma_e_squared, ctx.reference, budget,
                           ctx.seeds.map_search, settings.local);
  });

  ctx.background = in_stage("background", [&] {
    if (settings.background == BackgroundSource::dataset_resampled) {
      const std::size_t np = settings.np ? settings.np : std::min<std::size_t>(data.size(), 2000);
      return draw_background(data, np, ctx.seeds.background);
    }
    return draw_background(priors, settings.np ? settings.np : 2000, ctx.seeds.background);
  });
  return ctx;
}

struct ExplanationReport {
  std::size_t observation_id = 0;
  double y_obs = 0.0;
  ReferenceKind reference_kind = ReferenceKind::mode;
  std::optional<std::size_t> mode_index;
  std::optional<ModeInfo> mode;
  double y_ref = 0.0;
  std::vector<double> x_ref;
  double prediction = 0.0;  // f(x_obs)
  ResponsibleScores scores;
  ShapleyAttribution shap;
  double z = 0.0;
  std::optional<double> z_m;
  DeviationDecomposition decomposition;
  std::vector<std::string> feature_names;
  nlohmann::json settings_echo;
};

inline nlohmann::json settings_echo(const ExplainContext& ctx) {
  const auto& s = ctx.settings;
  return nlohmann::json{{"seed", s.seed},
                        {"stage_seeds",
                         {{"label_gmm", ctx.seeds.label_gmm},
                          {"map_search", ctx.seeds.map_search},
                          {"background", ctx.seeds.background}}},
                        {"np", ctx.background.size()},
                        {"background", to_string(s.background)},
                        {"order", s.order},
                        {"label_k_max", s.label_k_max},
                        {"label_mixture", ctx.label_mixture ? nlohmann::json(*ctx.label_mixture)
                                                            : nlohmann::json()},
                        {"degeneracy_tau", s.degeneracy_tau},
                        {"mean_prior", to_string(s.mean_prior)},
                        {"sigma_floor_ratio", s.sigma_floor_ratio},
                        {"sigma_e_squared_raw", ctx.residuals.sigma_e_squared},
                        {"sigma_e_squared", ctx.sigma_e_squared},
                        {"grad_tol", s.local.grad_tol},
                        {"step_tol", s.local.step_tol},
                        {"max_iters", s.local.max_iters},
                        {"budget", ctx.map.budget}};
}

inline ExplanationReport explain_observation(const ExplainContext& ctx, std::size_t index) {
  const auto& data = *ctx.data;
  in_stage("input", [&] {
    require(index < data.size(), "observation index " + std::to_string(index) +
                                     " out of range (N = " + std::to_string(data.size()) + ")");
  });
  ExplanationReport r;
  r.observation_id = index;
  r.y_obs = data.labels[index];
  r.reference_kind = ctx.reference.kind;
  r.mode_index = ctx.reference.mode_index;
  r.mode = ctx.reference.mode;
  r.y_ref = ctx.reference.y_ref;
  r.x_ref = ctx.map.map_point;
  r.feature_names = data.feature_names;
  const auto x_obs = data.row(index);
  r.prediction = ctx.model->predict(x_obs);

  r.decomposition = in_stage("decompose", [&] {
    return decompose_deviation(*ctx.model, ctx.background, x_obs, r.x_ref, r.y_obs, r.y_ref,
                               ctx.settings.order);
  });
  r.scores = responsible_scores(r.decomposition, ctx.label_std, ctx.settings.degeneracy_tau,
                                r.reference_kind, r.mode_index);
  r.shap = in_stage("shapley", [&] { return shapley_values(*ctx.model, ctx.background, x_obs); });
  in_stage("z-scores", [&] {
    r.z = z_score(r.y_obs, data.labels);
    if (r.mode) r.z_m = mode_z_score(r.y_obs, *r.mode);
  });
  r.settings_echo = settings_echo(ctx);
  r.settings_echo["map"] = ctx.map;
  return r;
}

// Full pipeline for one observation against one reference.
inline ExplanationReport explain(const PredictiveModel& model, const FeaturePriors& priors,
                                 const Dataset& data, std::size_t observation_index,
                                 const ReferenceRequest& reference,
                                 const ExplainSettings& settings = {}) {
  const auto ctx = prepare_explanation(model, priors, data, reference, settings);
  return explain_observation(ctx, observation_index);
}

// max_I | s_I / sum(s) - phi_I / sum(phi) | for a linear model explained
// against the label mean.
inline double mean_based_scores_equal_shap_check(const PredictiveModel& model,
                                                 const ExplanationReport& report) {
  require(model.kind() == ModelKind::linear, "score/SHAP check requires a linear model");
  require(report.reference_kind == ReferenceKind::mean, "score/SHAP check requires a mean reference");
  if (report.scores.degenerate)
    throw NumericalError("score/SHAP check: explanation is degenerate");
  const auto& s = report.scores.first_order;
  double ssum = 0.0;
  for (double v : s) ssum += v;
  const double psum = report.shap.sum();
  if (ssum == 0.0 || psum == 0.0)
    throw NumericalError("score/SHAP check: attributions sum to zero, cannot normalize");
  double worst = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    worst = std::max(worst, std::abs(s[i] / ssum - report.shap.values[i] / psum));
  return worst;
}

inline void to_json(nlohmann::json& j, const ResponsibleScores& s) {
  j = nlohmann::json{{"degenerate", s.degenerate},
                     {"reference_kind", to_string(s.reference_kind)},
                     {"mode_index", s.mode_index ? nlohmann::json(*s.mode_index) : nlohmann::json()}};
  if (s.degenerate) {
    j["first_order"] = nullptr;
    j["second_order"] = nullptr;
    j["residual_share"] = nullptr;
    return;
  }
  j["first_order"] = s.first_order;
  j["residual_share"] = s.residual_share;
  if (s.second_order) {
    auto rows = nlohmann::json::array();
    for (std::size_t a = 0; a < s.first_order.size(); ++a)
      for (std::size_t b = a + 1; b < s.first_order.size(); ++b)
        rows.push_back({{"i", a}, {"j", b}, {"score", (*s.second_order)(a, b)}});
    j["second_order"] = rows;
  } else {
    j["second_order"] = nullptr;
  }
}

inline void to_json(nlohmann::json& j, const ShapleyAttribution& s) {
  j = nlohmann::json{{"values", s.values}, {"base_value", s.base_value}, {"np", s.np_used}};
}

inline constexpr int kReportSchema = 1;

inline void to_json(nlohmann::json& j, const ExplanationReport& r) {
  j = nlohmann::json{{"schema", kReportSchema},
                     {"observation_id", r.observation_id},
                     {"feature_names", r.feature_names},
                     {"y_obs", r.y_obs},
                     {"prediction", r.prediction},
                     {"reference_kind", to_string(r.reference_kind)},
                     {"mode_index", r.mode_index ? nlohmann::json(*r.mode_index) : nlohmann::json()},
                     {"mode", r.mode ? nlohmann::json(*r.mode) : nlohmann::json()},
                     {"y_ref", r.y_ref},
                     {"x_ref", r.x_ref},
                     {"scores", r.scores},
                     {"shap", r.shap},
                     {"z", r.z},
                     {"z_m", r.z_m ? nlohmann::json(*r.z_m) : nlohmann::json()},
                     {"decomposition", r.decomposition},
                     {"settings", r.settings_echo}};
}

namespace detail {

inline std::string csv_number(double v) { return std::isfinite(v) ? format_double(v) : ""; }

}  // namespace detail

inline constexpr const char* kReportCsvHeader =
    "observation_id,reference_kind,mode_index,y_obs,y_ref,z,z_m,degenerate,feature,x_obs,x_ref,"
    "delta,stderr,score,shap,shap_share";

// One row per feature.
inline void write_report_csv_rows(std::ostream& out, const ExplanationReport& r) {
  const double psum = r.shap.sum();
  for (std::size_t i = 0; i < r.feature_names.size(); ++i) {
    out << r.observation_id << ',' << to_string(r.reference_kind) << ','
        << (r.mode_index ? std::to_string(*r.mode_index) : "") << ','
        << detail::csv_number(r.y_obs) << ',' << detail::csv_number(r.y_ref) << ','
        << detail::csv_number(r.z) << ',' << (r.z_m ? detail::csv_number(*r.z_m) : "") << ','
        << (r.scores.degenerate ? "true" : "false") << ',' << r.feature_names[i] << ','
        << detail::csv_number(r.decomposition.observation[i]) << ','
        << detail::csv_number(r.decomposition.reference[i]) << ','
        << detail::csv_number(r.decomposition.first_order[i]) << ','
        << detail::csv_number(r.decomposition.stderr_first_order[i]) << ','
        << (r.scores.degenerate ? "" : detail::csv_number(r.scores.first_order[i])) << ','
        << detail::csv_number(r.shap.values[i]) << ','
        << (psum != 0.0 ? detail::csv_number(r.shap.values[i] / psum) : "") << '\n';
  }
}

}  // namespace devexplain
