#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "devexplain/dataset.hpp"
#include "devexplain/errors.hpp"
#include "json.hpp"

namespace devexplain {

struct LinearModel {
  double intercept = 0.0;
  std::vector<double> coefficients;

  double predict(std::span<const double> x) const {
    double y = intercept;
    for (std::size_t i = 0; i < coefficients.size(); ++i) y += coefficients[i] * x[i];
    return y;
  }
};

// Flat array layout; feature < 0 marks a leaf. Samples with x[feature] < threshold go left.
struct RegressionTree {
  std::vector<int> feature;
  std::vector<double> threshold;
  std::vector<int> left;
  std::vector<int> right;
  std::vector<double> value;

  double predict(std::span<const double> x) const {
    std::size_t node = 0;
    while (feature[node] >= 0)
      node = static_cast<std::size_t>(x[static_cast<std::size_t>(feature[node])] < threshold[node]
                                          ? left[node]
                                          : right[node]);
    return value[node];
  }

  int depth() const { return depth_from(0); }

 private:
  int depth_from(std::size_t node) const {
    if (feature[node] < 0) return 0;
    return 1 + std::max(depth_from(static_cast<std::size_t>(left[node])),
                        depth_from(static_cast<std::size_t>(right[node])));
  }
};

struct GbtModel {
  double base_score = 0.0;
  double learning_rate = 0.1;
  int max_depth = 3;
  std::vector<RegressionTree> trees;

  double predict(std::span<const double> x) const {
    double sum = 0.0;
    for (const auto& t : trees) sum += t.predict(x);
    return base_score + learning_rate * sum;
  }
};

enum class ModelKind { linear, gbt };

inline const char* to_string(ModelKind k) { return k == ModelKind::linear ? "linear" : "gbt"; }

// Trained forward model f(x). Immutable after fitting; predict is thread-safe.
class PredictiveModel {
 public:
  PredictiveModel() = default;
  PredictiveModel(LinearModel m, std::vector<std::string> names)
      : impl_(std::move(m)), feature_names_(std::move(names)) {}
  PredictiveModel(GbtModel m, std::vector<std::string> names)
      : impl_(std::move(m)), feature_names_(std::move(names)) {}

  ModelKind kind() const { return impl_.index() == 0 ? ModelKind::linear : ModelKind::gbt; }
  // Smooth models are optimized with quasi-Newton, piecewise-constant ones with a simplex.
  bool is_smooth() const { return kind() == ModelKind::linear; }
  std::size_t dim() const { return feature_names_.size(); }
  const std::vector<std::string>& feature_names() const { return feature_names_; }

  const LinearModel& linear() const { return std::get<LinearModel>(impl_); }
  const GbtModel& gbt() const { return std::get<GbtModel>(impl_); }

  double predict(std::span<const double> x) const {
    require(x.size() == dim(), "predict: expected " + std::to_string(dim()) + " features, got " +
                                   std::to_string(x.size()));
    return std::visit([&](const auto& m) { return m.predict(x); }, impl_);
  }

  // Residual variance from training, if the model carries one.
  std::optional<double> sigma_e_squared;

 private:
  std::variant<LinearModel, GbtModel> impl_;
  std::vector<std::string> feature_names_;
};

// Least squares with intercept. Columns are checked in order for linear
// dependence on the preceding ones (relative tolerance 1e-10 on unit-norm
// columns) so the reported column is the first redundant one.
inline PredictiveModel fit_linear(const Dataset& train) {
  const std::size_t n = train.size();
  const std::size_t d = train.dim();
  require(n > d, "fit_linear: need more observations (" + std::to_string(n) + ") than features (" +
                     std::to_string(d) + ")");
  Eigen::MatrixXd design(n, d + 1);
  Eigen::VectorXd y(n);
  for (std::size_t r = 0; r < n; ++r) {
    design(r, 0) = 1.0;
    for (std::size_t c = 0; c < d; ++c) design(r, c + 1) = train.features(r, c);
    y(r) = train.labels[r];
  }

  Eigen::MatrixXd scaled = design;
  for (Eigen::Index c = 0; c < scaled.cols(); ++c) {
    const double norm = scaled.col(c).norm();
    if (norm > 0.0) scaled.col(c) /= norm;
  }
  constexpr double rank_tol = 1e-10;
  for (Eigen::Index c = 0; c < scaled.cols(); ++c) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(scaled.leftCols(c + 1));
    qr.setThreshold(rank_tol);
    if (qr.rank() < c + 1) {
      const std::string name = c == 0 ? std::string("intercept") : train.feature_names[c - 1];
      throw NumericalError("fit_linear: singular fit, column '" + name +
                           "' is linearly dependent on the preceding columns");
    }
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  const Eigen::VectorXd theta = qr.solve(y);
  LinearModel m;
  m.intercept = theta(0);
  m.coefficients.assign(theta.data() + 1, theta.data() + theta.size());
  return PredictiveModel(std::move(m), train.feature_names);
}

struct GbtParams {
  int n_trees = 300;
  int max_depth = 3;
  double learning_rate = 0.1;
  int min_samples_leaf = 1;
};

namespace detail {

class TreeBuilder {
 public:
  TreeBuilder(const Dataset& data, const std::vector<std::vector<std::size_t>>& sorted,
              const GbtParams& params)
      : data_(data), sorted_(sorted), params_(params), node_of_(data.size(), 0) {}

  RegressionTree build(const std::vector<double>& residual) {
    residual_ = &residual;
    tree_ = RegressionTree{};
    std::fill(node_of_.begin(), node_of_.end(), 0);
    std::vector<std::size_t> all(data_.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    grow(new_node(), all, 0);
    return tree_;
  }

 private:
  int new_node() {
    tree_.feature.push_back(-1);
    tree_.threshold.push_back(0.0);
    tree_.left.push_back(-1);
    tree_.right.push_back(-1);
    tree_.value.push_back(0.0);
    return static_cast<int>(tree_.feature.size() - 1);
  }

  void grow(int node, const std::vector<std::size_t>& members, int depth) {
    const auto& r = *residual_;
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t i : members) {
      sum += r[i];
      sum_sq += r[i] * r[i];
    }
    const double n = static_cast<double>(members.size());
    tree_.value[static_cast<std::size_t>(node)] = sum / n;
    const double node_sse = sum_sq - sum * sum / n;
    const auto min_leaf = static_cast<std::size_t>(params_.min_samples_leaf);
    if (depth >= params_.max_depth || members.size() < 2 * min_leaf || node_sse <= 0.0) return;

    for (std::size_t i : members) node_of_[i] = node;

    double best_gain = 1e-12 * node_sse;
    int best_feature = -1;
    double best_threshold = 0.0;
    std::vector<std::size_t> ordered;
    ordered.reserve(members.size());
    for (std::size_t f = 0; f < data_.dim(); ++f) {
      ordered.clear();
      for (std::size_t i : sorted_[f])
        if (node_of_[i] == node) ordered.push_back(i);
      double left_sum = 0.0;
      for (std::size_t k = 0; k + 1 < ordered.size(); ++k) {
        left_sum += r[ordered[k]];
        const std::size_t n_left = k + 1;
        const std::size_t n_right = ordered.size() - n_left;
        const double a = data_.features(ordered[k], f);
        const double b = data_.features(ordered[k + 1], f);
        if (!(a < b) || n_left < min_leaf || n_right < min_leaf) continue;
        const double right_sum = sum - left_sum;
        const double gain = left_sum * left_sum / static_cast<double>(n_left) +
                            right_sum * right_sum / static_cast<double>(n_right) - sum * sum / n;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          double mid = a + 0.5 * (b - a);
          if (!(a < mid)) mid = b;
          best_threshold = mid;
        }
      }
    }
    for (std::size_t i : members) node_of_[i] = -1;
    if (best_feature < 0) return;

    std::vector<std::size_t> left_members, right_members;
    for (std::size_t i : members)
      (data_.features(i, static_cast<std::size_t>(best_feature)) < best_threshold ? left_members
                                                                                   : right_members)
          .push_back(i);
    const int l = new_node();
    const int rr = new_node();
    const auto idx = static_cast<std::size_t>(node);
    tree_.feature[idx] = best_feature;
    tree_.threshold[idx] = best_threshold;
    tree_.left[idx] = l;
    tree_.right[idx] = rr;
    grow(l, left_members, depth + 1);
    grow(rr, right_members, depth + 1);
  }

  const Dataset& data_;
  const std::vector<std::vector<std::size_t>>& sorted_;
  const GbtParams& params_;
  std::vector<int> node_of_;
  const std::vector<double>* residual_ = nullptr;
  RegressionTree tree_;
};

}  // namespace detail

// Stagewise squared-loss boosting. Splits maximize SSE reduction; ties go to
// the lowest feature index, then the lowest threshold.
inline PredictiveModel fit_gbt(const Dataset& train, const GbtParams& params) {
  require(params.n_trees >= 0, "fit_gbt: n_trees must be nonnegative");
  require(params.max_depth >= 1, "fit_gbt: max_depth must be at least 1");
  require(params.min_samples_leaf >= 1, "fit_gbt: min_samples_leaf must be at least 1");
  require(params.learning_rate > 0.0, "fit_gbt: learning_rate must be positive");
  require(train.size() >= 2 * static_cast<std::size_t>(params.min_samples_leaf),
          "fit_gbt: need at least 2*min_samples_leaf observations");

  GbtModel m;
  m.base_score = mean_of(train.labels);
  m.learning_rate = params.learning_rate;
  m.max_depth = params.max_depth;

  std::vector<std::vector<std::size_t>> sorted(train.dim());
  for (std::size_t f = 0; f < train.dim(); ++f) {
    auto& idx = sorted[f];
    idx.resize(train.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return train.features(a, f) < train.features(b, f);
    });
  }

  std::vector<double> pred(train.size(), m.base_score);
  std::vector<double> residual(train.size());
  detail::TreeBuilder builder(train, sorted, params);
  for (int t = 0; t < params.n_trees; ++t) {
    for (std::size_t i = 0; i < residual.size(); ++i) residual[i] = train.labels[i] - pred[i];
    auto tree = builder.build(residual);
    for (std::size_t i = 0; i < pred.size(); ++i)
      pred[i] += params.learning_rate * tree.predict(train.row(i));
    m.trees.push_back(std::move(tree));
  }
  return PredictiveModel(std::move(m), train.feature_names);
}

// Training SSE after each boosting stage; element t is the SSE using trees 0..t.
inline std::vector<double> staged_training_sse(const PredictiveModel& model, const Dataset& data) {
  require(model.kind() == ModelKind::gbt, "staged_training_sse: requires a gbt model");
  require(data.dim() == model.dim(), "staged_training_sse: dataset width does not match model");
  const auto& g = model.gbt();
  std::vector<double> pred(data.size(), g.base_score);
  std::vector<double> out;
  for (const auto& tree : g.trees) {
    double sse = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      pred[i] += g.learning_rate * tree.predict(data.row(i));
      sse += (pred[i] - data.labels[i]) * (pred[i] - data.labels[i]);
    }
    out.push_back(sse);
  }
  return out;
}

struct ResidualStats {
  double sigma_e_squared = 0.0;
  double r_squared_train = 0.0;
  std::optional<double> r_squared_test;
};

namespace detail {

inline std::pair<double, double> sse_and_r2(const PredictiveModel& model, const Dataset& data) {
  require(data.size() > 0, "residual_stats: empty dataset");
  require(data.dim() == model.dim(), "residual_stats: dataset width does not match model");
  const double mean = mean_of(data.labels);
  double sse = 0.0, sst = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double e = model.predict(data.row(i)) - data.labels[i];
    sse += e * e;
    sst += (data.labels[i] - mean) * (data.labels[i] - mean);
  }
  if (!(sst > 0.0)) throw NumericalError("residual_stats: zero label variance, R^2 undefined");
  return {sse, 1.0 - sse / sst};
}

}  // namespace detail

inline ResidualStats residual_stats(const PredictiveModel& model, const Dataset& train,
                                    const Dataset* test = nullptr) {
  ResidualStats s;
  const auto [sse, r2] = detail::sse_and_r2(model, train);
  s.sigma_e_squared = sse / static_cast<double>(train.size());
  s.r_squared_train = r2;
  if (test != nullptr) s.r_squared_test = detail::sse_and_r2(model, *test).second;
  return s;
}

// Relative floor on the likelihood variance, as a fraction of Var(y).
inline constexpr double kSigmaFloorRatio = 1e-8;

// sigma_e^2 as used in the likelihood: a perfect fit would make it zero.
inline double likelihood_variance(double sigma_e_squared, double label_variance,
                                  double floor_ratio = kSigmaFloorRatio) {
  return std::max(sigma_e_squared, floor_ratio * label_variance);
}

// --- JSON (schema 1) ---

inline nlohmann::json model_to_json(const PredictiveModel& model) {
  nlohmann::json j{{"schema", 1}, {"kind", to_string(model.kind())},
                   {"feature_names", model.feature_names()}};
  if (model.sigma_e_squared) j["sigma_e_squared"] = *model.sigma_e_squared;
  if (model.kind() == ModelKind::linear) {
    j["intercept"] = model.linear().intercept;
    j["coefficients"] = model.linear().coefficients;
  } else {
    const auto& g = model.gbt();
    j["base_score"] = g.base_score;
    j["learning_rate"] = g.learning_rate;
    j["max_depth"] = g.max_depth;
    auto& trees = j["trees"] = nlohmann::json::array();
    for (const auto& t : g.trees)
      trees.push_back({{"feature", t.feature},
                       {"threshold", t.threshold},
                       {"left", t.left},
                       {"right", t.right},
                       {"value", t.value}});
  }
  return j;
}

inline PredictiveModel model_from_json(const nlohmann::json& j) {
  try {
    require(j.at("schema").get<int>() == 1, "model JSON: unsupported schema version");
    auto names = j.at("feature_names").get<std::vector<std::string>>();
    const auto kind = j.at("kind").get<std::string>();
    PredictiveModel model;
    if (kind == "linear") {
      LinearModel m;
      m.intercept = j.at("intercept").get<double>();
      m.coefficients = j.at("coefficients").get<std::vector<double>>();
      require(m.coefficients.size() == names.size(), "model JSON: coefficient count mismatch");
      model = PredictiveModel(std::move(m), std::move(names));
    } else if (kind == "gbt") {
      GbtModel m;
      m.base_score = j.at("base_score").get<double>();
      m.learning_rate = j.at("learning_rate").get<double>();
      m.max_depth = j.at("max_depth").get<int>();
      for (const auto& jt : j.at("trees")) {
        RegressionTree t;
        t.feature = jt.at("feature").get<std::vector<int>>();
        t.threshold = jt.at("threshold").get<std::vector<double>>();
        t.left = jt.at("left").get<std::vector<int>>();
        t.right = jt.at("right").get<std::vector<int>>();
        t.value = jt.at("value").get<std::vector<double>>();
        const auto nodes = t.feature.size();
        require(nodes > 0 && t.threshold.size() == nodes && t.left.size() == nodes &&
                    t.right.size() == nodes && t.value.size() == nodes,
                "model JSON: ragged tree arrays");
        for (std::size_t k = 0; k < nodes; ++k) {
          if (t.feature[k] < 0) continue;
          require(static_cast<std::size_t>(t.feature[k]) < names.size(),
                  "model JSON: split feature index out of range");
          // Children come after their parent, which also rules out cycles.
          const int node = static_cast<int>(k);
          require(t.left[k] > node && t.right[k] > node &&
                      static_cast<std::size_t>(t.left[k]) < nodes &&
                      static_cast<std::size_t>(t.right[k]) < nodes,
                  "model JSON: child index out of range");
        }
        require(t.depth() <= m.max_depth, "model JSON: tree deeper than max_depth");
        m.trees.push_back(std::move(t));
      }
      model = PredictiveModel(std::move(m), std::move(names));
    } else {
      throw ValidationError("model JSON: unknown kind '" + kind + "'");
    }
    if (j.contains("sigma_e_squared")) model.sigma_e_squared = j["sigma_e_squared"].get<double>();
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model JSON: ") + e.what());
  }
}

inline PredictiveModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open model file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError("model file '" + path + "': " + e.what());
  }
  return model_from_json(j);
}

}  // namespace devexplain
