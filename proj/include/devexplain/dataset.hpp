#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "devexplain/errors.hpp"
#include "devexplain/matrix.hpp"
#include "devexplain/rng.hpp"
#include "json.hpp"

namespace devexplain {

// N observations of d_x features plus a scalar label.
struct Dataset {
  Matrix features;
  std::vector<double> labels;
  std::vector<std::string> feature_names;
  std::string label_name = "y";

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return feature_names.size(); }
  std::span<const double> row(std::size_t i) const { return features.row(i); }

  void validate() const {
    require(features.rows() == labels.size(), "dataset: feature rows and labels differ in length");
    require(features.rows() == 0 || features.cols() == feature_names.size(),
            "dataset: feature width does not match feature_names");
    std::set<std::string> seen;
    for (const auto& n : feature_names) {
      require(!n.empty(), "dataset: empty feature name");
      require(seen.insert(n).second, "dataset: duplicate feature name '" + n + "'");
    }
    for (double v : features.data()) require(std::isfinite(v), "dataset: non-finite feature value");
    for (double v : labels) require(std::isfinite(v), "dataset: non-finite label");
  }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset out;
    out.feature_names = feature_names;
    out.label_name = label_name;
    out.features = Matrix(0, dim());
    for (std::size_t i : idx) {
      out.features.append_row(row(i));
      out.labels.push_back(labels[i]);
    }
    return out;
  }

  void append(std::span<const double> x, double y) {
    if (features.rows() == 0) features = Matrix(0, dim());
    features.append_row(x);
    labels.push_back(y);
  }
};

inline double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Population (1/N) standard deviation.
inline double pop_std_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

struct MixtureComponent {
  double weight;
  double mean;
  double std;
  friend bool operator==(const MixtureComponent&, const MixtureComponent&) = default;
};

struct MixtureSpec {
  std::vector<MixtureComponent> components;

  void validate() const {
    require(!components.empty(), "mixture spec: no components");
    double total = 0.0;
    for (const auto& c : components) {
      require(c.weight >= 0.0 && std::isfinite(c.weight), "mixture spec: weight must be a probability");
      require(c.std > 0.0 && std::isfinite(c.std), "mixture spec: std must be positive");
      require(std::isfinite(c.mean), "mixture spec: mean must be finite");
      total += c.weight;
    }
    require(std::abs(total - 1.0) <= 1e-12, "mixture spec: weights do not sum to 1");
  }

  double mean() const {
    double m = 0.0;
    for (const auto& c : components) m += c.weight * c.mean;
    return m;
  }

  double variance() const {
    const double m = mean();
    double second = 0.0;
    for (const auto& c : components) second += c.weight * (c.std * c.std + c.mean * c.mean);
    return second - m * m;
  }

  double sample(Rng& rng) const {
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t k = 0;
    for (; k + 1 < components.size(); ++k) {
      acc += components[k].weight;
      if (u < acc) break;
    }
    return rng.normal(components[k].mean, components[k].std);
  }

  friend bool operator==(const MixtureSpec&, const MixtureSpec&) = default;
};

// Labels are the sum of the features plus optional Gaussian noise.
struct SyntheticSpec {
  std::vector<MixtureSpec> feature_specs;
  double label_noise_std = 0.0;

  void validate() const {
    require(!feature_specs.empty(), "synthetic spec: needs at least one feature");
    require(label_noise_std >= 0.0 && std::isfinite(label_noise_std),
            "synthetic spec: label_noise_std must be nonnegative");
    for (const auto& f : feature_specs) f.validate();
  }

  // Three features, 0.3N(0,1) + 0.3N(4,1) + 0.4N(8, s^2) with s = 0.5, 0.75, 1.
  static SyntheticSpec trimodal_example() {
    SyntheticSpec s;
    for (double wide : {0.5, 0.75, 1.0})
      s.feature_specs.push_back(MixtureSpec{{{0.3, 0.0, 1.0}, {0.3, 4.0, 1.0}, {0.4, 8.0, wide}}});
    return s;
  }
};

inline void to_json(nlohmann::json& j, const MixtureSpec& m) {
  std::vector<double> w, mu, sd;
  for (const auto& c : m.components) {
    w.push_back(c.weight);
    mu.push_back(c.mean);
    sd.push_back(c.std);
  }
  j = nlohmann::json{{"weights", w}, {"means", mu}, {"stds", sd}};
}

inline void from_json(const nlohmann::json& j, MixtureSpec& m) {
  const auto w = j.at("weights").get<std::vector<double>>();
  const auto mu = j.at("means").get<std::vector<double>>();
  const auto sd = j.at("stds").get<std::vector<double>>();
  require(w.size() == mu.size() && w.size() == sd.size(),
          "mixture JSON: weights, means and stds differ in length");
  m.components.clear();
  for (std::size_t k = 0; k < w.size(); ++k) m.components.push_back({w[k], mu[k], sd[k]});
}

inline void to_json(nlohmann::json& j, const SyntheticSpec& s) {
  j = nlohmann::json{{"features", s.feature_specs}, {"noise_std", s.label_noise_std}};
}

inline void from_json(const nlohmann::json& j, SyntheticSpec& s) {
  s.feature_specs = j.at("features").get<std::vector<MixtureSpec>>();
  s.label_noise_std = j.value("noise_std", 0.0);
}

inline SyntheticSpec load_synthetic_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open spec file '" + path + "'");
  SyntheticSpec spec;
  try {
    spec = nlohmann::json::parse(in).get<SyntheticSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("spec file '" + path + "': " + e.what());
  }
  spec.validate();
  return spec;
}

// Column I is drawn from stream I of `seed`; label noise uses stream d_x.
inline Dataset generate_synthetic(const SyntheticSpec& spec, std::size_t n, std::uint64_t seed) {
  spec.validate();
  const std::size_t d = spec.feature_specs.size();
  Dataset out;
  for (std::size_t i = 0; i < d; ++i) out.feature_names.push_back("x" + std::to_string(i));
  out.features = Matrix(n, d);
  out.labels.assign(n, 0.0);
  for (std::size_t c = 0; c < d; ++c) {
    Rng rng(seed, c);
    for (std::size_t r = 0; r < n; ++r) out.features(r, c) = spec.feature_specs[c].sample(rng);
  }
  Rng noise(seed, d);
  for (std::size_t r = 0; r < n; ++r) {
    double y = 0.0;
    for (double v : out.features.row(r)) y += v;
    if (spec.label_noise_std > 0.0) y += noise.normal(0.0, spec.label_noise_std);
    out.labels[r] = y;
  }
  return out;
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    cells.push_back(trim(std::string_view(line).substr(start, pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return cells;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

// Comma-delimited, one header row, period decimal separator. Every column
// other than label_column becomes a feature, in header order.
inline Dataset parse_csv(std::istream& in, const std::string& label_column,
                         const std::string& source = "<stream>") {
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty())
    throw IngestionError(source + ": empty file, header row expected");
  const auto header = detail::split_commas(line);
  const auto label_it = std::find(header.begin(), header.end(), label_column);
  if (label_it == header.end())
    throw IngestionError(source + ": label column '" + label_column + "' not in header");
  const auto label_idx = static_cast<std::size_t>(label_it - header.begin());

  Dataset out;
  out.label_name = label_column;
  for (std::size_t c = 0; c < header.size(); ++c)
    if (c != label_idx) out.feature_names.push_back(header[c]);
  out.features = Matrix(0, out.feature_names.size());

  std::vector<double> row(out.feature_names.size());
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_commas(line);
    if (cells.size() != header.size())
      throw IngestionError(source + ": line " + std::to_string(line_no) + " has " +
                           std::to_string(cells.size()) + " cells, header has " +
                           std::to_string(header.size()));
    double label = 0.0;
    std::size_t f = 0;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      double v = 0.0;
      const auto& cell = cells[c];
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || res.ec != std::errc() || res.ptr != cell.data() + cell.size() ||
          !std::isfinite(v))
        throw IngestionError(source + ": non-numeric cell '" + cell + "' at line " +
                             std::to_string(line_no) + ", column '" + header[c] + "'");
      if (c == label_idx)
        label = v;
      else
        row[f++] = v;
    }
    out.features.append_row(row);
    out.labels.push_back(label);
  }
  try {
    out.validate();
  } catch (const ValidationError& e) {
    throw IngestionError(source + ": " + e.what());
  }
  return out;
}

inline Dataset load_csv(const std::string& path, const std::string& label_column) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open data file '" + path + "'");
  return parse_csv(in, label_column, path);
}

// Features in order, label last. Values use shortest round-trip formatting.
inline void write_csv(std::ostream& out, const Dataset& data) {
  for (const auto& n : data.feature_names) out << n << ',';
  out << data.label_name << '\n';
  for (std::size_t r = 0; r < data.size(); ++r) {
    for (double v : data.row(r)) out << detail::format_double(v) << ',';
    out << detail::format_double(data.labels[r]) << '\n';
  }
}

inline void save_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write '" + path + "'");
  write_csv(out, data);
}

// Fisher-Yates shuffle of 0..N-1; the first round(fraction * N) indices train.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t n, double train_fraction, std::uint64_t seed) {
  require(n >= 2, "split: need at least 2 observations");
  require(train_fraction > 0.0 && train_fraction < 1.0, "split: train_fraction must be in (0,1)");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed, 0);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  std::vector<std::size_t> test(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  idx.resize(n_train);
  return {std::move(idx), std::move(test)};
}

inline std::pair<Dataset, Dataset> split(const Dataset& data, double train_fraction,
                                         std::uint64_t seed) {
  const auto [train, test] = split_indices(data.size(), train_fraction, seed);
  return {data.subset(train), data.subset(test)};
}

}  // namespace devexplain
