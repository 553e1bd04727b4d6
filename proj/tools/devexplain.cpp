// devexplain command-line driver: synth, fit, modes, explain, compare.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "devexplain/devexplain.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace devexplain;

namespace {

constexpr const char* kVersion = "1.0.0";

struct Common {
  std::string out = ".";
  std::optional<std::uint64_t> seed;
};

// --seed, then DEVEXPLAIN_SEED, then 0.
std::uint64_t resolve_seed(const Common& c) {
  if (c.seed) return *c.seed;
  if (const char* env = std::getenv("DEVEXPLAIN_SEED")) {
    std::uint64_t v = 0;
    const std::string s(env);
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
      throw ValidationError("DEVEXPLAIN_SEED is not an unsigned integer: '" + s + "'");
    return v;
  }
  return 0;
}

fs::path out_path(const Common& c, const std::string& name) { return fs::path(c.out) / name; }

void ensure_out_dir(const Common& c) {
  std::error_code ec;
  fs::create_directories(c.out, ec);
  if (ec) throw IngestionError("cannot create output directory '" + c.out + "': " + ec.message());
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw IngestionError("cannot write '" + p.string() + "'");
  f << text;
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IngestionError("'" + path + "': " + e.what());
  }
}

// Config echo; argv replays the run when given the same --out.
void echo_config(const Common& c, const std::string& command, json options) {
  std::vector<std::string> argv{"devexplain", command};
  for (const auto& [k, v] : options.items()) {
    if (v.is_null() || (v.is_boolean() && !v.get<bool>())) continue;
    if (v.is_array()) {
      if (k == "reports") continue;
      for (const auto& e : v) argv.push_back("--" + k + "=" + e.get<std::string>());
      continue;
    }
    if (v.is_boolean()) argv.push_back("--" + k);
    else argv.push_back("--" + k + "=" + (v.is_string() ? v.get<std::string>() : v.dump()));
  }
  if (options.contains("reports"))
    for (const auto& e : options["reports"]) argv.push_back(e.get<std::string>());
  write_json(out_path(c, command + "_config.json"),
             json{{"command", command}, {"version", kVersion}, {"options", options}, {"argv", argv}});
}

void append_log(const Common& c, const std::string& command, int code, const std::string& note) {
  std::error_code ec;
  if (!fs::is_directory(c.out, ec)) return;
  std::ofstream log(out_path(c, "run.log"), std::ios::app);
  if (!log) return;
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  log << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << " devexplain " << command << " exit=" << code;
  if (!note.empty()) log << " " << note;
  log << '\n';
}

std::vector<double> parse_number_list(const std::string& text) {
  std::vector<double> v;
  for (const auto& cell : detail::split_commas(text)) {
    const auto t = detail::trim(cell);
    double x = 0.0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), x);
    if (t.empty() || ec != std::errc() || p != t.data() + t.size() || !std::isfinite(x))
      throw ValidationError("not a number list: '" + text + "'");
    v.push_back(x);
  }
  return v;
}

// ---- synth

struct SynthArgs {
  Common c;
  std::string spec;
  std::size_t n = 10000;
  std::vector<std::string> append;
};

int cmd_synth(const SynthArgs& a) {
  const auto seed = resolve_seed(a.c);
  const auto spec = in_stage("spec", [&] { return load_synthetic_spec(a.spec); });
  auto data = in_stage("generate", [&] { return generate_synthetic(spec, a.n, seed); });
  in_stage("append", [&] {
    for (const auto& row : a.append) {
      const auto v = parse_number_list(row);
      require(v.size() == data.dim() + 1, "--append needs " + std::to_string(data.dim()) +
                                              " features plus a label: '" + row + "'");
      data.append(std::span<const double>(v).first(data.dim()), v.back());
    }
  });
  ensure_out_dir(a.c);
  save_csv(out_path(a.c, "synthetic.csv").string(), data);
  echo_config(a.c, "synth",
              json{{"spec", a.spec}, {"n", a.n}, {"seed", seed}, {"append", a.append}});
  std::cout << "synth: wrote " << data.size() << " rows x " << data.dim()
            << " features to synthetic.csv; label mean " << mean_of(data.labels) << ", std "
            << pop_std_of(data.labels) << "\n";
  return 0;
}

// ---- fit

struct FitArgs {
  Common c;
  std::string data;
  std::string label = "y";
  std::string model = "linear";
  GbtParams gbt;
  double train_fraction = 1.0;
};

int cmd_fit(const FitArgs& a) {
  const auto seed = resolve_seed(a.c);
  const auto data = in_stage("ingest", [&] { return load_csv(a.data, a.label); });
  Dataset train = data, test;
  const bool held_out = a.train_fraction < 1.0;
  if (held_out)
    std::tie(train, test) = in_stage("split", [&] { return split(data, a.train_fraction, seed); });
  auto model = in_stage("fit", [&] {
    return a.model == "linear" ? fit_linear(train) : fit_gbt(train, a.gbt);
  });
  const auto stats =
      in_stage("residual-stats", [&] { return residual_stats(model, train, held_out ? &test : nullptr); });
  model.sigma_e_squared = stats.sigma_e_squared;

  json metrics{{"model", a.model},
               {"n_train", train.size()},
               {"n_test", test.size()},
               {"sigma_e_squared", stats.sigma_e_squared},
               {"r_squared_train", stats.r_squared_train},
               {"r_squared_test", stats.r_squared_test ? json(*stats.r_squared_test) : json()}};
  if (model.kind() == ModelKind::linear) {
    metrics["intercept"] = model.linear().intercept;
    metrics["coefficients"] = model.linear().coefficients;
  } else {
    metrics["n_trees"] = model.gbt().trees.size();
    metrics["train_sse_by_stage"] = staged_training_sse(model, train);
  }

  ensure_out_dir(a.c);
  write_json(out_path(a.c, "model.json"), model_to_json(model));
  write_json(out_path(a.c, "metrics.json"), metrics);
  json opts{{"data", a.data}, {"label", a.label}, {"model", a.model}, {"seed", seed},
            {"train-fraction", a.train_fraction}};
  if (a.model == "gbt") {
    opts["n-trees"] = a.gbt.n_trees;
    opts["max-depth"] = a.gbt.max_depth;
    opts["learning-rate"] = a.gbt.learning_rate;
    opts["min-samples-leaf"] = a.gbt.min_samples_leaf;
  }
  echo_config(a.c, "fit", opts);

  std::cout << "fit: " << a.model << " on " << train.size() << " rows; sigma_e^2 "
            << stats.sigma_e_squared << ", R^2 train " << stats.r_squared_train;
  if (stats.r_squared_test) std::cout << ", R^2 test " << *stats.r_squared_test;
  std::cout << "\n";
  if (model.kind() == ModelKind::linear) {
    std::cout << "  intercept " << model.linear().intercept << "\n";
    for (std::size_t i = 0; i < train.dim(); ++i)
      std::cout << "  " << train.feature_names[i] << " " << model.linear().coefficients[i] << "\n";
  }
  return 0;
}

// ---- modes

struct ModesArgs {
  Common c;
  std::string data;
  std::string label = "y";
  std::size_t k_max = 8;
};

json modes_document(const KSelection& sel, const std::vector<ModeInfo>& found, const Dataset& data) {
  return json{{"k", sel.k},
              {"bic", sel.bics},
              {"mixture", sel.mixture},
              {"log_likelihood", sel.mixture.log_likelihood},
              {"modes", found},
              {"label_mean", mean_of(data.labels)},
              {"label_std", pop_std_of(data.labels)},
              {"n", data.size()}};
}

int cmd_modes(const ModesArgs& a) {
  const auto seed = resolve_seed(a.c);
  const auto data = in_stage("ingest", [&] { return load_csv(a.data, a.label); });
  const auto sel = in_stage("gmm", [&] {
    return fit_gmm_bic(data.labels, a.k_max, StageSeeds(seed).label_gmm);
  });
  const auto found = in_stage("modes", [&] { return modes(sel.mixture); });
  ensure_out_dir(a.c);
  write_json(out_path(a.c, "modes.json"), modes_document(sel, found, data));
  echo_config(a.c, "modes", json{{"data", a.data}, {"label", a.label}, {"k-max", a.k_max}, {"seed", seed}});
  std::cout << "modes: k = " << sel.k << ", " << found.size() << " mode(s)\n";
  for (std::size_t m = 0; m < found.size(); ++m)
    std::cout << "  mode " << m << ": y = " << found[m].location << ", density " << found[m].density
              << ", sigma_m " << found[m].sigma_m << "\n";
  return 0;
}

// ---- explain

struct ExplainArgs {
  Common c;
  std::string data;
  std::string label = "y";
  std::string model;
  bool mean = false;
  std::optional<std::size_t> mode;
  std::optional<std::size_t> index;
  std::string range;
  std::size_t np = 0;
  std::optional<std::size_t> runs;
  std::string priors;
  std::size_t prior_k_max = 3;
  int order = 1;
  std::string background;
  std::size_t k_max = 8;
  double tau = kDefaultDegeneracyTau;
  std::string mean_prior = "moment";
  std::string modes_file;
  bool svg = false;
};

std::vector<std::size_t> parse_range(const std::string& r, std::size_t n) {
  const auto colon = r.find(':');
  auto parse = [&](const std::string& s) {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || p != s.data() + s.size())
      throw ValidationError("--range expects a:b with unsigned integers, got '" + r + "'");
    return v;
  };
  if (colon == std::string::npos) throw ValidationError("--range expects a:b, got '" + r + "'");
  const auto lo = parse(r.substr(0, colon)), hi = parse(r.substr(colon + 1));
  require(lo < hi, "--range a:b needs a < b");
  require(hi <= n, "--range end " + std::to_string(hi) + " exceeds N = " + std::to_string(n));
  std::vector<std::size_t> out;
  for (auto i = lo; i < hi; ++i) out.push_back(i);
  return out;
}

std::vector<double> normalized(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  std::vector<double> out;
  for (double x : v) out.push_back(s != 0.0 ? x / s : std::nan(""));
  return out;
}

std::vector<double> scores_or_nan(const ExplanationReport& r) {
  if (r.scores.degenerate) return std::vector<double>(r.feature_names.size(), std::nan(""));
  return r.scores.first_order;
}

int cmd_explain(const ExplainArgs& a) {
  const auto seed = resolve_seed(a.c);
  require(!(a.mean && a.mode), "--mean and --mode are mutually exclusive");
  require(!(a.index && !a.range.empty()), "--index and --range are mutually exclusive");
  require(a.index || !a.range.empty(), "one of --index or --range is required");

  const auto data = in_stage("ingest", [&] { return load_csv(a.data, a.label); });
  const auto model = in_stage("model", [&] { return load_model(a.model); });
  in_stage("input", [&] {
    require(model.feature_names() == data.feature_names,
            "model features do not match data columns");
  });
  const auto indices = in_stage("input", [&] {
    if (a.index) {
      require(*a.index < data.size(), "--index " + std::to_string(*a.index) +
                                          " out of range (N = " + std::to_string(data.size()) + ")");
      return std::vector<std::size_t>{*a.index};
    }
    return parse_range(a.range, data.size());
  });

  const FeaturePriors priors = in_stage("priors", [&] {
    if (!a.priors.empty()) {
      const auto spec = load_synthetic_spec(a.priors);
      require(spec.feature_specs.size() == data.dim(), "--priors feature count does not match data");
      return priors_from_specs(spec.feature_specs);
    }
    return fit_priors(data, a.prior_k_max, derive_seed(seed, 4));
  });

  ExplainSettings s;
  s.seed = seed;
  s.np = a.np;
  s.order = a.order;
  s.n_runs = a.runs;
  s.label_k_max = a.k_max;
  s.degeneracy_tau = a.tau;
  s.mean_prior = a.mean_prior == "feature" ? MeanReferencePrior::feature_priors
                                           : MeanReferencePrior::moment_matched;
  const std::string bg = a.background.empty() ? (a.priors.empty() ? "dataset" : "prior") : a.background;
  s.background = bg == "prior" ? BackgroundSource::prior_sampled : BackgroundSource::dataset_resampled;
  if (!a.modes_file.empty()) {
    s.label_mixture = in_stage("modes-file", [&] {
      const auto doc = read_json(a.modes_file);
      require(doc.contains("mixture"), "modes file has no 'mixture' entry");
      try {
        auto g = doc.at("mixture").get<GaussianMixture1D>();
        g.validate();
        return g;
      } catch (const json::exception& e) {
        throw ValidationError(std::string("modes file: ") + e.what());
      }
    });
  }
  if (a.runs) require(*a.runs >= 1, "--runs must be at least 1");

  const ReferenceRequest request =
      a.mean ? ReferenceRequest::mean() : ReferenceRequest::mode(a.mode.value_or(0));
  const auto ctx = prepare_explanation(model, priors, data, request, s);

  // The chart compares the mode and mean paths, so the other reference is prepared too.
  std::optional<ExplainContext> companion;
  if (a.svg) {
    auto cs = s;
    if (ctx.label_mixture) cs.label_mixture = ctx.label_mixture;
    companion = prepare_explanation(model, priors, data,
                                    a.mean ? ReferenceRequest::mode(0) : ReferenceRequest::mean(), cs);
  }

  ensure_out_dir(a.c);
  std::ostringstream csv;
  csv << kReportCsvHeader << '\n';
  std::cout << "explain: reference " << to_string(request.kind);
  if (request.kind == ReferenceKind::mode) std::cout << " " << request.mode_index;
  std::cout << " (y_ref = " << ctx.reference.y_ref << "), " << indices.size() << " observation(s)\n";
  for (std::size_t i : indices) {
    const auto report = explain_observation(ctx, i);
    write_json(out_path(a.c, "report_" + std::to_string(i) + ".json"), report);
    write_report_csv_rows(csv, report);

    std::cout << "  #" << i << " y = " << report.y_obs << ", z = " << report.z;
    if (report.z_m) std::cout << ", z_m = " << *report.z_m;
    if (report.scores.degenerate) {
      std::cout << ", degenerate\n";
    } else {
      std::cout << ", scores";
      for (double v : report.scores.first_order) std::cout << " " << v;
      std::cout << "\n";
    }

    if (companion) {
      const auto other = explain_observation(*companion, i);
      const auto& mode_r = a.mean ? other : report;
      const auto& mean_r = a.mean ? report : other;
      const std::vector<BarSeries> series{
          {"mode score", "#1f77b4", scores_or_nan(mode_r)},
          {"mean score", "#ff7f0e", scores_or_nan(mean_r)},
          {"SHAP share", "#2ca02c", normalized(report.shap.values)}};
      std::ostringstream title;
      title << "Observation " << i << " (y = " << detail::format_double(report.y_obs) << ")";
      write_text(out_path(a.c, "report_" + std::to_string(i) + ".svg"),
                 grouped_bar_chart_svg(title.str(), data.feature_names, series));
    }
  }
  write_text(out_path(a.c, "reports.csv"), csv.str());

  json opts{{"data", a.data},   {"label", a.label},     {"model", a.model},
            {"np", a.np},       {"seed", seed},         {"prior-k-max", a.prior_k_max},
            {"order", a.order}, {"background", bg},     {"k-max", a.k_max},
            {"tau", a.tau},     {"mean-prior", a.mean_prior}, {"svg", a.svg}};
  if (a.mean) opts["mean"] = true;
  else opts["mode"] = request.mode_index;
  if (a.index) opts["index"] = *a.index;
  else opts["range"] = a.range;
  if (a.runs) opts["runs"] = *a.runs;
  if (!a.priors.empty()) opts["priors"] = a.priors;
  if (!a.modes_file.empty()) opts["modes-file"] = a.modes_file;
  echo_config(a.c, "explain", opts);
  return 0;
}

// ---- compare

struct CompareArgs {
  Common c;
  std::vector<std::string> reports;
};

constexpr const char* kCompareHeader =
    "report,observation_id,reference_kind,mode_index,y_obs,y_ref,z,z_m,degenerate,feature,score,"
    "shap,shap_share,score_minus_shap_share";

std::string num(const json& v) {
  return v.is_number() ? detail::format_double(v.get<double>()) : std::string();
}

int cmd_compare(const CompareArgs& a) {
  std::ostringstream csv;
  csv << kCompareHeader << '\n';
  std::size_t rows = 0;
  for (const auto& path : a.reports) {
    const auto r = in_stage("ingest", [&] { return read_json(path); });
    in_stage("report", [&] {
      try {
        require(r.value("schema", 0) == kReportSchema, "'" + path + "' is not a report (schema)");
        const auto names = r.at("feature_names").get<std::vector<std::string>>();
        const auto shap = r.at("shap").at("values").get<std::vector<double>>();
        const auto& scores = r.at("scores");
        const bool degenerate = scores.at("degenerate").get<bool>();
        double psum = 0.0;
        for (double v : shap) psum += v;
        const std::string name = fs::path(path).filename().string();
        const auto& mi = r.at("mode_index");
        for (std::size_t i = 0; i < names.size(); ++i) {
          const double share = psum != 0.0 ? shap.at(i) / psum : std::nan("");
          std::string score, diff;
          if (!degenerate) {
            const double sc = scores.at("first_order").at(i).get<double>();
            score = detail::format_double(sc);
            if (std::isfinite(share)) diff = detail::format_double(sc - share);
          }
          csv << name << ',' << r.at("observation_id").get<std::size_t>() << ','
              << r.at("reference_kind").get<std::string>() << ','
              << (mi.is_number() ? std::to_string(mi.get<std::size_t>()) : "") << ','
              << num(r.at("y_obs")) << ',' << num(r.at("y_ref")) << ',' << num(r.at("z")) << ','
              << num(r.at("z_m")) << ',' << (degenerate ? "true" : "false") << ',' << names[i] << ','
              << score << ',' << detail::format_double(shap.at(i)) << ','
              << (std::isfinite(share) ? detail::format_double(share) : "") << ',' << diff << '\n';
          ++rows;
        }
      } catch (const json::exception& e) {
        throw IngestionError("'" + path + "': " + e.what());
      }
    });
  }
  ensure_out_dir(a.c);
  write_text(out_path(a.c, "comparison.csv"), csv.str());
  echo_config(a.c, "compare", json{{"reports", a.reports}});
  std::cout << "compare: " << a.reports.size() << " report(s), " << rows << " row(s) in comparison.csv\n";
  return 0;
}

void add_common(CLI::App* sub, Common& c, bool with_seed = true) {
  sub->add_option("--out", c.out, "Output directory")->capture_default_str();
  if (with_seed) sub->add_option("--seed", c.seed, "Master seed (fallback: DEVEXPLAIN_SEED, then 0)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Explain label deviations from the mean or a mode of the label distribution"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic dataset from a mixture spec");
  s->add_option("--spec", synth.spec, "Synthetic spec JSON")->required();
  s->add_option("--n", synth.n, "Number of rows")->capture_default_str()->check(CLI::PositiveNumber);
  s->add_option("--append", synth.append, "Extra row 'x0,...,y' (repeatable)");
  add_common(s, synth.c);

  FitArgs fit;
  auto* f = app.add_subcommand("fit", "Fit a regression model");
  f->add_option("--data", fit.data, "CSV dataset")->required();
  f->add_option("--label", fit.label, "Label column")->capture_default_str();
  f->add_option("--model", fit.model, "Model kind")
      ->capture_default_str()
      ->check(CLI::IsMember({"linear", "gbt"}));
  f->add_option("--n-trees", fit.gbt.n_trees, "GBT trees")->capture_default_str();
  f->add_option("--max-depth", fit.gbt.max_depth, "GBT tree depth")->capture_default_str();
  f->add_option("--learning-rate", fit.gbt.learning_rate, "GBT learning rate")->capture_default_str();
  f->add_option("--min-samples-leaf", fit.gbt.min_samples_leaf, "GBT minimum leaf size")
      ->capture_default_str();
  f->add_option("--train-fraction", fit.train_fraction, "Training fraction; 1 uses all rows")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  add_common(f, fit.c);

  ModesArgs mo;
  auto* m = app.add_subcommand("modes", "Fit a label mixture and list its modes");
  m->add_option("--data", mo.data, "CSV dataset")->required();
  m->add_option("--label", mo.label, "Label column")->capture_default_str();
  m->add_option("--k-max", mo.k_max, "Largest mixture size tried")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  add_common(m, mo.c);

  ExplainArgs ex;
  auto* e = app.add_subcommand("explain", "Explain observations against the mean or a mode");
  e->add_option("--data", ex.data, "CSV dataset")->required();
  e->add_option("--label", ex.label, "Label column")->capture_default_str();
  e->add_option("--model", ex.model, "Model JSON from 'fit'")->required();
  auto* mean_flag = e->add_flag("--mean", ex.mean, "Explain against the label mean");
  e->add_option("--mode", ex.mode, "Explain against mode M (0 = dominant)")->excludes(mean_flag);
  e->add_option("--index", ex.index, "Observation index");
  e->add_option("--range", ex.range, "Half-open index range a:b");
  e->add_option("--np", ex.np, "Background size (0 = default)")->capture_default_str();
  e->add_option("--runs", ex.runs, "MAP search runs (default from the restart bound)");
  e->add_option("--priors", ex.priors, "Feature prior spec JSON (default: fit per column)");
  e->add_option("--prior-k-max", ex.prior_k_max, "Largest per-feature mixture when fitting priors")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  e->add_option("--order", ex.order, "Decomposition order")
      ->capture_default_str()
      ->check(CLI::IsMember({1, 2}));
  e->add_option("--background", ex.background, "Background source (default: prior with --priors)")
      ->check(CLI::IsMember({"prior", "dataset"}));
  e->add_option("--k-max", ex.k_max, "Largest label mixture size")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  e->add_option("--tau", ex.tau, "Degeneracy threshold in label std units")->capture_default_str();
  e->add_option("--mean-prior", ex.mean_prior, "Prior for the mean reference")
      ->capture_default_str()
      ->check(CLI::IsMember({"moment", "feature"}));
  e->add_option("--modes-file", ex.modes_file, "Label mixture from 'modes'");
  e->add_flag("--svg", ex.svg, "Write bar charts (mode score, mean score, SHAP share)");
  add_common(e, ex.c);

  CompareArgs cmp;
  auto* c = app.add_subcommand("compare", "Tabulate reports: z vs z_m, score vs SHAP");
  c->add_option("reports", cmp.reports, "Report JSON files");
  add_common(c, cmp.c, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForVersion& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return static_cast<int>(ErrorKind::validation);
  }

  const auto* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  const Common* common = name == "synth"     ? &synth.c
                         : name == "fit"     ? &fit.c
                         : name == "modes"   ? &mo.c
                         : name == "explain" ? &ex.c
                                             : &cmp.c;
  int code = 0;
  std::string note;
  try {
    if (name == "synth") code = cmd_synth(synth);
    else if (name == "fit") code = cmd_fit(fit);
    else if (name == "modes") code = cmd_modes(mo);
    else if (name == "explain") code = cmd_explain(ex);
    else code = cmd_compare(cmp);
  } catch (const Error& err) {
    std::cerr << "devexplain " << name << ": error: " << err.what() << "\n";
    code = err.exit_code();
    note = err.what();
  } catch (const std::exception& err) {
    std::cerr << "devexplain " << name << ": internal error: " << err.what() << "\n";
    code = static_cast<int>(ErrorKind::internal);
    note = err.what();
  }
  append_log(*common, name, code, note);
  return code;
}
