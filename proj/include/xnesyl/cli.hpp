#pragma once

// Command-line front end: gen | train | eval | explain | report.
// Exit codes: 0 success, 2 usage, 3 input validation, 4 numerical failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "xnesyl/classify.hpp"
#include "xnesyl/datagen.hpp"
#include "xnesyl/error.hpp"
#include "xnesyl/kg.hpp"
#include "xnesyl/percept.hpp"
#include "xnesyl/shap.hpp"
#include "xnesyl/train.hpp"
#include "xnesyl/xai.hpp"

namespace xnesyl::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kValidation = 3, kNumerical = 4 };

namespace fs = std::filesystem;

inline std::string read_file(const fs::path& path, const std::string& flag) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(flag + ": cannot read '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw ValidationError("failed writing '" + path.string() + "'");
}

inline nlohmann::json read_json(const fs::path& path, const std::string& flag) {
  try {
    return nlohmann::json::parse(read_file(path, flag));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(flag + ": malformed JSON in '" + path.string() + "': " + e.what());
  }
}

inline KnowledgeGraph load_kg_file(const std::string& path) {
  const auto text = read_file(path, "--kg");
  try {
    return load_kg(text);
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("--kg ") + path + ": " + e.what());
  }
}

inline Dataset load_data_file(const std::string& path, const KnowledgeGraph& kg) {
  try {
    return read_dataset(path, kg);
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("--data ") + path + ": " + e.what());
  }
}

// --seed, else XNESYL_SEED, else 0.
inline std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("XNESYL_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument(env);
      return v;
    } catch (const std::exception&) {
      throw UsageError(std::string("XNESYL_SEED: not an unsigned integer: '") + env + "'");
    }
  }
  return 0;
}

struct Checkpoints {
  TrainConfig config;
  PartDetector detector;
  MLPClassifier classifier;
};

inline Checkpoints load_checkpoints(const fs::path& dir, const KnowledgeGraph& kg) {
  const auto report = read_json(dir / "metrics.json", "--checkpoints");
  if (!report.contains("config")) throw ValidationError("--checkpoints: metrics.json has no config echo");
  try {
    return {config_from_json(report["config"]), detector_from_json(read_json(dir / "detector.json", "--checkpoints"), kg),
            classifier_from_json(read_json(dir / "classifier.json", "--checkpoints"), kg)};
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("--checkpoints ") + dir.string() + ": " + e.what());
  }
}

inline BackgroundSet background_for(const Checkpoints& ck, const Dataset& train) {
  return make_background(aggregate_all(ck.detector, train, ck.config.aggregation), ck.config);
}

inline void write_instance_csv(std::ostream& os, const KnowledgeGraph& kg, const Eigen::VectorXd& v,
                               const ShapMatrix& shap) {
  os << "part,feature_value,shap_value,class\n";
  os.precision(17);
  for (Eigen::Index k = 0; k < shap.rows(); ++k) {
    for (Eigen::Index j = 0; j < shap.cols(); ++j) {
      os << '"' << kg.part_classes()[static_cast<std::size_t>(j)] << "\"," << v[j] << ',' << shap(k, j) << ",\""
         << kg.object_classes()[static_cast<std::size_t>(k)] << "\"\n";
    }
  }
}

struct GenArgs {
  std::string kg, out, regions = "2:6";
  std::size_t count = 1000;
  std::optional<std::uint64_t> seed;
  double noise = 0.0, sep = 6.0;
  int dim = 8;
};

inline int cmd_gen(const GenArgs& a, std::ostream& out) {
  const auto kg = load_kg_file(a.kg);
  GeneratorConfig cfg;
  cfg.seed = resolve_seed(a.seed);
  cfg.noise_rate = a.noise;
  cfg.feature_dim = a.dim;
  cfg.separation = a.sep;
  const auto colon = a.regions.find(':');
  try {
    if (colon == std::string::npos) throw std::invalid_argument(a.regions);
    std::size_t used = 0;
    cfg.regions_min = std::stoi(a.regions.substr(0, colon), &used);
    cfg.regions_max = std::stoi(a.regions.substr(colon + 1), &used);
  } catch (const std::exception&) {
    throw UsageError("--regions: expected LO:HI, got '" + a.regions + "'");
  }
  try {
    cfg.validate();
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }
  if (a.count < 1) throw UsageError("--count must be >= 1");
  const auto data = generate_dataset(kg, cfg, a.count);
  write_dataset(a.out, kg, data);
  out << "wrote " << data.size() << " instances to " << a.out << "\n";
  return kOk;
}

struct TrainArgs {
  std::string kg, data, out_dir, mode = "standard", scheme, agg = "frcnn", shap = "exact", ged = "symmetric";
  int epochs_det = 10, epochs_clf = 200;
  double lr_det = 0.05, lr_clf = 0.05, h = kDefaultBalance, s = kDefaultDetectionThreshold,
         v_threshold = kDefaultValueThreshold;
  std::size_t bg_size = 100, kernel_samples = 2048;
  std::optional<std::uint64_t> seed;
  bool warm_start = false;
};

inline TrainConfig make_config(const TrainArgs& a) {
  TrainConfig cfg;
  cfg.seed = resolve_seed(a.seed);
  cfg.mode = a.mode == "standard" ? TrainMode::kStandard : TrainMode::kShapBackprop;
  if (!(a.h > 0.0)) throw UsageError("--h must be > 0");
  if (!a.scheme.empty()) {
    if (cfg.mode == TrainMode::kStandard) throw UsageError("--scheme requires --mode shap-backprop");
    cfg.scheme = WeightScheme::parse(a.scheme, a.h);
  } else if (cfg.mode == TrainMode::kShapBackprop) {
    throw UsageError("--mode shap-backprop requires --scheme");
  }
  cfg.aggregation = parse_aggregation(a.agg);
  cfg.det_epochs = a.epochs_det;
  cfg.clf_epochs = a.epochs_clf;
  cfg.det_lr = a.lr_det;
  cfg.clf_lr = a.lr_clf;
  cfg.s = a.s;
  cfg.v_threshold = a.v_threshold;
  cfg.bg_size = a.bg_size;
  cfg.shap = a.shap == "exact" ? ShapMode::kExact : ShapMode::kKernel;
  cfg.kernel_samples = a.kernel_samples;
  cfg.ged_mode = a.ged == "symmetric" ? GedMode::kSymmetric : GedMode::kOneSided;
  cfg.clf_warm_start = a.warm_start;
  cfg.validate();
  return cfg;
}

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
  const auto cfg = make_config(a);
  const auto kg = load_kg_file(a.kg);
  const auto splits = split_dataset(load_data_file(a.data, kg));
  if (splits.train.empty() || splits.test.empty()) throw ValidationError("--data: too few instances to split");
  const auto run = train(kg, splits, cfg);
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  write_file(dir / "detector.json", detector_to_json(run.detector, kg).dump(2) + "\n");
  write_file(dir / "classifier.json", classifier_to_json(run.classifier, kg).dump(2) + "\n");
  const auto report = report_to_json(cfg, run).dump(2) + "\n";
  write_file(dir / "metrics.json", report);
  write_file(dir / "shap_ged.json", to_json(run.metrics.ged).dump(2) + "\n");
  out << report;
  return kOk;
}

struct EvalArgs {
  std::string kg, data, checkpoints;
};

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto kg = load_kg_file(a.kg);
  const auto ck = load_checkpoints(a.checkpoints, kg);
  const auto splits = split_dataset(load_data_file(a.data, kg));
  if (splits.train.empty() || splits.test.empty()) throw ValidationError("--data: too few instances to split");
  const auto bg = background_for(ck, splits.train);
  const auto metrics = evaluate(ck.detector, ck.classifier, splits.test, kg, bg, ck.config);
  const nlohmann::json doc = {{"metrics", metrics_to_json(metrics)}, {"shap_ged", to_json(metrics.ged)}};
  const auto text = doc.dump(2) + "\n";
  write_file(fs::path(a.checkpoints) / "eval.json", text);

  // Per-class summary of test-split attributions for external plotting.
  const auto features = aggregate_all(ck.detector, splits.test, ck.config.aggregation);
  const auto shap = explain_all(ck.classifier, features, bg, ck.config);
  std::ofstream csv(fs::path(a.checkpoints) / "shap_summary.csv", std::ios::binary | std::ios::trunc);
  for (std::size_t k = 0; k < kg.num_objects(); ++k) {
    write_summary_csv(csv, kg, shap_summary(shap, features, static_cast<Eigen::Index>(k)),
                      static_cast<Eigen::Index>(k), k == 0);
  }
  out << text;
  return kOk;
}

struct ExplainArgs {
  std::string kg, checkpoints, instance_id, data, fixture, out_dir = ".";
  double s = kDefaultDetectionThreshold;
  bool s_given = false;
};

inline int cmd_explain(const ExplainArgs& a, std::ostream& out) {
  const auto kg = load_kg_file(a.kg);
  Eigen::VectorXd v;
  ShapMatrix shap;
  std::string id = a.instance_id;
  double s = a.s;
  if (!a.fixture.empty()) {
    // Precomputed feature vector and SHAP matrix: {"id", "features": [n], "shap": [m][n]}.
    const auto fx = read_json(a.fixture, "--fixture");
    try {
      if (id.empty()) id = fx.at("id").get<std::string>();
      const auto f = fx.at("features").get<std::vector<double>>();
      const auto rows = fx.at("shap").get<std::vector<std::vector<double>>>();
      if (f.size() != kg.num_parts() || rows.size() != kg.num_objects()) {
        throw ValidationError("--fixture: dimensions do not match the knowledge graph");
      }
      v = Eigen::Map<const Eigen::VectorXd>(f.data(), static_cast<Eigen::Index>(f.size()));
      shap.resize(static_cast<Eigen::Index>(rows.size()), v.size());
      for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k].size() != f.size()) throw ValidationError("--fixture: ragged SHAP matrix");
        for (std::size_t j = 0; j < f.size(); ++j) shap(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = rows[k][j];
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("--fixture: ") + e.what());
    }
  } else {
    if (a.checkpoints.empty() || a.data.empty() || id.empty()) {
      throw UsageError("explain needs --checkpoints, --data and --instance-id (or --fixture)");
    }
    const auto ck = load_checkpoints(a.checkpoints, kg);
    if (!a.s_given) s = ck.config.s;
    const auto data = load_data_file(a.data, kg);
    const auto it = std::find_if(data.begin(), data.end(), [&](const SceneInstance& i) { return i.id == id; });
    if (it == data.end()) throw ValidationError("--instance-id: no instance '" + id + "' in " + a.data);
    const auto splits = split_dataset(data);
    const auto bg = background_for(ck, splits.train);
    v = aggregate(detect(ck.detector, *it), ck.config.aggregation).values;
    shap = explain_all(ck.classifier, {v}, bg, ck.config).front();
  }

  const auto sag = build_sag(v, shap, s);
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  std::ostringstream dot;
  write_sag_dot(dot, sag, kg, id);
  write_file(dir / (id + ".dot"), dot.str());
  write_file(dir / (id + ".sag.json"), sag_to_json(sag, kg).dump(2) + "\n");
  std::ostringstream csv;
  write_instance_csv(csv, kg, v, shap);
  write_file(dir / (id + ".shap.csv"), csv.str());
  const nlohmann::json summary = {{"id", id},
                                  {"edges", sag_to_json(sag, kg)["edges"]},
                                  {"shap_ged", shap_ged(sag, kg, GedMode::kSymmetric)},
                                  {"shap_ged_one_sided", shap_ged(sag, kg, GedMode::kOneSided)}};
  out << summary.dump(2) << "\n";
  return kOk;
}

struct ReportArgs {
  std::string runs, out;
};

inline int cmd_report(const ReportArgs& a, std::ostream& out) {
  const fs::path root(a.runs);
  if (!fs::is_directory(root)) throw ValidationError("--runs: '" + a.runs + "' is not a directory");
  std::vector<fs::path> dirs;
  if (fs::exists(root / "metrics.json")) dirs.push_back(root);
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "metrics.json")) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw ValidationError("--runs: no run directories with metrics.json under '" + a.runs + "'");

  std::ostringstream csv;
  csv.precision(17);
  csv << "run,mode,scheme,agg,seed,part_macro_accuracy,accuracy,mean_shap_ged\n";
  for (const auto& d : dirs) {
    const auto report = read_json(d / "metrics.json", "--runs");
    try {
      const auto cfg = config_from_json(report.at("config"));
      const auto m = metrics_from_json(report.at("metrics"));
      csv << d.filename().string() << ',' << (cfg.mode == TrainMode::kStandard ? "standard" : "shap-backprop") << ','
          << (cfg.scheme ? cfg.scheme->name() : "none") << ',' << to_string(cfg.aggregation) << ',' << cfg.seed << ','
          << m.part_macro_accuracy << ',' << m.accuracy << ',' << m.mean_shap_ged << '\n';
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("--runs: malformed " + (d / "metrics.json").string() + ": " + e.what());
    }
  }
  if (!a.out.empty()) write_file(a.out, csv.str());
  out << csv.str();
  return kOk;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Part-based classification aligned with expert knowledge graphs", "xnesyl"};
  app.require_subcommand(1);
  app.set_help_flag("--help", "Print this help message and exit");  // -h is taken by train's --h

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic scene dataset (JSON Lines)");
  g->add_option("--kg", gen.kg, "Knowledge graph JSON")->required();
  g->add_option("--out", gen.out, "Output dataset path")->required();
  g->add_option("--count", gen.count, "Number of instances");
  g->add_option("--seed", gen.seed, "Random seed (falls back to XNESYL_SEED)");
  g->add_option("--noise", gen.noise, "Probability of drawing an atypical part")->check(CLI::Range(0.0, 1.0));
  g->add_option("--dim", gen.dim, "Region feature dimension");
  g->add_option("--sep", gen.sep, "Minimum distance between part means");
  g->add_option("--regions", gen.regions, "Regions per instance, LO:HI");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train detector and classifier");
  t->add_option("--kg", tr.kg)->required();
  t->add_option("--data", tr.data)->required();
  t->add_option("--out-dir", tr.out_dir)->required();
  t->add_option("--mode", tr.mode)->check(CLI::IsMember({"standard", "shap-backprop"}));
  t->add_option("--scheme", tr.scheme)
      ->check(CLI::IsMember({"linear-bbox", "exp-bbox", "linear-instance", "exp-instance"}));
  t->add_option("--agg", tr.agg)->check(CLI::IsMember({"frcnn", "retina"}));
  t->add_option("--epochs-det", tr.epochs_det)->check(CLI::PositiveNumber);
  t->add_option("--epochs-clf", tr.epochs_clf)->check(CLI::PositiveNumber);
  t->add_option("--lr-det", tr.lr_det)->check(CLI::PositiveNumber);
  t->add_option("--lr-clf", tr.lr_clf)->check(CLI::PositiveNumber);
  t->add_option("--h", tr.h);
  t->add_option("--s", tr.s);
  t->add_option("--v-threshold", tr.v_threshold);
  t->add_option("--shap", tr.shap)->check(CLI::IsMember({"exact", "kernel"}));
  t->add_option("--kernel-samples", tr.kernel_samples);
  t->add_option("--bg-size", tr.bg_size)->check(CLI::PositiveNumber);
  t->add_option("--ged-mode", tr.ged)->check(CLI::IsMember({"symmetric", "one-sided"}));
  t->add_flag("--warm-start", tr.warm_start, "Warm-start the per-epoch classifier in shap-backprop mode");
  t->add_option("--seed", tr.seed);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate checkpoints on the test split");
  e->add_option("--kg", ev.kg)->required();
  e->add_option("--data", ev.data)->required();
  e->add_option("--checkpoints", ev.checkpoints)->required();

  ExplainArgs ex;
  auto* x = app.add_subcommand("explain", "Emit the SHAP attribution graph of one instance");
  x->add_option("--kg", ex.kg)->required();
  x->add_option("--checkpoints", ex.checkpoints);
  x->add_option("--instance-id", ex.instance_id);
  x->add_option("--data", ex.data, "Dataset containing the instance");
  x->add_option("--fixture", ex.fixture, "Precomputed feature vector and SHAP matrix (JSON)");
  x->add_option("--out-dir", ex.out_dir);
  auto* s_opt = x->add_option("--s", ex.s, "Detection threshold");

  ReportArgs rp;
  auto* r = app.add_subcommand("report", "Tabulate metrics of several runs as CSV");
  r->add_option("--runs", rp.runs)->required();
  r->add_option("--out", rp.out, "Also write the CSV here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& pe) {
    err << "usage error: " << pe.what() << "\n";
    return kUsage;
  }

  try {
    if (g->parsed()) return cmd_gen(gen, out);
    if (t->parsed()) return cmd_train(tr, out);
    if (e->parsed()) return cmd_eval(ev, out);
    if (x->parsed()) {
      ex.s_given = s_opt->count() > 0;
      return cmd_explain(ex, out);
    }
    if (r->parsed()) return cmd_report(rp, out);
  } catch (const UsageError& ue) {
    err << "usage error: " << ue.what() << "\n";
    return kUsage;
  } catch (const NumericalError& ne) {
    err << "numerical error: " << ne.what() << "\n";
    return kNumerical;
  } catch (const ValidationError& ve) {
    err << "validation error: " << ve.what() << "\n";
    return kValidation;
  } catch (const fs::filesystem_error& fe) {
    err << "validation error: " << fe.what() << "\n";
    return kValidation;
  }
  return kUsage;
}

}  // namespace xnesyl::cli
