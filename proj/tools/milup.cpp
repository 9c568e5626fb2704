// milup: synthesize data, train MIL-regularized uplift models, run sweeps and
// ablations, evaluate checkpoints and export uplift curves.

#include <openssl/evp.h>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "milup/data.hpp"
#include "milup/diagnostics.hpp"
#include "milup/error.hpp"
#include "milup/metrics.hpp"
#include "milup/models.hpp"
#include "milup/report.hpp"
#include "milup/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "milup 1.0.0";
constexpr int kExitError = 1;
constexpr int kExitPartial = 3;

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw milup::IoError("cannot read '" + path.string() + "'");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return hex.str();
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw milup::IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

fs::path default_out_dir(const std::string& command) {
  const char* root = std::getenv("MILUP_OUTPUT_ROOT");
  return fs::path(root && *root ? root : "milup_out") / command;
}

// ---------------------------------------------------------------------------
// Shared option groups

struct SynthOptions {
  milup::SynthConfig cfg;

  void bind(CLI::App* app, const std::string& prefix) {
    app->add_option("--" + prefix + "n", cfg.n, "Rows to generate");
    app->add_option("--" + prefix + "d", cfg.d, "Feature count (>= 3)");
    app->add_option("--" + prefix + "base-rate", cfg.base_rate, "Control response at x1 = 0");
    app->add_option("--" + prefix + "slope", cfg.slope, "Control response slope in x1");
    app->add_option("--" + prefix + "tau-max", cfg.tau_max, "Largest individual effect");
    app->add_option("--" + prefix + "treated-fraction", cfg.treated_fraction,
                    "Treatment assignment probability");
    app->add_option("--" + prefix + "seed", cfg.seed, "Generator seed");
  }

  json to_json() const {
    return {{"n", cfg.n},           {"d", cfg.d},         {"base_rate", cfg.base_rate},
            {"slope", cfg.slope},   {"tau_max", cfg.tau_max},
            {"treated_fraction", cfg.treated_fraction}, {"seed", cfg.seed}};
  }
};

struct DataOptions {
  fs::path data, train, valid, test;
  std::vector<double> split{0.7, 0.15, 0.15};
  std::uint64_t split_seed = 0;
  std::vector<std::string> features;
  std::string treatment_col = "treatment";
  std::string outcome_col = "outcome";
  char delimiter = ',';
  SynthOptions synth;

  void bind(CLI::App* app) {
    app->add_option("--data", data, "Table to split into train/valid/test");
    app->add_option("--train", train, "Training table (with --valid and --test)");
    app->add_option("--valid", valid, "Validation table");
    app->add_option("--test", test, "Test table");
    app->add_option("--split", split, "Train,valid,test fractions for --data")
        ->delimiter(',')
        ->expected(3);
    app->add_option("--split-seed", split_seed, "Seed for the stratified split");
    app->add_option("--features", features, "Feature columns (default: all remaining)")
        ->delimiter(',');
    app->add_option("--treatment-col", treatment_col, "Treatment column name");
    app->add_option("--outcome-col", outcome_col, "Outcome column name");
    app->add_option("--delimiter", delimiter, "Field delimiter");
    synth.bind(app, "synth-");
  }

  milup::TableSchema schema() const {
    milup::TableSchema s;
    s.feature_columns = features;
    s.treatment_column = treatment_col;
    s.outcome_column = outcome_col;
    s.delimiter = delimiter;
    return s;
  }

  milup::SplitFractions fractions() const {
    if (split.size() != 3) throw milup::ConfigError("--split needs three fractions");
    return {split[0], split[1], split[2]};
  }

  // Loads or generates the splits and describes the source for the manifest.
  milup::DataSplits load(json& source) const {
    const bool explicit_splits = !train.empty() || !valid.empty() || !test.empty();
    if (explicit_splits) {
      if (train.empty() || valid.empty() || test.empty() || !data.empty()) {
        throw milup::ConfigError("give either --data or all of --train, --valid and --test");
      }
      source = {{"kind", "files"},
                {"train", {{"path", train.string()}, {"sha256", sha256_file(train)}}},
                {"valid", {{"path", valid.string()}, {"sha256", sha256_file(valid)}}},
                {"test", {{"path", test.string()}, {"sha256", sha256_file(test)}}}};
      return {milup::load_table(train, schema()), milup::load_table(valid, schema()),
              milup::load_table(test, schema()), false};
    }
    milup::Dataset ds;
    if (!data.empty()) {
      source = {{"kind", "file"}, {"path", data.string()}, {"sha256", sha256_file(data)}};
      ds = milup::load_table(data, schema());
    } else {
      source = {{"kind", "synthetic"}, {"synth", synth.to_json()}};
      ds = milup::generate_synthetic(synth.cfg);
    }
    source["split"] = split;
    source["split_seed"] = split_seed;
    return milup::split(ds, fractions(), split_seed);
  }
};

struct TrainOptions {
  milup::TrainConfig cfg;
  std::string model = "tarnet";
  std::string mode = "clustered";
  std::size_t warmup = 0;
  bool warmup_given = false;
  std::size_t runs = 5;
  std::size_t jobs = 1;
  fs::path out_dir;
  fs::path config_file;

  void bind(CLI::App* app) {
    app->add_option("--model", model, "tm, tarnet, ddr or sdr");
    app->add_option("--hidden", cfg.hidden_sizes, "Hidden layer widths")->delimiter(',');
    app->add_option("--lr", cfg.learning_rate, "Adam learning rate");
    app->add_option("--alpha", cfg.alpha, "MIL loss weight");
    app->add_option("--batch-size", cfg.batch_size, "Mini-batch size");
    app->add_option("--bag-size", cfg.bag_size, "Instances per bag");
    app->add_option("--max-steps", cfg.max_steps, "Optimizer steps");
    app->add_option("--warmup-steps", warmup, "Base-only steps (default 20% of max-steps)")
        ->each([this](const std::string&) { warmup_given = true; });
    app->add_option("--eval-every", cfg.eval_every, "Steps between validation evaluations");
    app->add_option("--patience", cfg.patience, "Evaluations without improvement before stopping");
    app->add_option("--seed", cfg.seed, "Seed of the first run");
    app->add_option("--mode", mode, "Bag formation: clustered or random");
    app->add_flag("--standardize,!--no-standardize", cfg.standardize,
                  "Standardize features on the training split");
    app->add_option("--base-weight", cfg.base_weight, "Weight of the base loss");
    app->add_option("--points", cfg.n_points, "Uplift curve grid size");
    app->add_option("--runs", runs, "Repetitions with consecutive seeds");
    app->add_option("--jobs", jobs, "Concurrent runs");
    app->add_option("--out-dir", out_dir, "Output directory");
    app->add_option("--config", config_file, "Flat key=value file supplying any flag");
  }

  void resolve(const std::string& command) {
    cfg.kind = milup::parse_model_kind(model);
    cfg.mode = milup::parse_bag_mode(mode);
    if (warmup_given) cfg.warmup_steps = warmup;
    cfg.warmup_steps = cfg.resolved_warmup();
    if (runs == 0) throw milup::ConfigError("--runs must be at least 1");
    if (jobs == 0) jobs = 1;
    if (out_dir.empty()) out_dir = default_out_dir(command);
    cfg.validate();
  }
};

// Applies a flat key=value config file to `sub`; flags given on the command
// line take precedence.
void apply_config_file(CLI::App& app, CLI::App* sub, const fs::path& path) {
  if (path.empty()) return;
  std::ifstream in(path);
  if (!in) throw milup::IoError("cannot open config file '" + path.string() + "'");
  std::stringstream text;
  text << '[' << sub->get_name() << "]\n" << in.rdbuf();
  app.parse_from_stream(text);
}

json manifest_base(const std::string& command, int argc, char** argv) {
  json argv_json = json::array();
  for (int i = 0; i < argc; ++i) argv_json.push_back(argv[i]);
  return {{"command", command}, {"tool_version", kToolVersion}, {"argv", argv_json}};
}

// Writes run_<seed>/{report.json,curve.csv,model.ckpt} and aggregate.json.
json write_runs(const fs::path& dir, const milup::RepeatResult& rr) {
  json runs = json::array();
  for (const auto& run : rr.runs) {
    const fs::path run_dir = dir / ("run_" + std::to_string(run.seed));
    fs::create_directories(run_dir);
    if (run.result) {
      write_json(run_dir / "report.json", milup::to_json(run.result->report));
      milup::export_curve(run.result->test_curve, run_dir / "curve.csv");
      milup::save_checkpoint(run.result->model, run_dir / "model.ckpt");
      runs.push_back({{"seed", run.seed}, {"test_auuc", run.result->report.test_auuc}});
    } else {
      write_json(run_dir / "error.json", {{"seed", run.seed}, {"error", run.error}});
      runs.push_back({{"seed", run.seed}, {"error", run.error}});
    }
  }
  json agg = {{"runs", runs}, {"failures", rr.failures}};
  if (rr.aggregate) agg["aggregate"] = milup::to_json(*rr.aggregate);
  write_json(dir / "aggregate.json", agg);
  return agg;
}

std::string cell_text(const milup::RepeatResult& rr) {
  if (!rr.aggregate) return "failed";
  std::string s = rr.aggregate->formatted();
  if (rr.failures) s += " (" + std::to_string(rr.failures) + " failed)";
  return s;
}

void report_failures(const milup::RepeatResult& rr) {
  for (const auto& run : rr.runs) {
    if (!run.result) std::cerr << "run " << run.seed << " failed: " << run.error << '\n';
  }
}

// ---------------------------------------------------------------------------
// Commands

int cmd_synth(const SynthOptions& opts, const fs::path& out, int argc, char** argv) {
  if (out.empty()) throw milup::ConfigError("--out is required");
  json manifest = manifest_base("synth", argc, argv);
  manifest["config"] = opts.to_json();
  manifest["outputs"] = {out.string()};
  const fs::path manifest_path = fs::path(out.string() + ".manifest.json");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_json(manifest_path, manifest);

  const milup::Dataset ds = milup::generate_synthetic(opts.cfg);
  milup::write_table(ds, out);
  double mean_ite = 0.0;
  for (double v : *ds.true_ite) mean_ite += v;
  mean_ite /= static_cast<double>(ds.size());
  const double ate = milup::empirical_ate(ds);
  const double se = milup::ate_standard_error(ds);
  manifest["sha256"] = sha256_file(out);
  manifest["empirical_ate"] = ate;
  manifest["ate_se"] = se;
  manifest["mean_true_ite"] = mean_ite;
  write_json(manifest_path, manifest);
  std::cout << std::setprecision(6) << "rows: " << ds.size() << "\nempirical ATE: " << ate
            << " (se " << se << ")\nmean true ITE: " << mean_ite << '\n';
  return 0;
}

int cmd_train(const DataOptions& data, TrainOptions& opts, int argc, char** argv) {
  opts.resolve("train");
  json source;
  const milup::DataSplits splits = data.load(source);
  fs::create_directories(opts.out_dir);
  json manifest = manifest_base("train", argc, argv);
  manifest["config"] = milup::to_json(opts.cfg);
  manifest["runs"] = opts.runs;
  manifest["data"] = source;
  manifest["outputs"] = {"manifest.json", "resolved.conf", "aggregate.json", "run_<seed>/"};
  write_json(opts.out_dir / "manifest.json", manifest);
  std::ofstream(opts.out_dir / "resolved.conf") << milup::to_config_text(opts.cfg);

  const milup::RepeatResult rr = milup::repeat_runs(splits, opts.cfg, opts.runs, opts.jobs);
  write_runs(opts.out_dir, rr);
  report_failures(rr);
  std::cout << to_string(opts.cfg.kind) << " alpha=" << opts.cfg.alpha
            << " bag=" << opts.cfg.bag_size << " runs=" << opts.runs
            << "  AUUC (x0.001): " << cell_text(rr) << '\n';
  if (rr.failures == opts.runs) return kExitError;
  return rr.failures ? kExitPartial : 0;
}

template <typename T>
std::vector<T> dedup(const std::vector<T>& values, const char* what) {
  std::vector<T> out;
  std::set<T> seen;
  for (const T& v : values) {
    if (seen.insert(v).second) {
      out.push_back(v);
    } else {
      std::ostringstream msg;
      msg << "duplicate " << what << " value " << v << " ignored";
      milup::warn(msg.str());
    }
  }
  return out;
}

std::string format_number(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

int cmd_sweep(const DataOptions& data, TrainOptions& opts, std::vector<std::size_t> bag_sizes,
              std::vector<double> alphas, int argc, char** argv) {
  bag_sizes = dedup(bag_sizes, "bag size");
  alphas = dedup(alphas, "alpha");
  if (bag_sizes.empty() || alphas.empty()) throw milup::ConfigError("sweep grids must be non-empty");
  opts.resolve("sweep");
  for (std::size_t b : bag_sizes) {
    milup::TrainConfig probe = opts.cfg;
    probe.bag_size = b;
    probe.validate();
  }
  json source;
  const milup::DataSplits splits = data.load(source);
  fs::create_directories(opts.out_dir);
  json manifest = manifest_base("sweep", argc, argv);
  manifest["config"] = milup::to_json(opts.cfg);
  manifest["bag_sizes"] = bag_sizes;
  manifest["alphas"] = alphas;
  manifest["runs"] = opts.runs;
  manifest["data"] = source;
  write_json(opts.out_dir / "manifest.json", manifest);

  std::ofstream table(opts.out_dir / "sweep.csv");
  table << "sizes";
  for (double a : alphas) table << ",alpha=" << format_number(a);
  table << '\n';
  json cells = json::array();
  std::size_t failures = 0, total = 0;
  for (std::size_t b : bag_sizes) {
    table << opts.cfg.batch_size << '*' << b;
    for (double a : alphas) {
      milup::TrainConfig cfg = opts.cfg;
      cfg.bag_size = b;
      cfg.alpha = a;
      const fs::path cell_dir =
          opts.out_dir / ("bag" + std::to_string(b) + "_alpha" + format_number(a));
      fs::create_directories(cell_dir);
      const milup::RepeatResult rr = milup::repeat_runs(splits, cfg, opts.runs, opts.jobs);
      json agg = write_runs(cell_dir, rr);
      report_failures(rr);
      failures += rr.failures;
      total += opts.runs;
      table << ',' << cell_text(rr);
      cells.push_back({{"bag_size", b}, {"alpha", a}, {"result", agg}});
      std::cout << opts.cfg.batch_size << '*' << b << " alpha=" << a << ": " << cell_text(rr)
                << '\n';
    }
    table << '\n';
  }
  write_json(opts.out_dir / "sweep.json", {{"cells", cells}});
  if (failures == total) return kExitError;
  return failures ? kExitPartial : 0;
}

int cmd_ablate(const DataOptions& data, TrainOptions& opts, int argc, char** argv) {
  opts.resolve("ablate");
  json source;
  const milup::DataSplits splits = data.load(source);
  fs::create_directories(opts.out_dir);

  struct Variant {
    std::string name;
    milup::TrainConfig cfg;
  };
  std::vector<Variant> variants;
  milup::TrainConfig proposed = opts.cfg;
  proposed.mode = milup::BagMode::kClustered;
  proposed.base_weight = 1.0;
  variants.push_back({"proposed", proposed});
  milup::TrainConfig random_bags = proposed;
  random_bags.mode = milup::BagMode::kRandom;
  variants.push_back({"w/o clustering", random_bags});
  milup::TrainConfig mil_only = proposed;
  mil_only.base_weight = 0.0;
  mil_only.warmup_steps = 0;
  variants.push_back({"w/o base model", mil_only});

  json manifest = manifest_base("ablate", argc, argv);
  manifest["config"] = milup::to_json(opts.cfg);
  manifest["runs"] = opts.runs;
  manifest["data"] = source;
  json vcfg = json::object();
  for (const auto& v : variants) vcfg[v.name] = milup::to_json(v.cfg);
  manifest["variants"] = vcfg;
  write_json(opts.out_dir / "manifest.json", manifest);

  std::ofstream table(opts.out_dir / "ablation.csv");
  table << "model,auuc_x1e3\n";
  json rows = json::array();
  std::map<std::string, double> means;
  std::size_t failures = 0;
  for (const auto& v : variants) {
    std::string dir_name = v.name;
    for (char& c : dir_name) {
      if (c == ' ' || c == '/') c = '_';
    }
    const fs::path vdir = opts.out_dir / dir_name;
    fs::create_directories(vdir);
    const milup::RepeatResult rr = milup::repeat_runs(splits, v.cfg, opts.runs, opts.jobs);
    json agg = write_runs(vdir, rr);
    report_failures(rr);
    failures += rr.failures;
    if (rr.aggregate) means[v.name] = rr.aggregate->mean;
    table << v.name << ',' << cell_text(rr) << '\n';
    rows.push_back({{"variant", v.name}, {"result", agg}});
    std::cout << std::left << std::setw(16) << v.name << cell_text(rr) << '\n';
  }
  json checks = json::object();
  if (means.size() == 3) {
    const double p = means["proposed"], r = means["w/o clustering"], b = means["w/o base model"];
    checks["proposed_ge_without_clustering"] = p >= r;
    checks["without_base_model_is_worst"] = b <= p && b <= r;
    std::cout << "proposed >= w/o clustering: " << (p >= r ? "yes" : "no")
              << "\nw/o base model worst: " << (b <= p && b <= r ? "yes" : "no") << '\n';
  }
  write_json(opts.out_dir / "ablation.json", {{"variants", rows}, {"directional_checks", checks}});
  if (failures == 3 * opts.runs) return kExitError;
  return failures ? kExitPartial : 0;
}

struct EvalOptions {
  fs::path model, data, out;
  std::size_t points = 100;
  std::string treatment_col = "treatment";
  std::string outcome_col = "outcome";
  char delimiter = ',';

  void bind(CLI::App* app, bool out_required) {
    app->add_option("--model", model, "Checkpoint file")->required();
    app->add_option("--data", data, "Table to evaluate")->required();
    auto* o = app->add_option("--out", out, out_required ? "Curve CSV to write" : "JSON result file");
    if (out_required) o->required();
    app->add_option("--points", points, "Uplift curve grid size");
    app->add_option("--treatment-col", treatment_col, "Treatment column name");
    app->add_option("--outcome-col", outcome_col, "Outcome column name");
    app->add_option("--delimiter", delimiter, "Field delimiter");
  }

  milup::EvalResult run(const milup::Dataset*& ds_out, milup::Dataset& storage) const {
    milup::TableSchema schema;
    schema.treatment_column = treatment_col;
    schema.outcome_column = outcome_col;
    schema.delimiter = delimiter;
    const milup::UpliftModel m = milup::load_checkpoint(model);
    storage = milup::load_table(data, schema);
    if (storage.dims() != m.input_dim) {
      throw milup::ShapeError("checkpoint expects " + std::to_string(m.input_dim) +
                              " features, table has " + std::to_string(storage.dims()));
    }
    ds_out = &storage;
    return milup::evaluate(m, storage, points);
  }
};

int cmd_eval(const EvalOptions& opts) {
  milup::Dataset storage;
  const milup::Dataset* ds = nullptr;
  const milup::EvalResult r = opts.run(ds, storage);
  json j = {{"auuc", r.auuc},
            {"empirical_ate", milup::empirical_ate(*ds)},
            {"rows", ds->size()},
            {"points", opts.points},
            {"model", opts.model.string()},
            {"data", opts.data.string()}};
  if (!opts.out.empty()) write_json(opts.out, j);
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_curve(const EvalOptions& opts) {
  milup::Dataset storage;
  const milup::Dataset* ds = nullptr;
  const milup::EvalResult r = opts.run(ds, storage);
  milup::export_curve(r.curve, opts.out);
  std::cout << "auuc " << std::setprecision(8) << r.auuc << ", " << r.curve.points.size()
            << " points written to " << opts.out.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uplift modeling with bag-level (multiple instance) regularization"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  SynthOptions synth;
  fs::path synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic randomized experiment");
  synth.bind(synth_cmd, "");
  synth_cmd->add_option("--out", synth_out, "Output table")->required();

  DataOptions train_data;
  TrainOptions train_opts;
  auto* train_cmd = app.add_subcommand("train", "Train repeated runs and aggregate test AUUC");
  train_data.bind(train_cmd);
  train_opts.bind(train_cmd);

  DataOptions sweep_data;
  TrainOptions sweep_opts;
  std::vector<std::size_t> bag_sizes{8, 16, 32, 64, 128};
  std::vector<double> alphas{1e-4, 1e-3, 1e-2};
  auto* sweep_cmd = app.add_subcommand("sweep", "Grid over bag size and MIL loss weight");
  sweep_data.bind(sweep_cmd);
  sweep_opts.bind(sweep_cmd);
  sweep_cmd->add_option("--bag-sizes", bag_sizes, "Bag sizes")->delimiter(',');
  sweep_cmd->add_option("--alphas", alphas, "MIL loss weights")->delimiter(',');

  DataOptions ablate_data;
  TrainOptions ablate_opts;
  auto* ablate_cmd =
      app.add_subcommand("ablate", "Compare clustered bags, random bags and MIL-only training");
  ablate_data.bind(ablate_cmd);
  ablate_opts.bind(ablate_cmd);

  EvalOptions eval_opts, curve_opts;
  auto* eval_cmd = app.add_subcommand("eval", "AUUC of a checkpoint on a table");
  eval_opts.bind(eval_cmd, false);
  auto* curve_cmd = app.add_subcommand("curve", "Export the uplift curve of a checkpoint");
  curve_opts.bind(curve_cmd, true);

  try {
    app.parse(argc, argv);
    if (*train_cmd) apply_config_file(app, train_cmd, train_opts.config_file);
    if (*sweep_cmd) apply_config_file(app, sweep_cmd, sweep_opts.config_file);
    if (*ablate_cmd) apply_config_file(app, ablate_cmd, ablate_opts.config_file);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const milup::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }

  try {
    if (*synth_cmd) return cmd_synth(synth, synth_out, argc, argv);
    if (*train_cmd) return cmd_train(train_data, train_opts, argc, argv);
    if (*sweep_cmd) return cmd_sweep(sweep_data, sweep_opts, bag_sizes, alphas, argc, argv);
    if (*ablate_cmd) return cmd_ablate(ablate_data, ablate_opts, argc, argv);
    if (*eval_cmd) return cmd_eval(eval_opts);
    if (*curve_cmd) return cmd_curve(curve_opts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return 0;
}
