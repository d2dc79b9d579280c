// Command-line entry point: data generation, training, ablations, exports and
// the gradient suite.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "hyperskel/checkpoint.hpp"
#include "hyperskel/config.hpp"
#include "hyperskel/dataset.hpp"
#include "hyperskel/export.hpp"
#include "hyperskel/gradcheck.hpp"
#include "hyperskel/train.hpp"

namespace fs = std::filesystem;
using namespace hyperskel;

namespace {

// Options shared by every subcommand.
struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::string seed, strategy, init_c, alpha, epochs, out, data;
  bool quiet = false;
};

void add_common(CLI::App* app, Common& o) {
  app->add_option("config", o.config_path, "Config file (key = value lines)")->check(CLI::ExistingFile);
  app->add_option("--seed", o.seed, "Training seed");
  app->add_option("--strategy", o.strategy, "pooled, token, euclidean_pooled, euclidean_token or none");
  app->add_option("--init-c", o.init_c, "Initial curvature");
  app->add_option("--alpha", o.alpha, "Initial loss weight alpha");
  app->add_option("--epochs", o.epochs, "Training epochs");
  app->add_option("--out", o.out, "Output directory");
  app->add_option("--data", o.data, "Dataset path");
  app->add_option("--set", o.sets, "Extra override, key=value (repeatable)");
  app->add_flag("-q,--quiet", o.quiet, "No progress log");
}

TrainConfig resolve(const Common& o) {
  TrainConfig cfg = o.config_path.empty() ? TrainConfig{} : load_config(o.config_path);
  const std::pair<const char*, const std::string*> flags[] = {
      {"seed", &o.seed},   {"strategy", &o.strategy}, {"init_c", &o.init_c}, {"alpha_init", &o.alpha},
      {"epochs", &o.epochs}, {"out_dir", &o.out},     {"data_path", &o.data}};
  for (const auto& [key, value] : flags) {
    if (!value->empty()) apply_setting(cfg, key, *value);
  }
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got " + kv);
    apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

std::ostream* log_stream(const Common& o) { return o.quiet ? nullptr : &std::cerr; }

// The dataset at cfg.data_path, generated from cfg.data when missing.
SyntheticDataset dataset_for(const TrainConfig& cfg, std::ostream* log) {
  if (fs::exists(cfg.data_path)) return load_dataset(cfg.data_path);
  if (log) *log << "generating " << cfg.data_path << '\n';
  SyntheticDataset data = generate_dataset(cfg.data);
  const fs::path parent = fs::path(cfg.data_path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  save_dataset(data, cfg.data_path);
  return data;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

int cmd_gen_data(const Common& o) {
  const TrainConfig cfg = resolve(o);
  const SyntheticDataset data = generate_dataset(cfg.data);
  const fs::path parent = fs::path(cfg.data_path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  save_dataset(data, cfg.data_path);
  std::cout << "wrote " << data.samples.size() << " samples, " << data.vocab.size()
            << " tokens to " << cfg.data_path << '\n';
  return 0;
}

int cmd_train(const Common& o) {
  const TrainConfig cfg = resolve(o);
  const SyntheticDataset data = dataset_for(cfg, log_stream(o));
  TrainOptions opts;
  opts.log = log_stream(o);
  const TrainResult r = train(cfg, data, opts);
  nlohmann::ordered_json j;
  j["steps"] = r.steps;
  j["seconds"] = r.seconds;
  j["c"] = r.history.empty() ? cfg.init_c : r.history.back().c;
  j["top1"] = r.eval.top1;
  j["top5"] = r.eval.top5;
  j["token_accuracy"] = r.eval.token_accuracy;
  j["metrics"] = r.metrics_path;
  j["checkpoint"] = r.checkpoint_path;
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_ablate_curvature(const Common& o, bool frozen) {
  const TrainConfig cfg = resolve(o);
  const SyntheticDataset data = dataset_for(cfg, log_stream(o));
  const auto rows = ablate_curvature(cfg, data, !frozen, log_stream(o));
  const std::string table = curvature_table(rows);
  fs::create_directories(cfg.out_dir);
  write_text(fs::path(cfg.out_dir) / (frozen ? "curvature_frozen.md" : "curvature_learnable.md"), table);
  std::cout << table;
  return 0;
}

// Trains a model for the given strategy into out_dir/<name> and returns it.
std::shared_ptr<Model> train_for_noise(TrainConfig cfg, Strategy s, const std::string& name,
                                       const SyntheticDataset& data, std::ostream* log) {
  cfg.strategy = s;
  cfg.out_dir = (fs::path(cfg.out_dir) / name).string();
  TrainOptions opts;
  opts.log = log;
  opts.evaluate = false;
  return train(cfg, data, opts).model;
}

int cmd_ablate_noise(const Common& o) {
  const TrainConfig cfg = resolve(o);
  std::ostream* log = log_stream(o);
  const SyntheticDataset data = dataset_for(cfg, log);
  const Strategy hyp_s = uses_token_alignment(cfg.strategy) ? Strategy::kToken : Strategy::kPooled;
  const Strategy euc_s =
      hyp_s == Strategy::kToken ? Strategy::kEuclideanToken : Strategy::kEuclideanPooled;
  std::shared_ptr<Model> hyp = cfg.hyp_checkpoint.empty()
                                   ? train_for_noise(cfg, hyp_s, "hyperbolic", data, log)
                                   : std::shared_ptr<Model>(load_checkpoint(cfg.hyp_checkpoint));
  std::shared_ptr<Model> euc = cfg.euc_checkpoint.empty()
                                   ? train_for_noise(cfg, euc_s, "euclidean", data, log)
                                   : std::shared_ptr<Model>(load_checkpoint(cfg.euc_checkpoint));
  const auto rows = ablate_noise(*hyp, *euc, data, eval_indices(data, cfg.eval_every),
                                 cfg.noise_levels, cfg.seed);
  const std::string table = noise_table(rows);
  fs::create_directories(cfg.out_dir);
  write_text(fs::path(cfg.out_dir) / "noise.md", table);
  std::cout << table;
  return 0;
}

int cmd_export(const Common& o, const std::string& checkpoint, const std::string& csv,
               const std::string& svg, bool all_samples) {
  const TrainConfig cfg = resolve(o);
  const SyntheticDataset data = dataset_for(cfg, log_stream(o));
  const std::string ckpt =
      checkpoint.empty() ? (fs::path(cfg.out_dir) / "model.ckpt").string() : checkpoint;
  auto model = load_checkpoint(ckpt);
  std::vector<std::size_t> idx;
  if (all_samples) {
    for (std::size_t i = 0; i < data.samples.size(); ++i) idx.push_back(i);
  } else {
    idx = eval_indices(data, cfg.eval_every);
  }
  const std::string csv_path = csv.empty() ? (fs::path(cfg.out_dir) / "embeddings.csv").string() : csv;
  const ExportResult r = export_embeddings(*model, data, idx, csv_path, svg);
  nlohmann::ordered_json j;
  j["rows"] = r.rows;
  j["csv"] = csv_path;
  for (std::size_t p = 0; p < kNumParts; ++p) j["mean_radius"][kPartNames[p]] = r.mean_radius[p];
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_check_grads(const GradcheckOptions& opts) {
  const GradcheckReport report = run_gradcheck(opts);
  std::cout << format_report(report);
  return report.passed() ? 0 : 1;
}

void error_line(const std::string& command, const std::string& kind, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["command"] = command;
  j["message"] = message;
  std::cerr << j.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hyperbolic pose-text alignment toolkit"};
  app.require_subcommand(1);

  Common gen, tr, curv, noise, exp, grads;
  bool frozen = false, all_samples = false;
  std::string checkpoint, csv, svg;
  GradcheckOptions gopts;

  add_common(app.add_subcommand("gen-data", "Generate the synthetic dataset"), gen);
  add_common(app.add_subcommand("train", "Train one model"), tr);
  auto* c = app.add_subcommand("ablate-curvature", "Curvature sweep over cfg.curvatures");
  add_common(c, curv);
  c->add_flag("--frozen", frozen, "Freeze the curvature at its initial value");
  add_common(app.add_subcommand("ablate-noise", "Hyperbolic vs euclidean under keypoint noise"),
             noise);
  auto* e = app.add_subcommand("export-embeddings", "Write part embeddings as CSV and SVG");
  add_common(e, exp);
  e->add_option("--checkpoint", checkpoint, "Model checkpoint (default <out>/model.ckpt)");
  e->add_option("--csv", csv, "CSV path (default <out>/embeddings.csv)");
  e->add_option("--svg", svg, "Optional SVG disk plot");
  e->add_flag("--all", all_samples, "Export every sample instead of the evaluation split");
  auto* g = app.add_subcommand("check-grads", "Analytic vs finite-difference gradients");
  add_common(g, grads);
  g->add_option("--threshold", gopts.threshold, "Relative error bound for ops");
  g->add_option("--dist-pairs", gopts.dist_pairs, "Random pairs per curvature for dist");
  g->add_option("--filter", gopts.filter, "Only ops whose name contains this");
  g->add_flag("--corrupt-dist-grad", gopts.corrupt_dist_grad, "Negate the distance gradient (self-test)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    error_line("", "usage", ex.what());
    return 2;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (name == "gen-data") return cmd_gen_data(gen);
    if (name == "train") return cmd_train(tr);
    if (name == "ablate-curvature") return cmd_ablate_curvature(curv, frozen);
    if (name == "ablate-noise") return cmd_ablate_noise(noise);
    if (name == "export-embeddings") return cmd_export(exp, checkpoint, csv, svg, all_samples);
    if (!grads.seed.empty()) gopts.seed = std::stoull(grads.seed);
    return cmd_check_grads(gopts);
  } catch (const NonFiniteError& ex) {
    error_line(name, "non_finite", ex.what());
  } catch (const std::invalid_argument& ex) {
    error_line(name, "invalid_argument", ex.what());
  } catch (const std::exception& ex) {
    error_line(name, "runtime", ex.what());
  }
  return 1;
}
