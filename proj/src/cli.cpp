#include "simformer/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>

#include "json.hpp"
#include "simformer/checkpoint.hpp"
#include "simformer/evaluation.hpp"
#include "simformer/experiments.hpp"
#include "simformer/inference.hpp"
#include "simformer/matching.hpp"
#include "simformer/png_io.hpp"
#include "simformer/training.hpp"

#ifndef SIMFORMER_VERSION
#define SIMFORMER_VERSION "unknown"
#endif

namespace simformer {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path default_out(const std::string& command) {
  const char* env = std::getenv("SIMFORMER_OUT");
  return fs::path(env && *env ? env : "runs") / command;
}

/// Options bound to a config struct. Values from `--config` are loaded first,
/// then every flag given on the command line overrides its field.
template <typename Config>
struct BoundConfig {
  Config flags;
  std::string config_file;
  std::vector<std::function<void(Config&)>> overrides;

  template <typename Get>
  void field(CLI::App* app, const std::string& name, Get get, const std::string& desc) {
    auto* opt = app->add_option(name, get(flags), desc)->capture_default_str();
    overrides.push_back([this, opt, get](Config& c) {
      if (opt->count()) get(c) = get(flags);
    });
  }

  Config resolve() const {
    Config c;
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      if (!in) throw std::runtime_error("io_error: cannot open config " + config_file);
      from_json(json::parse(in), c);
    }
    for (const auto& f : overrides) f(c);
    return c;
  }
};

void add_train_flags(CLI::App* app, BoundConfig<TrainConfig>& b, std::string& mode) {
  app->add_option("--config", b.config_file, "JSON file with TrainConfig fields; flags take precedence");
  b.field(app, "--lr", [](TrainConfig& c) -> double& { return c.lr0; }, "Initial learning rate");
  b.field(app, "--weight-decay", [](TrainConfig& c) -> double& { return c.weight_decay; }, "Decoupled weight decay");
  b.field(app, "--iters", [](TrainConfig& c) -> int& { return c.total_iters; }, "Total training iterations");
  b.field(app, "--batch", [](TrainConfig& c) -> int& { return c.batch_size; }, "Image pairs per step");
  b.field(app, "--poly-power", [](TrainConfig& c) -> double& { return c.poly_power; }, "Poly schedule exponent");
  b.field(app, "--flip", [](TrainConfig& c) -> bool& { return c.flip; }, "Random horizontal flip");
  b.field(app, "--crop", [](TrainConfig& c) -> bool& { return c.crop; }, "Random crop");
  b.field(app, "--crop-size", [](TrainConfig& c) -> int& { return c.crop_size; }, "Crop side (multiple of 4)");
  b.field(app, "--pixel-transfer", [](TrainConfig& c) -> bool& { return c.pixel_transfer; },
          "Pixel-similarity distillation loss");
  b.field(app, "--comp-loss", [](TrainConfig& c) -> bool& { return c.comp_loss; }, "Complementary loss");
  b.field(app, "--self-pair", [](TrainConfig& c) -> bool& { return c.self_pair; },
          "Sample pixel pairs inside one image instead of across images");
  b.field(app, "--pairs", [](TrainConfig& c) -> int& { return c.pairs_per_image; }, "Pixels sampled per image (J)");
  b.field(app, "--sim-grad-to-pixels", [](TrainConfig& c) -> bool& { return c.sim_grad_to_pixels; },
          "Let the similarity loss update pixel embeddings");
  b.field(app, "--seed", [](TrainConfig& c) -> std::uint64_t& { return c.seed; }, "Random seed");
  b.field(app, "--eval-interval", [](TrainConfig& c) -> int& { return c.eval_interval; }, "Iterations between test evals");
  b.field(app, "--log-interval", [](TrainConfig& c) -> int& { return c.log_interval; }, "Iterations between log lines");
  b.field(app, "--double", [](TrainConfig& c) -> bool& { return c.use_double; }, "64-bit deterministic mode");
  b.field(app, "--alpha", [](TrainConfig& c) -> double& { return c.loss.alpha; }, "Distillation loss weight");
  b.field(app, "--beta", [](TrainConfig& c) -> double& { return c.loss.beta; }, "Complementary loss weight");
  b.field(app, "--gamma", [](TrainConfig& c) -> double& { return c.loss.gamma; },
          "Constant mask value of no-object proposals in the complementary loss");
  b.field(app, "--embed-dim", [](TrainConfig& c) -> int& { return c.model.embed_dim; }, "Embedding width C");
  b.field(app, "--queries", [](TrainConfig& c) -> int& { return c.model.num_queries; }, "Number of queries N");
  auto* opt = app->add_option("--mode", mode, "weakshot, or full (every class mask-supervised)")
                  ->check(CLI::IsMember({"weakshot", "full"}))
                  ->capture_default_str();
  b.overrides.push_back([opt, &mode](TrainConfig& c) {
    if (opt->count()) c.mode = mode == "full" ? TrainMode::kFull : TrainMode::kWeakShot;
  });
}

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

struct RunRecord {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  std::uint64_t seed = 0;
  fs::path out_dir;
  std::string started;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  json result = json::object();

  void write(const std::string& status) const {
    if (out_dir.empty()) return;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    json j{{"command", command},
           {"argv", argv},
           {"config", config},
           {"seed", seed},
           {"version", SIMFORMER_VERSION},
           {"output_dir", fs::absolute(out_dir).string()},
           {"status", status},
           {"timings", {{"started", started}, {"finished", now_iso()},
                        {"wall_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()}}},
           {"result", result}};
    std::ofstream out(out_dir / "run_record.json");
    out << j.dump(2) << '\n';
  }
};

std::array<std::uint8_t, 3> class_color(int c, int num_classes) {
  if (c == kIgnoreId) return {40, 40, 40};
  const double hue = 360.0 * c / std::max(num_classes, 1);
  const double s = c % 2 ? 0.6 : 0.95, v = c % 2 ? 0.75 : 0.95;
  const double ch = v * s, hp = std::fmod(hue / 60.0, 6.0);
  const double x = ch * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp)) {
    case 0: r = ch; g = x; break;
    case 1: r = x; g = ch; break;
    case 2: g = ch; b = x; break;
    case 3: g = x; b = ch; break;
    case 4: r = x; b = ch; break;
    default: r = ch; b = x; break;
  }
  const double m = v - ch;
  auto q = [m](double u) { return static_cast<std::uint8_t>(std::lround(255.0 * (u + m))); };
  return {q(r), q(g), q(b)};
}

// Four tiles: image | GT | split map (base red, novel blue) | prediction.
Grid<std::uint8_t> make_panel(const FullSample& s, const LabelMap& pred, const ClassSplit& split, int num_classes,
                              int scale) {
  constexpr int kGap = 2;
  const int th = s.image.height * scale, tw = s.image.width * scale;
  Grid<std::uint8_t> panel(th, 4 * tw + 3 * kGap, 3, 255);
  for (int y = 0; y < th; ++y) {
    for (int x = 0; x < tw; ++x) {
      const int sy = y / scale, sx = x / scale;
      const int gt = s.mask.at(sy, sx);
      std::array<std::array<std::uint8_t, 3>, 4> px;
      for (int c = 0; c < 3; ++c) px[0][c] = static_cast<std::uint8_t>(std::lround(255.0f * s.image.at(sy, sx, c)));
      px[1] = class_color(gt, num_classes);
      px[2] = split.is_base(gt) ? std::array<std::uint8_t, 3>{220, 40, 40}
              : split.is_novel(gt) ? std::array<std::uint8_t, 3>{40, 80, 220}
                                   : std::array<std::uint8_t, 3>{128, 128, 128};
      px[3] = class_color(pred.at(sy, sx), num_classes);
      for (int t = 0; t < 4; ++t)
        for (int c = 0; c < 3; ++c) panel.at(y, t * (tw + kGap) + x, c) = px[t][c];
    }
  }
  return panel;
}

std::vector<double> read_run_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("io_error: cannot open " + path);
  const json j = json::parse(in);
  if (j.is_array()) return j.get<std::vector<double>>();
  if (j.is_object() && j.contains("novel_miou")) return j.at("novel_miou").get<std::vector<double>>();
  throw std::invalid_argument("sigtest: " + path + " must hold a number list or an object with novel_miou");
}

std::vector<FullSample> load_subset(const DatasetManifest& m, const std::string& subset, int limit) {
  const auto& ids = subset == "train" ? m.train_ids : m.test_ids;
  std::vector<FullSample> out;
  for (const auto& id : ids) {
    if (limit > 0 && static_cast<int>(out.size()) >= limit) break;
    out.push_back(load_full_sample(m, subset, id));
  }
  return out;
}

std::string error_code(const std::exception& e) {
  const std::string msg = e.what();
  if (msg.rfind("io_error", 0) == 0) return "io_error";
  if (msg.rfind("non_finite_loss", 0) == 0) return "non_finite_loss";
  if (dynamic_cast<const CapacityError*>(&e)) return "capacity_error";
  if (dynamic_cast<const std::invalid_argument*>(&e)) return "invalid_argument";
  if (dynamic_cast<const json::exception*>(&e)) return "parse_error";
  return "runtime_error";
}

void print_error(const std::string& code, const std::string& message) {
  std::cerr << json{{"error", code}, {"message", message}}.dump() << std::endl;
}

}  // namespace

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run_cli(args);
}

int run_cli(const std::vector<std::string>& args_in) {
  CLI::App app{"Weak-shot semantic segmentation by similarity transfer on a synthetic shapes corpus"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  RunRecord record;
  record.argv = args_in;
  record.started = now_iso();

  // generate
  auto* gen = app.add_subcommand("generate", "Generate the synthetic corpus and its manifest");
  BoundConfig<GenerationConfig> gen_cfg;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  gen->add_option("--config", gen_cfg.config_file, "JSON file with generation fields; flags take precedence");
  gen_cfg.field(gen, "--classes", [](GenerationConfig& c) -> int& { return c.num_classes; }, "Semantic classes");
  gen_cfg.field(gen, "--base-ratio", [](GenerationConfig& c) -> double& { return c.base_fraction; },
                "Fraction of classes that are base");
  gen_cfg.field(gen, "--train", [](GenerationConfig& c) -> int& { return c.train_samples; }, "Training images");
  gen_cfg.field(gen, "--test", [](GenerationConfig& c) -> int& { return c.test_samples; }, "Test images");
  gen_cfg.field(gen, "--image-size", [](GenerationConfig& c) -> int& { return c.image_size; }, "Image side");
  gen_cfg.field(gen, "--background-classes", [](GenerationConfig& c) -> int& { return c.num_background; },
                "Classes used as backgrounds");
  gen_cfg.field(gen, "--cooccurrence-floor", [](GenerationConfig& c) -> int& { return c.cooccurrence_floor; },
                "Minimum co-occurrence count per class pair");
  gen->add_option("--seed", gen_seed, "Corpus seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Dataset root (default $SIMFORMER_OUT/data)");

  // train / retrain
  auto* train = app.add_subcommand("train", "Train a model");
  BoundConfig<TrainConfig> train_cfg;
  std::string train_mode = "weakshot", train_data, train_out;
  add_train_flags(train, train_cfg, train_mode);
  train->add_option("--data", train_data, "Dataset root")->required();
  train->add_option("--out", train_out, "Run directory (default $SIMFORMER_OUT/train)");

  auto* retrain = app.add_subcommand("retrain", "Re-train a fresh model on teacher mixed labels");
  BoundConfig<TrainConfig> retrain_cfg;
  std::string retrain_mode = "full", retrain_data, retrain_out, retrain_teacher;
  add_train_flags(retrain, retrain_cfg, retrain_mode);
  retrain->add_option("--data", retrain_data, "Dataset root")->required();
  retrain->add_option("--teacher", retrain_teacher, "Teacher checkpoint")->required();
  retrain->add_option("--out", retrain_out, "Run directory (default $SIMFORMER_OUT/retrain)");

  // eval / infer / visualize
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a dataset subset");
  std::string eval_data, eval_ckpt, eval_subset = "test", eval_out;
  eval->add_option("--data", eval_data, "Dataset root")->required();
  eval->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required();
  eval->add_option("--subset", eval_subset, "train or test")->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  eval->add_option("--out", eval_out, "Report directory (default $SIMFORMER_OUT/eval)");

  auto* infer = app.add_subcommand("infer", "Write predicted label PNGs");
  std::string infer_data, infer_ckpt, infer_subset = "test", infer_out;
  bool infer_scores = false;
  int infer_limit = 0;
  infer->add_option("--data", infer_data, "Dataset root")->required();
  infer->add_option("--checkpoint", infer_ckpt, "Model checkpoint")->required();
  infer->add_option("--subset", infer_subset, "train or test")->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  infer->add_option("--scores", infer_scores, "Also write fused score tensors")->capture_default_str();
  infer->add_option("--limit", infer_limit, "Maximum images (0 = all)")->capture_default_str();
  infer->add_option("--out", infer_out, "Output directory (default $SIMFORMER_OUT/infer)");

  auto* vis = app.add_subcommand("visualize", "Panels: image | GT | base/novel map | prediction");
  std::string vis_data, vis_ckpt, vis_subset = "test", vis_out;
  int vis_count = 8, vis_scale = 2;
  vis->add_option("--data", vis_data, "Dataset root")->required();
  vis->add_option("--checkpoint", vis_ckpt, "Model checkpoint")->required();
  vis->add_option("--subset", vis_subset, "train or test")->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  vis->add_option("--count", vis_count, "Number of panels")->capture_default_str();
  vis->add_option("--scale", vis_scale, "Integer upscaling")->check(CLI::PositiveNumber)->capture_default_str();
  vis->add_option("--out", vis_out, "Output directory (default $SIMFORMER_OUT/visualize)");

  // ablate / sweep
  auto* ablate = app.add_subcommand("ablate", "Train the four module-toggle variants over seeds");
  BoundConfig<TrainConfig> ablate_cfg;
  std::string ablate_mode = "weakshot", ablate_data, ablate_out;
  std::vector<std::uint64_t> ablate_seeds{1, 2, 3};
  add_train_flags(ablate, ablate_cfg, ablate_mode);
  ablate->add_option("--data", ablate_data, "Dataset root")->required();
  ablate->add_option("--seeds", ablate_seeds, "Seeds")->capture_default_str();
  ablate->add_option("--out", ablate_out, "Output directory (default $SIMFORMER_OUT/ablate)");

  auto* sweep = app.add_subcommand("sweep", "Grid over one loss weight");
  BoundConfig<TrainConfig> sweep_cfg;
  std::string sweep_mode = "weakshot", sweep_data, sweep_out, sweep_param = "gamma";
  std::vector<std::uint64_t> sweep_seeds{1, 2, 3};
  std::vector<double> sweep_values;
  add_train_flags(sweep, sweep_cfg, sweep_mode);
  sweep->add_option("--data", sweep_data, "Dataset root")->required();
  sweep->add_option("--param", sweep_param, "alpha, beta or gamma")
      ->check(CLI::IsMember({"alpha", "beta", "gamma"}))
      ->capture_default_str();
  sweep->add_option("--values", sweep_values,
                    "Grid values (default alpha: 0 0.05 0.1 0.2 0.4; beta: 0 0.1 0.2 0.4; gamma: 0.01 0.1 0.3 0.5 0.9)");
  sweep->add_option("--seeds", sweep_seeds, "Seeds")->capture_default_str();
  sweep->add_option("--out", sweep_out, "Output directory (default $SIMFORMER_OUT/sweep)");

  // simeval / sigtest
  auto* simeval = app.add_subcommand("simeval", "F1 of the pixel-pair similarity scorer on base and novel pairs");
  std::string sim_data, sim_ckpt, sim_out;
  int sim_pairs = 100, sim_j = 100;
  std::uint64_t sim_seed = 0;
  bool sim_oracle = false;
  simeval->add_option("--data", sim_data, "Dataset root")->required();
  simeval->add_option("--checkpoint", sim_ckpt, "Model checkpoint (unused with --oracle true)");
  simeval->add_option("--pairs", sim_pairs, "Training image pairs")->capture_default_str();
  simeval->add_option("--j", sim_j, "Pixels per image")->capture_default_str();
  simeval->add_option("--seed", sim_seed, "Sampling seed")->capture_default_str();
  simeval->add_option("--oracle", sim_oracle, "Score pairs with ground-truth labels")->capture_default_str();
  simeval->add_option("--out", sim_out, "Output directory (default $SIMFORMER_OUT/simeval)");

  auto* sigtest = app.add_subcommand("sigtest", "Welch t-test between two lists of novel mIoU values");
  std::string sig_a, sig_b, sig_out;
  double sig_level = 0.05;
  sigtest->add_option("--a", sig_a, "JSON list, or object with novel_miou")->required();
  sigtest->add_option("--b", sig_b, "JSON list, or object with novel_miou")->required();
  sigtest->add_option("--level", sig_level, "Significance level")->capture_default_str();
  sigtest->add_option("--out", sig_out, "Output directory (default $SIMFORMER_OUT/sigtest)");

  std::vector<std::string> rev(args_in.rbegin(), args_in.rend());
  if (!rev.empty()) rev.pop_back();  // program name
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code != 0) print_error("usage_error", e.what());
    return code == 0 ? 0 : 2;
  }

  auto out_or_default = [](const std::string& given, const std::string& cmd) {
    return given.empty() ? default_out(cmd) : fs::path(given);
  };

  try {
    if (*gen) {
      record.command = "generate";
      const auto cfg = gen_cfg.resolve();
      record.out_dir = out_or_default(gen_out, "data");
      record.config = cfg;
      record.seed = gen_seed;
      const auto m = generate_dataset(cfg, gen_seed, record.out_dir);
      record.result = {{"train", m.train_ids.size()}, {"test", m.test_ids.size()}, {"split", m.split},
                       {"effective_seed", m.effective_seed}};
    } else if (*train || *retrain) {
      const bool re = retrain->parsed();
      record.command = re ? "retrain" : "train";
      auto cfg = (re ? retrain_cfg : train_cfg).resolve();
      record.out_dir = out_or_default(re ? retrain_out : train_out, record.command);
      record.seed = cfg.seed;
      const auto manifest = DatasetManifest::load(re ? retrain_data : train_data);
      const auto result = re ? run_retraining(cfg, manifest, retrain_teacher, record.out_dir)
                             : run_training(cfg, manifest, record.out_dir);
      record.config = cfg;
      record.result = {{"novel_miou", result.final_report.mean_novel_iou},
                       {"base_miou", result.final_report.mean_base_iou},
                       {"best_novel_miou", result.best_novel_iou},
                       {"iterations", result.iterations},
                       {"last_checkpoint", result.last_checkpoint.string()},
                       {"best_checkpoint", result.best_checkpoint.string()}};
    } else if (*eval) {
      record.command = "eval";
      record.out_dir = out_or_default(eval_out, "eval");
      record.config = {{"data", eval_data}, {"checkpoint", eval_ckpt}, {"subset", eval_subset}};
      const auto manifest = DatasetManifest::load(eval_data);
      auto model = load_model(eval_ckpt);
      const auto samples = load_subset(manifest, eval_subset, 0);
      const auto report = evaluate_model(model, samples, manifest.split);
      fs::create_directories(record.out_dir);
      write_iou_report(record.out_dir / "iou_report.json", record.out_dir / "iou_report.csv", report, manifest.split);
      record.result = {{"novel_miou", report.mean_novel_iou}, {"base_miou", report.mean_base_iou}};
    } else if (*infer || *vis) {
      const bool visual = vis->parsed();
      record.command = visual ? "visualize" : "infer";
      record.out_dir = out_or_default(visual ? vis_out : infer_out, record.command);
      const auto& data = visual ? vis_data : infer_data;
      const auto& ckpt = visual ? vis_ckpt : infer_ckpt;
      const auto& subset = visual ? vis_subset : infer_subset;
      record.config = {{"data", data}, {"checkpoint", ckpt}, {"subset", subset}};
      const auto manifest = DatasetManifest::load(data);
      auto model = load_model(ckpt);
      const auto samples = load_subset(manifest, subset, visual ? vis_count : infer_limit);
      std::vector<const Image*> images;
      for (const auto& s : samples) images.push_back(&s.image);
      const auto results = segment_images(model, images);
      fs::create_directories(record.out_dir);
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& id = samples[i].id;
        if (visual) {
          png::write_rgb_bytes(record.out_dir / (id + "_panel.png"),
                               make_panel(samples[i], results[i].labels, manifest.split,
                                          model->config().num_classes, vis_scale));
        } else {
          png::write_gray(record.out_dir / (id + "_pred.png"), results[i].labels);
          if (infer_scores) write_scores(record.out_dir / (id + "_scores.f32"), results[i].scores);
        }
      }
      record.result = {{"images", samples.size()}};
    } else if (*ablate) {
      record.command = "ablate";
      auto cfg = ablate_cfg.resolve();
      record.out_dir = out_or_default(ablate_out, "ablate");
      record.config = cfg;
      record.config["seeds"] = ablate_seeds;
      const auto rows = run_ablation(cfg, DatasetManifest::load(ablate_data), ablate_seeds, record.out_dir);
      std::cout << format_runs_table(rows);
      record.result = rows;
    } else if (*sweep) {
      record.command = "sweep";
      auto cfg = sweep_cfg.resolve();
      record.out_dir = out_or_default(sweep_out, "sweep");
      const auto values = sweep_values.empty() ? sweep_grid(sweep_param) : sweep_values;
      record.config = cfg;
      record.config["seeds"] = sweep_seeds;
      record.config["param"] = sweep_param;
      record.config["values"] = values;
      const auto rows =
          run_sweep(cfg, DatasetManifest::load(sweep_data), sweep_seeds, sweep_param, values, record.out_dir);
      std::cout << format_runs_table(rows);
      record.result = rows;
    } else if (*simeval) {
      record.command = "simeval";
      record.out_dir = out_or_default(sim_out, "simeval");
      record.seed = sim_seed;
      record.config = {{"data", sim_data}, {"checkpoint", sim_ckpt}, {"pairs", sim_pairs}, {"j", sim_j},
                       {"oracle", sim_oracle}};
      const auto corpus = LoadedCorpus::load(DatasetManifest::load(sim_data));
      Rng rng(sim_seed);
      PairF1Report report;
      if (sim_oracle) {
        report = eval_pair_f1(corpus, sim_pairs, sim_j, rng, [&](const PairCoords& c, std::size_t in, std::size_t ref) {
          std::vector<int> a, b;
          for (const auto& p : c.input) a.push_back(corpus.train_full[in].mask.at(p.h, p.w));
          for (const auto& p : c.ref) b.push_back(corpus.train_full[ref].mask.at(p.h, p.w));
          return pair_labels(a, b);
        });
      } else {
        if (sim_ckpt.empty()) throw std::invalid_argument("simeval: --checkpoint is required unless --oracle true");
        auto model = load_model(sim_ckpt);
        report = eval_simnet_f1(model, corpus, sim_pairs, sim_j, rng);
      }
      fs::create_directories(record.out_dir);
      std::ofstream(record.out_dir / "pair_f1.json") << json(report).dump(2) << '\n';
      std::cout << json(report).dump(2) << '\n';
      record.result = report;
    } else if (*sigtest) {
      record.command = "sigtest";
      record.out_dir = out_or_default(sig_out, "sigtest");
      record.config = {{"a", sig_a}, {"b", sig_b}, {"level", sig_level}};
      const auto r = significance_test(read_run_values(sig_a), read_run_values(sig_b));
      json j = r;
      j["level"] = sig_level;
      j["significant"] = r.p_value < sig_level;
      fs::create_directories(record.out_dir);
      std::ofstream(record.out_dir / "sigtest.json") << j.dump(2) << '\n';
      std::cout << "a: " << r.summary_a << "  b: " << r.summary_b << "  p = " << r.p_value
                << (r.p_value < sig_level ? "  (significant" : "  (not significant") << " at " << sig_level << ")\n";
      record.result = j;
    }
    record.write("ok");
    return 0;
  } catch (const std::exception& e) {
    const auto code = error_code(e);
    record.result = {{"error", code}, {"message", e.what()}};
    try {
      record.write("failed");
    } catch (...) {
    }
    print_error(code, e.what());
    return code == "invalid_argument" ? 2 : 1;
  }
}

}  // namespace simformer
