#include "simformer/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "simformer/checkpoint.hpp"
#include "simformer/inference.hpp"
#include "simformer/matching.hpp"
#include "simformer/png_io.hpp"
#include "simformer/sampling.hpp"

namespace simformer {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  if (!(lr0 > 0.0)) throw std::invalid_argument("TrainConfig: lr0 must be positive");
  if (total_iters <= 0) throw std::invalid_argument("TrainConfig: total_iters must be positive");
  if (batch_size <= 0) throw std::invalid_argument("TrainConfig: batch_size must be positive");
  if (weight_decay < 0.0) throw std::invalid_argument("TrainConfig: weight_decay must be non-negative");
  if (pairs_per_image < 2) throw std::invalid_argument("TrainConfig: pairs_per_image must be at least 2");
  if (eval_interval <= 0 || log_interval <= 0) throw std::invalid_argument("TrainConfig: intervals must be positive");
  if (crop && (crop_size <= 0 || crop_size % ModelConfig::kStride != 0)) {
    throw std::invalid_argument("TrainConfig: crop_size must be a positive multiple of 4");
  }
  loss.validate();
  model.validate();
}

namespace {
const char* mode_name(TrainMode m) { return m == TrainMode::kFull ? "full" : "weakshot"; }
TrainMode parse_mode(const std::string& s) {
  if (s == "full") return TrainMode::kFull;
  if (s == "weakshot") return TrainMode::kWeakShot;
  throw std::invalid_argument("TrainConfig: unknown mode '" + s + "'");
}
}  // namespace

void to_json(json& j, const TrainConfig& c) {
  j = json{{"lr0", c.lr0},
           {"weight_decay", c.weight_decay},
           {"total_iters", c.total_iters},
           {"batch_size", c.batch_size},
           {"poly_power", c.poly_power},
           {"flip", c.flip},
           {"crop", c.crop},
           {"crop_size", c.crop_size},
           {"pixel_transfer", c.pixel_transfer},
           {"comp_loss", c.comp_loss},
           {"self_pair", c.self_pair},
           {"pairs_per_image", c.pairs_per_image},
           {"sim_grad_to_pixels", c.sim_grad_to_pixels},
           {"seed", c.seed},
           {"eval_interval", c.eval_interval},
           {"log_interval", c.log_interval},
           {"use_double", c.use_double},
           {"mode", mode_name(c.mode)},
           {"loss", c.loss},
           {"model", c.model}};
}

void from_json(const json& j, TrainConfig& c) {
  c.lr0 = j.value("lr0", c.lr0);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.total_iters = j.value("total_iters", c.total_iters);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.poly_power = j.value("poly_power", c.poly_power);
  c.flip = j.value("flip", c.flip);
  c.crop = j.value("crop", c.crop);
  c.crop_size = j.value("crop_size", c.crop_size);
  c.pixel_transfer = j.value("pixel_transfer", c.pixel_transfer);
  c.comp_loss = j.value("comp_loss", c.comp_loss);
  c.self_pair = j.value("self_pair", c.self_pair);
  c.pairs_per_image = j.value("pairs_per_image", c.pairs_per_image);
  c.sim_grad_to_pixels = j.value("sim_grad_to_pixels", c.sim_grad_to_pixels);
  c.seed = j.value("seed", c.seed);
  c.eval_interval = j.value("eval_interval", c.eval_interval);
  c.log_interval = j.value("log_interval", c.log_interval);
  c.use_double = j.value("use_double", c.use_double);
  if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
  if (j.contains("loss")) {
    json merged = c.loss;
    merged.update(j.at("loss"));
    c.loss = merged.get<LossConfig>();
  }
  if (j.contains("model")) {
    json merged = c.model;
    merged.update(j.at("model"));
    c.model = merged.get<ModelConfig>();
  }
}

double poly_lr(double lr0, long t, long total, double power) {
  if (total <= 0) throw std::invalid_argument("poly_lr: total must be positive");
  if (t >= total) return 0.0;
  return lr0 * std::pow(1.0 - static_cast<double>(t) / static_cast<double>(total), power);
}

TrainingData TrainingData::prepare(const DatasetManifest& manifest, TrainMode mode) {
  TrainingData d;
  d.manifest = manifest;
  d.targets_from_mask = mode == TrainMode::kFull;
  d.train_split = mode == TrainMode::kFull ? ClassSplit::all_base(manifest.config.num_classes) : manifest.split;
  for (const auto& id : manifest.train_ids) {
    auto full = load_full_sample(manifest, "train", id);
    d.index[id] = d.samples.size();
    if (mode == TrainMode::kFull) {
      WeakShotSample s;
      s.source_id = full.id;
      s.image = std::move(full.image);
      s.mask = std::move(full.mask);
      s.image_labels = std::move(full.present_classes);
      s.image_labels.erase(kIgnoreId);
      d.samples.push_back(std::move(s));
    } else {
      d.samples.push_back(make_weakshot(full, manifest.split));
    }
  }
  for (const auto& id : manifest.test_ids) d.test.push_back(load_full_sample(manifest, "test", id));
  return d;
}

void to_json(json& j, const StepReport& r) {
  std::vector<int> levels;
  for (auto l : r.fallback) levels.push_back(static_cast<int>(l));
  j = json{{"iteration", r.iteration},
           {"lr", r.lr},
           {"loss", r.loss},
           {"fallback", levels},
           {"skipped_base_pairs", r.skipped_base_pairs},
           {"skipped_novel_pairs", r.skipped_novel_pairs},
           {"dist_fallback", r.dist_fallback ? json(static_cast<int>(*r.dist_fallback)) : json(nullptr)}};
}

Trainer::Trainer(TrainConfig config, const TrainingData& data)
    : config_(std::move(config)), data_(&data), rng_(config_.seed) {
  config_.validate();
  if (data.samples.empty()) throw std::invalid_argument("Trainer: empty training set");
  torch::manual_seed(config_.seed);
  model_ = SimFormerModel(config_.model);
  if (config_.use_double) model_->to(torch::kFloat64);
  model_->train();
  torch::optim::AdamWOptions opts(config_.lr0);
  opts.weight_decay(config_.weight_decay);
  optimizer_ = std::make_unique<torch::optim::AdamW>(model_->parameters(), opts);
}

std::vector<std::pair<std::size_t, std::size_t>> Trainer::sample_batch() {
  std::uniform_int_distribution<std::size_t> pick(0, data_->samples.size() - 1);
  std::vector<std::pair<std::size_t, std::size_t>> batch;
  for (int b = 0; b < config_.batch_size; ++b) {
    const std::size_t in = pick(rng_);
    std::size_t ref = in;
    if (!config_.self_pair) ref = data_->index.at(sample_reference(data_->samples[in], data_->manifest, rng_).id);
    batch.emplace_back(in, ref);
  }
  return batch;
}

Trainer::Augmented Trainer::augment(const WeakShotSample& s) {
  const int h = s.image.height, w = s.image.width;
  const int ch = config_.crop ? std::min(config_.crop_size, h) : h;
  const int cw = config_.crop ? std::min(config_.crop_size, w) : w;
  std::uniform_int_distribution<int> oy_d(0, h - ch), ox_d(0, w - cw);
  const int oy = oy_d(rng_), ox = ox_d(rng_);
  const bool flip = config_.flip && std::bernoulli_distribution(0.5)(rng_);

  Augmented a;
  const auto dtype = config_.use_double ? torch::kFloat64 : torch::kFloat32;
  a.image = image_to_tensor(s.image, dtype).slice(1, oy, oy + ch).slice(2, ox, ox + cw);
  if (flip) a.image = a.image.flip({2});
  a.image = a.image.contiguous();
  a.mask = LabelMap(ch, cw);
  for (int y = 0; y < ch; ++y)
    for (int x = 0; x < cw; ++x) a.mask.at(y, x) = s.mask.at(oy + y, flip ? ox + cw - 1 - x : ox + x);
  return a;
}

void Trainer::update_running(const LossReport& r) {
  auto upd = [this](const std::string& key, double v) {
    auto it = running_.find(key);
    if (it == running_.end()) {
      running_[key] = v;
    } else {
      it->second = 0.98 * it->second + 0.02 * v;
    }
  };
  upd("cls", r.cls);
  upd("mask", r.mask);
  upd("sim", r.sim);
  if (r.dist) upd("dist", *r.dist);
  if (r.comp) upd("comp", *r.comp);
  upd("full", r.full);
}

void Trainer::dump_nonfinite(const std::vector<std::pair<std::size_t, std::size_t>>& batch, const LossReport& r) {
  json pairs = json::array();
  for (const auto& [in, ref] : batch) {
    pairs.push_back({{"input", data_->samples[in].source_id}, {"reference", data_->samples[ref].source_id}});
  }
  const fs::path path = dump_dir_ / "nonfinite_batch.json";
  std::ofstream out(path);
  out << json{{"iteration", iteration_}, {"pairs", pairs}, {"loss", r}, {"config", config_}}.dump(2) << '\n';
  throw NonFiniteLossError("non_finite_loss: iteration " + std::to_string(iteration_) + ", batch dumped to " +
                           path.string());
}

StepReport Trainer::train_step(const std::vector<std::pair<std::size_t, std::size_t>>& batch) {
  model_->train();
  StepReport rep;
  rep.iteration = iteration_;
  rep.lr = poly_lr(config_.lr0, iteration_, config_.total_iters, config_.poly_power);
  for (auto& group : optimizer_->param_groups()) static_cast<torch::optim::AdamWOptions&>(group.options()).lr(rep.lr);

  const auto& split = data_->train_split;
  const bool weak = !data_->targets_from_mask;
  const int b = static_cast<int>(batch.size());
  const auto dtype = config_.use_double ? torch::kFloat64 : torch::kFloat32;
  const auto opts = torch::TensorOptions().dtype(dtype);

  std::vector<Augmented> views;
  std::vector<std::size_t> sources;
  for (const auto& [in, ref] : batch) {
    views.push_back(augment(data_->samples[in]));
    sources.push_back(in);
  }
  for (int p = 0; p < b; ++p) {
    const std::size_t ref = batch[p].second;
    // Self pairs reuse the input view so both sides see the same pixels.
    views.push_back(config_.self_pair ? views[p] : augment(data_->samples[ref]));
    sources.push_back(ref);
  }
  std::vector<torch::Tensor> images;
  for (const auto& v : views) images.push_back(v.image);
  const ModelOutputs out = model_->forward(torch::stack(images));
  // Non-finite outputs would otherwise surface as a matching error.
  if (!torch::isfinite(out.class_probs).all().item<bool>() || !torch::isfinite(out.mask_probs).all().item<bool>()) {
    LossReport bad;
    bad.full = std::numeric_limits<double>::quiet_NaN();
    dump_nonfinite(batch, bad);
  }

  // Per-image matching and mask-level losses.
  auto cls_sum = torch::zeros({}, opts), mask_sum = torch::zeros({}, opts), comp_sum = torch::zeros({}, opts);
  int comp_n = 0;
  for (int v = 0; v < 2 * b; ++v) {
    const auto& sample = data_->samples[sources[v]];
    std::set<int> labels;
    for (int c : distinct_values(views[v].mask))
      if (c != kIgnoreId && (data_->targets_from_mask || split.is_base(c))) labels.insert(c);
    if (weak) {
      for (int c : sample.image_labels)
        if (split.is_novel(c)) labels.insert(c);
    }
    const auto targets = make_targets(views[v].mask, labels, split, opts);
    const auto one = out.image(v);
    const auto cost = build_cost_matrix(one, targets, split, config_.loss);
    const auto assignment = hungarian_assign(cost, targets, split.ignore_id);
    cls_sum = cls_sum + loss_cls(one.class_probs, assignment, config_.loss);
    int terms = 0;
    mask_sum = mask_sum + loss_mask(one.mask_probs, assignment, targets, split, config_.loss, &terms);
    rep.loss.mask_terms += terms;
    rep.loss.cls_terms += static_cast<int>(assignment.match.size());
    if (weak && config_.comp_loss) {
      if (auto c = loss_comp(one.mask_probs, assignment, targets, split, config_.loss)) {
        comp_sum = comp_sum + *c;
        ++comp_n;
      }
    }
  }

  // Cross-image pixel-pair losses.
  auto sim_sum = torch::zeros({}, opts), dist_sum = torch::zeros({}, opts);
  int sim_n = 0, dist_n = 0;
  if (weak) {
    auto& simnet = model_->simnet();
    for (int p = 0; p < b; ++p) {
      const auto level = config_.self_pair ? ReferenceFallback::kSelf
                                           : reference_level(data_->samples[batch[p].first],
                                                             data_->samples[batch[p].second], split);
      rep.fallback.push_back(level);
      const auto in_pix = out.pixel_embed[p], ref_pix = out.pixel_embed[b + p];

      const auto base = sample_pair_coords(views[p].mask, views[b + p].mask, split, PairRegion::kBase,
                                           config_.pairs_per_image, rng_);
      if (base.skipped) {
        ++rep.skipped_base_pairs;
      } else {
        auto e_in = gather_pixel_embeddings(in_pix, base.input);
        auto e_ref = gather_pixel_embeddings(ref_pix, base.ref);
        if (!config_.sim_grad_to_pixels) {
          e_in = e_in.detach();
          e_ref = e_ref.detach();
        }
        const auto scores = simnet->score_grid(e_in, e_ref);
        sim_sum = sim_sum + loss_sim(scores, pair_labels(base.input_class, base.ref_class, opts), config_.loss);
        ++sim_n;
        rep.loss.sim_terms += static_cast<int>(scores.numel());
      }

      if (!config_.pixel_transfer) continue;
      const auto novel = sample_pair_coords(views[p].mask, views[b + p].mask, split, PairRegion::kNotBase,
                                            config_.pairs_per_image, rng_);
      if (novel.skipped) {
        ++rep.skipped_novel_pairs;
        continue;
      }
      torch::Tensor r_novel;
      {
        torch::NoGradGuard no_grad;
        r_novel = simnet->score_grid(gather_pixel_embeddings(in_pix, novel.input),
                                     gather_pixel_embeddings(ref_pix, novel.ref));
      }
      const auto in_one = out.image(p), ref_one = out.image(b + p);
      const auto s_in = gather_novel_scores(in_one.class_probs, in_one.mask_probs, split, novel.input);
      const auto s_ref = gather_novel_scores(ref_one.class_probs, ref_one.mask_probs, split, novel.ref);
      dist_sum = dist_sum + loss_dist(s_in, s_ref, r_novel, config_.loss);
      ++dist_n;
      rep.loss.dist_terms += static_cast<int>(r_novel.numel());
      if (!rep.dist_fallback || static_cast<int>(level) > static_cast<int>(*rep.dist_fallback)) {
        rep.dist_fallback = level;
      }
    }
  }

  LossParts parts;
  parts.cls = cls_sum / (2.0 * b);
  parts.mask = mask_sum / (2.0 * b);
  parts.sim = sim_n ? sim_sum / sim_n : sim_sum;
  if (dist_n) parts.dist = dist_sum / dist_n;
  if (comp_n) parts.comp = comp_sum / comp_n;
  const int cls_terms = rep.loss.cls_terms, mask_terms = rep.loss.mask_terms, sim_terms = rep.loss.sim_terms,
            dist_terms = rep.loss.dist_terms;
  auto full = loss_full(parts, config_.loss);
  rep.loss = full.report;
  rep.loss.cls_terms = cls_terms;
  rep.loss.mask_terms = mask_terms;
  rep.loss.sim_terms = sim_terms;
  rep.loss.dist_terms = dist_terms;
  rep.loss.comp_terms = comp_n;
  if (!std::isfinite(rep.loss.full)) dump_nonfinite(batch, rep.loss);

  optimizer_->zero_grad();
  full.total.backward();
  optimizer_->step();
  ++iteration_;
  update_running(rep.loss);
  return rep;
}

StepReport Trainer::step() { return train_step(sample_batch()); }

void Trainer::save(const fs::path& path, const json& extra) {
  Checkpoint ck;
  ck.config = model_->config();
  ck.tensors = model_tensors(model_);
  json steps = json::object();
  auto& state = optimizer_->state();
  for (const auto& item : model_->named_parameters()) {
    auto it = state.find(item.value().unsafeGetTensorImpl());
    if (it == state.end()) continue;
    auto& st = static_cast<torch::optim::AdamWParamState&>(*it->second);
    ck.tensors["optim/" + item.key() + "/exp_avg"] = st.exp_avg();
    ck.tensors["optim/" + item.key() + "/exp_avg_sq"] = st.exp_avg_sq();
    steps[item.key()] = st.step();
  }
  std::ostringstream rng_state;
  rng_state << rng_;
  ck.metadata = json{{"kind", "train_state"},   {"iteration", iteration_}, {"rng", rng_state.str()},
                     {"optim_steps", steps},    {"running", running_},     {"train_config", config_}};
  for (const auto& [k, v] : extra.items()) ck.metadata[k] = v;
  write_checkpoint(path, ck);
}

json Trainer::load(const fs::path& path) {
  auto ck = read_checkpoint(path);
  load_model_tensors(model_, ck.tensors);
  const auto& meta = ck.metadata;
  if (meta.value("kind", "") != "train_state") throw std::runtime_error("checkpoint: not a training state: " + path.string());
  iteration_ = meta.at("iteration").get<long>();
  std::istringstream rng_state(meta.at("rng").get<std::string>());
  rng_state >> rng_;
  running_ = meta.at("running").get<std::map<std::string, double>>();

  auto& state = optimizer_->state();
  state.clear();
  const auto& steps = meta.at("optim_steps");
  for (const auto& item : model_->named_parameters()) {
    if (!steps.contains(item.key())) continue;
    auto st = std::make_unique<torch::optim::AdamWParamState>();
    st->step(steps.at(item.key()).get<int64_t>());
    st->exp_avg(ck.tensors.at("optim/" + item.key() + "/exp_avg").to(item.value().scalar_type()).clone());
    st->exp_avg_sq(ck.tensors.at("optim/" + item.key() + "/exp_avg_sq").to(item.value().scalar_type()).clone());
    state[item.value().unsafeGetTensorImpl()] = std::move(st);
  }
  return meta;
}

namespace {

json eval_line(long iteration, const IoUReport& report, const std::map<std::string, double>& running, double lr) {
  json j = report;
  j["iteration"] = iteration;
  j["loss_running"] = running;
  j["lr"] = lr;
  j.erase("totals");
  return j;
}

}  // namespace

TrainResult run_training(const TrainConfig& config, const DatasetManifest& manifest, const fs::path& out_dir) {
  const auto start = std::chrono::steady_clock::now();
  TrainConfig cfg = config;
  cfg.model.num_classes = manifest.config.num_classes;
  cfg.model.height = manifest.config.image_size;
  cfg.model.width = manifest.config.image_size;
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("io_error: cannot create " + out_dir.string() + ": " + ec.message());

  const TrainingData data = TrainingData::prepare(manifest, cfg.mode);
  Trainer trainer(cfg, data);
  trainer.set_dump_dir(out_dir);

  TrainResult result;
  result.last_checkpoint = out_dir / "last.ckpt";
  result.best_checkpoint = out_dir / "best.ckpt";
  double best = -1.0;
  double prior_seconds = 0.0;  // wall time spent before a resume
  bool have_report = false;
  if (fs::exists(result.last_checkpoint)) {
    const auto meta = trainer.load(result.last_checkpoint);
    best = meta.value("best_novel_iou", -1.0);
    prior_seconds = meta.value("train_seconds", 0.0);
    if (meta.contains("last_report")) {
      result.final_report.mean_novel_iou = meta["last_report"].value("novel", 0.0);
      result.final_report.mean_base_iou = meta["last_report"].value("base", 0.0);
    }
  }
  {
    std::ofstream cfg_out(out_dir / "train_config.json");
    cfg_out << json(cfg).dump(2) << '\n';
  }
  std::ofstream metrics(out_dir / "metrics.jsonl", std::ios::app);
  std::ofstream log(out_dir / "train_log.jsonl", std::ios::app);
  if (!metrics || !log) throw std::runtime_error("io_error: cannot write logs in " + out_dir.string());

  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
  auto evaluate_and_save = [&](double lr) {
    auto report = evaluate_model(trainer.model(), data.test, manifest.split);
    metrics << eval_line(trainer.iteration(), report, trainer.running(), lr).dump() << '\n';
    metrics.flush();
    const double novel = std::isfinite(report.mean_novel_iou) ? report.mean_novel_iou : 0.0;
    json extra{{"last_report", {{"novel", novel}, {"base", std::isfinite(report.mean_base_iou) ? report.mean_base_iou : 0.0}}},
               {"train_seconds", prior_seconds + elapsed()}};
    if (novel > best) {
      best = novel;
      extra["best_novel_iou"] = best;
      trainer.save(result.best_checkpoint, extra);
    }
    extra["best_novel_iou"] = best;
    trainer.save(result.last_checkpoint, extra);
    result.final_report = report;
    have_report = true;
  };

  while (trainer.iteration() < cfg.total_iters) {
    const auto rep = trainer.step();
    if (trainer.iteration() % cfg.log_interval == 0) {
      json line = rep;
      line["running"] = trainer.running();
      log << line.dump() << '\n';
      log.flush();
    }
    if (trainer.iteration() % cfg.eval_interval == 0 || trainer.iteration() == cfg.total_iters) {
      evaluate_and_save(rep.lr);
    }
  }
  if (!have_report && !fs::exists(result.last_checkpoint)) evaluate_and_save(0.0);
  if (!have_report) result.final_report = evaluate_model(trainer.model(), data.test, manifest.split);

  result.best_novel_iou = best;
  result.iterations = trainer.iteration();
  result.seconds = prior_seconds + elapsed();
  return result;
}

DatasetManifest write_mixed_label_dataset(SimFormerModel& teacher, const DatasetManifest& manifest,
                                          const fs::path& out_dir) {
  DatasetManifest mixed = manifest;
  mixed.root = out_dir;
  std::error_code ec;
  fs::create_directories(out_dir / "train", ec);
  fs::create_directories(out_dir / "test", ec);
  if (ec) throw std::runtime_error("io_error: cannot create " + out_dir.string() + ": " + ec.message());

  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < manifest.train_ids.size(); start += kChunk) {
    const std::size_t stop = std::min(manifest.train_ids.size(), start + kChunk);
    std::vector<WeakShotSample> weak;
    for (std::size_t i = start; i < stop; ++i) {
      weak.push_back(make_weakshot(load_full_sample(manifest, "train", manifest.train_ids[i]), manifest.split));
    }
    std::vector<const Image*> images;
    for (const auto& w : weak) images.push_back(&w.image);
    const auto results = segment_images(teacher, images);
    for (std::size_t i = 0; i < weak.size(); ++i) {
      const auto& id = manifest.train_ids[start + i];
      fs::copy_file(image_path(manifest, "train", id), image_path(mixed, "train", id),
                    fs::copy_options::overwrite_existing);
      png::write_gray(mask_path(mixed, "train", id), make_pseudo_labels(weak[i], results[i], manifest.split));
    }
  }
  for (const auto& id : manifest.test_ids) {
    fs::copy_file(image_path(manifest, "test", id), image_path(mixed, "test", id), fs::copy_options::overwrite_existing);
    fs::copy_file(mask_path(manifest, "test", id), mask_path(mixed, "test", id), fs::copy_options::overwrite_existing);
  }
  mixed.save();
  return mixed;
}

TrainResult run_retraining(const TrainConfig& config, const DatasetManifest& manifest, const fs::path& teacher_checkpoint,
                           const fs::path& out_dir) {
  if (!fs::exists(teacher_checkpoint)) {
    throw std::runtime_error("io_error: teacher checkpoint not found: " + teacher_checkpoint.string());
  }
  auto teacher = load_model(teacher_checkpoint);
  const auto mixed = write_mixed_label_dataset(teacher, manifest, out_dir / "mixed_data");
  TrainConfig student = config;
  student.mode = TrainMode::kFull;
  student.pixel_transfer = false;
  student.comp_loss = false;
  return run_training(student, mixed, out_dir / "student");
}

}  // namespace simformer
