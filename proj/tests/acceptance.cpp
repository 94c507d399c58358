// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any selected criterion fails.
//
// Criteria 5-10 train models on the default corpus. Finished runs are cached
// under the work directory and reused as long as config and corpus match.

#include <torch/torch.h>

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <numeric>
#include <random>
#include <sstream>

#include "grad_suite.hpp"
#include "protocol_checks.hpp"
#include "simformer/checkpoint.hpp"
#include "simformer/evaluation.hpp"
#include "simformer/experiments.hpp"
#include "simformer/inference.hpp"
#include "simformer/matching.hpp"
#include "simformer/sampling.hpp"
#include "simformer/training.hpp"
#include "test_util.hpp"

#ifndef SIMFORMER_ACCEPT_WORK
#define SIMFORMER_ACCEPT_WORK "acceptance_work"
#endif

using namespace simformer;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 2) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double max_of(const std::vector<double>& v) { return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end()); }

// ---------------------------------------------------------------------------
// Scalar oracles, written without torch.

double focal_px(double p, double g, const LossConfig& c) {
  p = std::clamp(p, c.eps, 1.0 - c.eps);
  const double pt = g > 0.5 ? p : 1.0 - p;
  const double at = g > 0.5 ? c.focal_alpha : 1.0 - c.focal_alpha;
  return -at * std::pow(1.0 - pt, c.focal_gamma) * std::log(pt);
}

double focal_dice(const std::vector<double>& p, const std::vector<double>& g, const LossConfig& c) {
  double focal = 0.0, inter = 0.0, sp = 0.0, sg = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    focal += focal_px(p[i], g[i], c);
    inter += p[i] * g[i];
    sp += p[i];
    sg += g[i];
  }
  focal /= static_cast<double>(p.size());
  const double dice = 1.0 - (2.0 * inter + c.dice_smooth) / (sp + sg + c.dice_smooth);
  return c.w_focal * focal + c.w_dice * dice;
}

double bce(double p, double y, double eps) {
  p = std::clamp(p, eps, 1.0 - eps);
  return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

std::vector<double> values(const torch::Tensor& t) {
  auto c = t.to(torch::kFloat64).contiguous();
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

// ---------------------------------------------------------------------------
// Criteria 1-4, 11, 12: fast, no training.

Verdict matching_oracle() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> pick_n(1, 7);
  std::uniform_real_distribution<double> entry(-5.0, 5.0);
  int mismatches = 0;
  for (int k = 0; k < 200; ++k) {
    const int n = pick_n(rng);
    const int t = std::uniform_int_distribution<int>(1, n)(rng);
    CostMatrix c(t, n);
    for (auto& v : c.data) v = entry(rng);
    if (assignment_cost(c, solve_assignment(c)) != testutil::brute_force_min(c)) ++mismatches;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {mismatches == 0 && secs < 10.0,
          "200 matrices, " + std::to_string(mismatches) + " mismatches, " + fmt(secs, 3) + " s"};
}

Verdict gradient_suite() {
  std::vector<gradsuite::SuiteResult> results{gradsuite::check_cls(20, 1),  gradsuite::check_focal_dice(20, 2),
                                              gradsuite::check_sim(20, 3),  gradsuite::check_dist(20, 4),
                                              gradsuite::check_comp(20, 5), gradsuite::check_model(21, 6)};
  const bool no_grad = gradsuite::dist_source_has_no_grad(7);
  bool ok = no_grad;
  std::ostringstream os;
  for (const auto& r : results) {
    ok = ok && r.instances >= 20 && r.max_rel_error <= gradsuite::kTolerance;
    os << r.name << " " << r.instances << "x max " << std::scientific << std::setprecision(1) << r.max_rel_error << "; ";
  }
  os << "R_n gradient " << (no_grad ? "none" : "PRESENT");
  return {ok, os.str()};
}

Verdict loss_spot_values() {
  const LossConfig cfg;
  const auto f64 = testutil::f64();
  std::vector<std::pair<std::string, std::pair<double, double>>> cases;  // name -> (library, oracle)

  {  // two proposals at probability 0.5
    auto y = torch::full({2, 2}, 0.5, f64);
    const Assignment a{{0, kNoObject}, {0, kIgnoreId}};
    cases.push_back({"cls 2ln2", {loss_cls(y, a, cfg).item<double>(), -2.0 * std::log(0.5)}});
  }
  {  // random Y, N = 4
    torch::manual_seed(31);
    auto y = torch::softmax(torch::randn({4, 4}, f64), 0);
    const Assignment a{{0, 1, kNoObject, 2}, {2, 0, kIgnoreId, 1}};
    const auto yv = values(y);
    double expect = 0.0;
    for (int i = 0; i < 4; ++i) {
      const int row = a.y_star[i] == kIgnoreId ? 3 : a.y_star[i];
      expect -= std::log(std::clamp(yv[row * 4 + i], cfg.eps, 1.0));
    }
    cases.push_back({"cls loop", {loss_cls(y, a, cfg).item<double>(), expect}});
  }
  {  // 0.5 grid, one pixel on
    auto p = torch::full({2, 2}, 0.5, f64);
    auto g = torch::tensor({{1.0, 0.0}, {0.0, 0.0}}, f64);
    cases.push_back({"focal+dice", {loss_focal_dice(p, g, cfg).item<double>(), focal_dice(values(p), values(g), cfg)}});
  }
  {  // two base proposals on 4x4 grids
    torch::manual_seed(32);
    auto m = testutil::uniform({2, 4, 4}, 0.05, 0.95);
    auto g0 = (torch::rand({4, 4}, f64) > 0.5).to(torch::kFloat64);
    auto g1 = (torch::rand({4, 4}, f64) > 0.5).to(torch::kFloat64);
    TargetSet t;
    t.entries = {{0, g0}, {1, g1}};
    ClassSplit split = ClassSplit::all_base(2);
    const Assignment a{{1, 0}, {1, 0}};
    const double expect = focal_dice(values(m[0]), values(g1), cfg) + focal_dice(values(m[1]), values(g0), cfg);
    cases.push_back({"mask sum", {loss_mask(m, a, t, split, cfg).item<double>(), expect}});
  }
  {  // all 0.5 and a random 3x3
    auto half = torch::full({3, 3}, 0.5, f64);
    auto labels = torch::tensor({{1.0, 0.0, 0.0}, {0.0, 1.0, 1.0}, {0.0, 0.0, 1.0}}, f64);
    cases.push_back({"sim ln2", {loss_sim(half, labels, cfg).item<double>(), std::log(2.0)}});
    torch::manual_seed(33);
    auto s = testutil::uniform({3, 3}, 0.01, 0.99);
    const auto sv = values(s), lv = values(labels);
    double expect = 0.0;
    for (std::size_t i = 0; i < sv.size(); ++i) expect += bce(sv[i], lv[i], cfg.eps);
    cases.push_back({"sim loop", {loss_sim(s, labels, cfg).item<double>(), expect / 9.0}});
  }
  {  // cosine + BCE on one pair of score columns
    auto a = torch::tensor({{0.8}, {0.2}}, f64), b = torch::tensor({{0.6}, {0.4}}, f64);
    const double cos = (0.8 * 0.6 + 0.2 * 0.4) / (std::hypot(0.8, 0.2) * std::hypot(0.6, 0.4));
    const double expect = bce(std::max(cos, 0.0), 1.0, cfg.eps);
    cases.push_back({"dist", {loss_dist(a, b, torch::ones({1, 1}, f64), cfg).item<double>(), expect}});
  }
  {  // no novel proposals, two no-object, base GT empty
    TargetSet t;
    t.entries = {{0, torch::zeros({2, 2}, f64)}};
    ClassSplit split;
    split.base_ids = {0, 1};
    split.novel_ids = {2};
    auto m = testutil::uniform({3, 2, 2}, 0.1, 0.9);
    const Assignment a{{0, kNoObject, kNoObject}, {0, kIgnoreId, kIgnoreId}};
    auto got = loss_comp(m, a, t, split, cfg);
    const double expect = focal_dice(std::vector<double>(4, cfg.gamma), std::vector<double>(4, 1.0), cfg);
    cases.push_back({"comp", {got ? got->item<double>() : NAN, expect}});
  }
  {  // cost matrix on a hand-set 2x2 instance
    ModelOutputs o;
    o.class_probs = torch::tensor({{0.6, 0.2}, {0.3, 0.5}, {0.1, 0.3}}, f64);
    o.mask_probs = torch::tensor({{{0.9, 0.8}, {0.1, 0.2}}, {{0.2, 0.1}, {0.7, 0.9}}}, f64);
    TargetSet t;
    t.entries = {{0, torch::tensor({{1.0, 1.0}, {0.0, 0.0}}, f64)}, {1, torch::tensor({{0.0, 0.0}, {1.0, 1.0}}, f64)}};
    const auto c = build_cost_matrix(o, t, ClassSplit::all_base(2), cfg);
    const auto y = values(o.class_probs);
    for (int ti = 0; ti < 2; ++ti)
      for (int i = 0; i < 2; ++i) {
        const double expect =
            -y[static_cast<std::size_t>(t.entries[ti].class_id * 2 + i)] + focal_dice(values(o.mask_probs[i]), values(t.entries[ti].mask), cfg);
        cases.push_back({"cost[" + std::to_string(ti) + "," + std::to_string(i) + "]", {c.at(ti, i), expect}});
      }
  }
  {  // [[1,2],[2,1]]
    CostMatrix c(2, 2);
    c.data = {1, 2, 2, 1};
    const auto m = solve_assignment(c);
    cases.push_back({"hungarian total", {assignment_cost(c, m), std::min(1.0 + 1.0, 2.0 + 2.0)}});
    cases.push_back({"hungarian t1", {static_cast<double>(m[1]), 1.0}});
  }
  cases.push_back({"poly lr", {poly_lr(1e-4, 10000, 20000, 0.9), 1e-4 * std::pow(0.5, 0.9)}});
  {  // class 2: two GT pixels, one hit plus one false positive
    ClassSplit s;
    s.base_ids = {0, 1};
    s.novel_ids = {2};
    LabelMap g(2, 2), p(2, 2);
    g.data = {2, 2, 0, 0};
    p.data = {2, 0, 2, 0};
    cases.push_back({"IoU", {compute_miou({p}, {g}, s).per_class_iou.at(2), 1.0 / 3.0}});
  }
  {  // constant 0.9 scorer, 3 of 8 similar
    PairConfusion c;
    c.add(torch::full({8}, 0.9, f64), torch::tensor({1, 1, 1, 0, 0, 0, 0, 0}, f64));
    const double frac = 3.0 / 8.0;
    cases.push_back({"F1 similar", {c.f1_similar(), 2 * frac / (frac + 1)}});
    cases.push_back({"F1 dissimilar", {c.f1_dissimilar(), 0.0}});
  }
  {  // input {1,2} vs reference {1,3}
    const auto l = values(pair_labels({1, 2}, {1, 3}, f64));
    const std::vector<double> expect{1, 0, 0, 0};
    double diff = 0.0;
    for (std::size_t i = 0; i < 4; ++i) diff += std::fabs(l[i] - expect[i]);
    cases.push_back({"pair labels", {diff, 0.0}});
  }

  int bad = 0;
  std::string first;
  for (const auto& [name, v] : cases) {
    if (!(std::fabs(v.first - v.second) <= 1e-6)) {
      if (bad++ == 0) first = name + " got " + fmt(v.first, 9) + " want " + fmt(v.second, 9);
    }
  }
  // Headline values, pinned independently of the oracles above.
  const double cls2 = cases[0].second.first;
  const double dist = std::find_if(cases.begin(), cases.end(), [](auto& c) { return c.first == "dist"; })->second.first;
  const bool headline = std::fabs(cls2 - 1.3862943611198906) <= 1e-6 && std::fabs(dist - 0.0600) <= 1e-3;
  return {bad == 0 && headline, std::to_string(cases.size()) + " values, " + std::to_string(bad) + " off" +
                                    (first.empty() ? "" : " (" + first + ")") + "; cls " + fmt(cls2, 6) + ", dist " +
                                    fmt(dist, 6)};
}

Verdict inference_equivalence() {
  torch::manual_seed(44);
  int equal = 0;
  for (int k = 0; k < 20; ++k) {
    const int64_t classes = 2 + k % 4, n = 1 + k % 5, h = 3 + k % 3, w = 4 + k % 2;
    auto y = torch::softmax(torch::randn({classes + 1, n}, testutil::f64()), 0);
    auto m = torch::rand({n, h, w}, testutil::f64());
    if (semantic_segment(y, m).labels == testutil::brute_force_segment(y, m)) ++equal;
  }
  return {equal == 20, std::to_string(equal) + "/20 instances bit-equal"};
}

Verdict protocol_integrity(const fs::path& work) {
  GenerationConfig g;
  g.train_samples = 900;
  g.test_samples = 100;
  const fs::path dir = work / "protocol_corpus";
  std::optional<DatasetManifest> m;
  if (fs::exists(dir / "manifest.json")) {
    auto loaded = DatasetManifest::load(dir);
    if (json(loaded.config) == json(g)) m = loaded;
  }
  if (!m) {
    fs::remove_all(dir);
    m = generate_dataset(g, 11, dir);
  }
  const auto rep = protocol::check_corpus(*m, 3, 5);
  return {rep.ok() && rep.samples >= 1000, rep.summary()};
}

Verdict significance() {
  const auto same = significance_test({10, 10.1, 9.9, 10.05, 9.95}, {10, 10.1, 9.9, 10.05, 9.95});
  const auto sep = significance_test({10, 10.1, 9.9, 10.05, 9.95}, {20, 20.1, 19.9, 20.05, 19.95});
  std::ostringstream os;
  os << "identical p=" << same.p_value << ", separated p=" << std::scientific << std::setprecision(3) << sep.p_value;
  return {same.p_value == 1.0 && sep.p_value < 1e-6, os.str()};
}

// ---------------------------------------------------------------------------
// Criteria 5-10: trained on the default corpus.

class Experiments {
 public:
  static constexpr int kDefaultIters = 1500;

  // Non-default budgets get their own cache so the default one survives.
  Experiments(const fs::path& work, int iters)
      : work_(iters == kDefaultIters ? work : work / ("iters_" + std::to_string(iters))) {
    base_.lr0 = 1e-3;
    base_.total_iters = iters;
    base_.pairs_per_image = 32;
    base_.eval_interval = iters;
  }

  const DatasetManifest& corpus() {
    if (!manifest_) {
      const GenerationConfig g;
      const fs::path dir = work_ / "data";
      if (fs::exists(dir / "manifest.json")) {
        auto loaded = DatasetManifest::load(dir);
        if (json(loaded.config) == json(g)) manifest_ = loaded;
      }
      if (!manifest_) {
        fs::remove_all(dir);
        manifest_ = generate_dataset(g, 0, dir);
      }
    }
    return *manifest_;
  }

  const TrainConfig& config() const { return base_; }

  SeedRuns variant(const std::string& label) {
    return run_seeds(label, ablation_config(base_, label), corpus(), seeds_, work_ / "ablation" / label);
  }
  SeedRuns teacher() { return variant("Pr+Pi+Co"); }

  SeedRuns custom(const std::string& name, const std::function<void(TrainConfig&)>& edit) {
    TrainConfig cfg = ablation_config(base_, "Pr+Pi+Co");
    edit(cfg);
    return run_seeds(name, cfg, corpus(), seeds_, work_ / name);
  }

  SeedRuns retrained() {
    teacher();
    return run_retrain_seeds("retrained", ablation_config(base_, "Pr+Pi+Co"), corpus(), seeds_,
                             work_ / "ablation" / "Pr+Pi+Co", work_ / "retrain");
  }

  const std::vector<std::uint64_t>& seeds() const { return seeds_; }
  const fs::path& work() const { return work_; }

 private:
  fs::path work_;
  TrainConfig base_;
  std::vector<std::uint64_t> seeds_{1, 2, 3};
  std::optional<DatasetManifest> manifest_;
};

std::string runs_text(const SeedRuns& r) {
  std::ostringstream os;
  os << r.label << " " << fmt(r.novel_mean) << " [";
  for (std::size_t i = 0; i < r.novel.size(); ++i) os << (i ? " " : "") << fmt(r.novel[i], 1);
  os << "]";
  return os.str();
}

Verdict ablation_ordering(Experiments& ex) {
  std::vector<SeedRuns> rows;
  for (const auto& label : ablation_labels()) rows.push_back(ex.variant(label));
  write_runs_table(ex.work() / "ablation" / "ablation", rows);
  std::cout << format_runs_table(rows);
  const double pr = rows[0].novel_mean, pi = rows[1].novel_mean, co = rows[2].novel_mean, all = rows[3].novel_mean;
  double slowest = 0.0;
  for (const auto& r : rows) slowest = std::max(slowest, max_of(r.seconds));
  const bool pi_ok = pi > pr + 1.0, co_ok = co > pr + 1.0, all_ok = all >= std::max(pi, co) - 0.5;
  const bool time_ok = slowest <= 20 * 60;
  std::ostringstream os;
  os << "novel mIoU Pr " << fmt(pr) << ", Pr+Pi " << fmt(pi) << (pi_ok ? "" : " (not > Pr+1)") << ", Pr+Co " << fmt(co)
     << (co_ok ? "" : " (not > Pr+1)") << ", Pr+Pi+Co " << fmt(all) << (all_ok ? "" : " (below two-module max-0.5)")
     << "; slowest run " << fmt(slowest / 60.0, 1) << " min";
  return {pi_ok && co_ok && all_ok && time_ok, os.str()};
}

Verdict oracle_dominance(Experiments& ex) {
  const auto weak = ex.teacher();
  const auto full = ex.custom("full_supervision", [](TrainConfig& c) { c.mode = TrainMode::kFull; });
  return {full.novel_mean >= weak.novel_mean, runs_text(full) + " vs " + runs_text(weak)};
}

Verdict retrain_gain(Experiments& ex) {
  const auto teacher = ex.teacher();
  const auto student = ex.retrained();
  const double gain = student.novel_mean - teacher.novel_mean;
  return {gain >= -0.5, runs_text(student) + " vs teacher " + runs_text(teacher) + ", gain " + fmt(gain) +
                            (gain > 0 ? " (strict improvement)" : " (no strict improvement)")};
}

Verdict simnet_transfer(Experiments& ex) {
  ex.teacher();
  const auto corpus = LoadedCorpus::load(ex.corpus());
  std::vector<double> dis, sim;
  for (auto seed : ex.seeds()) {
    auto model = load_model(ex.work() / "ablation" / "Pr+Pi+Co" / ("seed" + std::to_string(seed)) / "last.ckpt");
    Rng rng(seed);
    const auto r = eval_simnet_f1(model, corpus, 100, ex.config().pairs_per_image, rng);
    dis.push_back(r.novel_dis);
    sim.push_back(r.novel_sim);
  }
  std::ostringstream os;
  os << "novel Dis F1 " << fmt(mean(dis), 3) << ", Sim F1 " << fmt(mean(sim), 3) << " (per seed";
  for (std::size_t i = 0; i < dis.size(); ++i) os << " " << fmt(dis[i], 2) << "/" << fmt(sim[i], 2);
  os << ")";
  return {mean(dis) >= 0.6 && mean(sim) >= 0.6, os.str()};
}

Verdict gamma_sensitivity(Experiments& ex) {
  const auto low = ex.teacher();
  const auto high = ex.custom("gamma_0.9", [](TrainConfig& c) { c.loss.gamma = 0.9; });
  return {low.novel_mean - high.novel_mean >= 1.0, "gamma 0.1 " + runs_text(low) + " vs gamma 0.9 " + runs_text(high)};
}

Verdict cross_vs_self(Experiments& ex) {
  const auto cross = ex.teacher();
  const auto self = ex.custom("self_pair", [](TrainConfig& c) { c.self_pair = true; });
  return {cross.novel_mean >= self.novel_mean - 0.5, "cross " + runs_text(cross) + " vs self " + runs_text(self)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> only;
  std::string work = SIMFORMER_ACCEPT_WORK;
  int iters = Experiments::kDefaultIters;
  app.add_option("--only", only, "Criteria to run (default all)")->check(CLI::Range(1, 12));
  app.add_option("--work", work, "Cache directory for corpora and training runs")->capture_default_str();
  app.add_option("--iters", iters, "Training iterations per run")->capture_default_str()->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);
  if (only.empty())
    for (int i = 1; i <= 12; ++i) only.push_back(i);

  fs::create_directories(work);
  Experiments ex(work, iters);

  const std::map<int, std::pair<std::string, std::function<Verdict()>>> criteria{
      {1, {"matching oracle", matching_oracle}},
      {2, {"gradient checks", gradient_suite}},
      {3, {"loss spot values", loss_spot_values}},
      {4, {"inference equivalence", inference_equivalence}},
      {5, {"ablation ordering", [&] { return ablation_ordering(ex); }}},
      {6, {"full-supervision oracle dominance", [&] { return oracle_dominance(ex); }}},
      {7, {"re-training gain", [&] { return retrain_gain(ex); }}},
      {8, {"SimNet transfer to novel pairs", [&] { return simnet_transfer(ex); }}},
      {9, {"gamma sensitivity", [&] { return gamma_sensitivity(ex); }}},
      {10, {"cross-image vs self pairs", [&] { return cross_vs_self(ex); }}},
      {11, {"weak-shot protocol integrity", [&] { return protocol_integrity(work); }}},
      {12, {"significance test", significance}},
  };

  int failures = 0;
  for (int id : only) {
    const auto& [name, fn] = criteria.at(id);
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failures += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << v.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
