#include "simformer/synthdata.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>

#include "simformer/png_io.hpp"

namespace simformer {

namespace fs = std::filesystem;
using nlohmann::json;

bool ClassSplit::is_base(int id) const {
  return std::binary_search(base_ids.begin(), base_ids.end(), id);
}

bool ClassSplit::is_novel(int id) const {
  return std::binary_search(novel_ids.begin(), novel_ids.end(), id);
}

ClassSplit ClassSplit::all_base(int num_classes) {
  ClassSplit s;
  for (int c = 0; c < num_classes; ++c) s.base_ids.push_back(c);
  return s;
}

void to_json(json& j, const ClassSplit& s) {
  j = json{{"base_ids", s.base_ids},
           {"novel_ids", s.novel_ids},
           {"ignore_id", s.ignore_id},
           {"num_semantic", s.num_semantic()}};
}

void from_json(const json& j, ClassSplit& s) {
  j.at("base_ids").get_to(s.base_ids);
  j.at("novel_ids").get_to(s.novel_ids);
  s.ignore_id = j.value("ignore_id", kIgnoreId);
  std::sort(s.base_ids.begin(), s.base_ids.end());
  std::sort(s.novel_ids.begin(), s.novel_ids.end());
}

void to_json(json& j, const GenerationConfig& c) {
  j = json{{"image_size", c.image_size},
           {"num_classes", c.num_classes},
           {"num_background", c.num_background},
           {"train_samples", c.train_samples},
           {"test_samples", c.test_samples},
           {"min_foreground", c.min_foreground},
           {"max_foreground", c.max_foreground},
           {"two_background_prob", c.two_background_prob},
           {"base_fraction", c.base_fraction},
           {"cooccurrence_floor", c.cooccurrence_floor},
           {"min_class_images", c.min_class_images},
           {"max_attempts", c.max_attempts}};
}

void from_json(const json& j, GenerationConfig& c) {
  GenerationConfig d;
  c.image_size = j.value("image_size", d.image_size);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.num_background = j.value("num_background", d.num_background);
  c.train_samples = j.value("train_samples", d.train_samples);
  c.test_samples = j.value("test_samples", d.test_samples);
  c.min_foreground = j.value("min_foreground", d.min_foreground);
  c.max_foreground = j.value("max_foreground", d.max_foreground);
  c.two_background_prob = j.value("two_background_prob", d.two_background_prob);
  c.base_fraction = j.value("base_fraction", d.base_fraction);
  c.cooccurrence_floor = j.value("cooccurrence_floor", d.cooccurrence_floor);
  c.min_class_images = j.value("min_class_images", d.min_class_images);
  c.max_attempts = j.value("max_attempts", d.max_attempts);
}

DatasetManifest DatasetManifest::load(const fs::path& root) {
  std::ifstream in(root / "manifest.json");
  if (!in) throw std::runtime_error("io_error: cannot open " + (root / "manifest.json").string());
  json j = json::parse(in);
  DatasetManifest m;
  m.root = root;
  j.at("split").get_to(m.split);
  j.at("train_ids").get_to(m.train_ids);
  j.at("test_ids").get_to(m.test_ids);
  for (auto& [id, labels] : j.at("image_labels").items()) {
    m.image_labels[id] = labels.get<std::set<int>>();
  }
  if (j.contains("config")) j.at("config").get_to(m.config);
  m.seed = j.value("seed", std::uint64_t{0});
  m.effective_seed = j.value("effective_seed", m.seed);
  return m;
}

void DatasetManifest::save() const {
  json labels = json::object();
  for (const auto& [id, set] : image_labels) labels[id] = set;
  json j{{"split", split},
         {"train_ids", train_ids},
         {"test_ids", test_ids},
         {"image_labels", labels},
         {"config", config},
         {"seed", seed},
         {"effective_seed", effective_seed}};
  std::ofstream out(root / "manifest.json");
  if (!out) throw std::runtime_error("io_error: cannot write " + (root / "manifest.json").string());
  out << j.dump(1) << '\n';
}

ClassSplit split_classes(const std::set<int>& all_ids, double base_fraction, std::uint64_t seed) {
  if (all_ids.empty()) throw std::invalid_argument("split_classes: empty class set");
  if (!(base_fraction > 0.0 && base_fraction < 1.0)) {
    throw std::invalid_argument("split_classes: base_fraction must lie in (0,1)");
  }
  if (all_ids.size() < 2) throw std::invalid_argument("split_classes: need at least two classes");
  const int total = static_cast<int>(all_ids.size());
  int num_base = static_cast<int>(std::lround(base_fraction * total));
  num_base = std::clamp(num_base, 1, total - 1);

  std::vector<int> ids(all_ids.begin(), all_ids.end());
  Rng rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);

  ClassSplit split;
  split.base_ids.assign(ids.begin(), ids.begin() + num_base);
  split.novel_ids.assign(ids.begin() + num_base, ids.end());
  std::sort(split.base_ids.begin(), split.base_ids.end());
  std::sort(split.novel_ids.begin(), split.novel_ids.end());
  return split;
}

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::array<float, 3> hsv_to_rgb(float h, float s, float v) {
  const float c = v * s;
  const float hp = std::fmod(h / 60.0f, 6.0f);
  const float x = c * (1.0f - std::fabs(std::fmod(hp, 2.0f) - 1.0f));
  float r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const float m = v - c;
  return {r + m, g + m, b + m};
}

// Each class owns a color family (hue) and a texture pattern.
struct ClassAppearance {
  std::array<float, 3> color;
  int pattern;
};

ClassAppearance appearance(int class_id, int num_classes) {
  const float hue = 360.0f * static_cast<float>(class_id) / static_cast<float>(std::max(num_classes, 1));
  const bool alt = class_id % 2 == 1;
  return {hsv_to_rgb(hue, alt ? 0.55f : 0.85f, alt ? 0.65f : 0.9f), class_id % 4};
}

float texture(int pattern, int h, int w) {
  constexpr float kTwoPi = 2.0f * std::numbers::pi_v<float>;
  switch (pattern) {
    case 1: return 0.5f + 0.5f * std::sin(kTwoPi * static_cast<float>(w) / 6.0f);
    case 2: return 0.5f + 0.5f * std::sin(kTwoPi * static_cast<float>(h) / 6.0f);
    case 3: return ((h / 4 + w / 4) % 2 == 0) ? 1.0f : 0.0f;
    default: return 0.5f;
  }
}

enum class Shape { kCircle, kEllipse, kRectangle, kTriangle };

struct ShapeSpec {
  Shape kind;
  float cy, cx, ry, rx, angle;
  std::array<float, 6> tri;  // y0,x0,y1,x1,y2,x2
};

ShapeSpec random_shape(int size, Rng& rng) {
  std::uniform_int_distribution<int> kind(0, 3);
  std::uniform_real_distribution<float> center(0.15f * size, 0.85f * size);
  std::uniform_real_distribution<float> radius(0.12f * size, 0.26f * size);
  std::uniform_real_distribution<float> angle(0.0f, std::numbers::pi_v<float>);
  ShapeSpec s{};
  s.kind = static_cast<Shape>(kind(rng));
  s.cy = center(rng);
  s.cx = center(rng);
  s.ry = radius(rng);
  s.rx = s.kind == Shape::kCircle ? s.ry : radius(rng);
  s.angle = angle(rng);
  if (s.kind == Shape::kTriangle) {
    for (int v = 0; v < 3; ++v) {
      const float a = s.angle + 2.0f * std::numbers::pi_v<float> * v / 3.0f;
      s.tri[2 * v] = s.cy + 1.3f * s.ry * std::sin(a);
      s.tri[2 * v + 1] = s.cx + 1.3f * s.ry * std::cos(a);
    }
  }
  return s;
}

bool inside(const ShapeSpec& s, float y, float x) {
  switch (s.kind) {
    case Shape::kCircle: {
      const float dy = y - s.cy, dx = x - s.cx;
      return dy * dy + dx * dx <= s.ry * s.ry;
    }
    case Shape::kEllipse: {
      const float dy = y - s.cy, dx = x - s.cx;
      const float c = std::cos(s.angle), sn = std::sin(s.angle);
      const float u = c * dx + sn * dy, v = -sn * dx + c * dy;
      return (u * u) / (s.rx * s.rx) + (v * v) / (s.ry * s.ry) <= 1.0f;
    }
    case Shape::kRectangle:
      return std::fabs(y - s.cy) <= s.ry && std::fabs(x - s.cx) <= s.rx;
    case Shape::kTriangle: {
      auto edge = [&](int a, int b) {
        const float ay = s.tri[2 * a], ax = s.tri[2 * a + 1];
        const float by = s.tri[2 * b], bx = s.tri[2 * b + 1];
        return (bx - ax) * (y - ay) - (by - ay) * (x - ax);
      };
      const float e0 = edge(0, 1), e1 = edge(1, 2), e2 = edge(2, 0);
      return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
    }
  }
  return false;
}

void paint_image(const GenerationConfig& config, const LabelMap& mask, Rng& rng, Image& image) {
  std::uniform_real_distribution<float> noise(-0.05f, 0.05f);
  constexpr float kTextureAmp = 0.22f;
  for (int h = 0; h < mask.height; ++h) {
    for (int w = 0; w < mask.width; ++w) {
      const auto look = appearance(mask.at(h, w), config.num_classes);
      const float t = texture(look.pattern, h, w) - 0.5f;
      for (int ch = 0; ch < 3; ++ch) {
        image.at(h, w, ch) = std::clamp(look.color[ch] + kTextureAmp * t + noise(rng), 0.0f, 1.0f);
      }
    }
  }
}

}  // namespace

FullSample render_sample(const GenerationConfig& config, std::uint64_t sample_seed, const std::string& id) {
  const int size = config.image_size;
  const int num_fg_classes = config.num_classes - config.num_background;
  if (size <= 0 || config.num_background < 1 || num_fg_classes < 0) {
    throw std::invalid_argument("render_sample: invalid generation config");
  }
  const int max_fg = std::min(config.max_foreground, num_fg_classes);
  const int min_fg = std::min(config.min_foreground, max_fg);
  const int min_visible = std::max(1, size * size / 100);

  Rng rng(sample_seed);
  for (int attempt = 0;; ++attempt) {
    LabelMap mask(size, size, 1, 0);
    std::vector<int> wanted;

    std::vector<int> bgs(config.num_background);
    for (int i = 0; i < config.num_background; ++i) bgs[i] = i;
    std::shuffle(bgs.begin(), bgs.end(), rng);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const bool two_bg = config.num_background >= 2 && unit(rng) < config.two_background_prob;
    if (two_bg) {
      std::uniform_real_distribution<float> horizon(0.3f * size, 0.7f * size);
      std::uniform_real_distribution<float> slope(-0.3f, 0.3f);
      const float y0 = horizon(rng), k = slope(rng);
      for (int h = 0; h < size; ++h)
        for (int w = 0; w < size; ++w)
          mask.at(h, w) = static_cast<std::uint8_t>(h < y0 + k * (w - size / 2.0f) ? bgs[0] : bgs[1]);
      wanted = {bgs[0], bgs[1]};
    } else {
      std::fill(mask.data.begin(), mask.data.end(), static_cast<std::uint8_t>(bgs[0]));
      wanted = {bgs[0]};
    }

    std::vector<int> fgs(num_fg_classes);
    for (int i = 0; i < num_fg_classes; ++i) fgs[i] = config.num_background + i;
    std::shuffle(fgs.begin(), fgs.end(), rng);
    const int count = max_fg > 0 ? std::uniform_int_distribution<int>(min_fg, max_fg)(rng) : 0;
    for (int i = 0; i < count; ++i) {
      const ShapeSpec shape = random_shape(size, rng);
      for (int h = 0; h < size; ++h)
        for (int w = 0; w < size; ++w)
          if (inside(shape, h + 0.5f, w + 0.5f)) mask.at(h, w) = static_cast<std::uint8_t>(fgs[i]);
      wanted.push_back(fgs[i]);
    }

    std::vector<int> counts(256, 0);
    for (auto v : mask.data) ++counts[v];
    const bool visible = std::all_of(wanted.begin(), wanted.end(),
                                     [&](int c) { return counts[c] >= min_visible; });
    if (!visible && attempt < 64) continue;

    FullSample sample;
    sample.id = id;
    sample.image = Image(size, size, 3);
    paint_image(config, mask, rng, sample.image);
    sample.mask = std::move(mask);
    sample.present_classes = distinct_values(sample.mask);
    return sample;
  }
}

std::set<int> distinct_values(const LabelMap& mask) {
  std::array<bool, 256> seen{};
  for (auto v : mask.data) seen[v] = true;
  std::set<int> out;
  for (int v = 0; v < 256; ++v)
    if (seen[v]) out.insert(v);
  return out;
}

namespace {

bool meets_cooccurrence(const GenerationConfig& config, const std::vector<FullSample>& train) {
  const int k = config.num_classes;
  std::vector<int> single(k, 0);
  std::vector<int> joint(static_cast<std::size_t>(k) * k, 0);
  for (const auto& s : train) {
    for (int a : s.present_classes) {
      ++single[a];
      for (int b : s.present_classes) ++joint[a * k + b];
    }
  }
  for (int a = 0; a < k; ++a) {
    if (single[a] < config.min_class_images) return false;
    for (int b = a + 1; b < k; ++b)
      if (joint[a * k + b] < config.cooccurrence_floor) return false;
  }
  return true;
}

std::string sample_id(const char* subset, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%05d", subset, index);
  return buf;
}

}  // namespace

DatasetManifest generate_dataset(const GenerationConfig& config, std::uint64_t seed, const fs::path& root) {
  std::error_code ec;
  fs::create_directories(root / "train", ec);
  fs::create_directories(root / "test", ec);
  if (ec || !fs::is_directory(root / "train") || !fs::is_directory(root / "test")) {
    throw std::runtime_error("io_error: cannot create dataset directories under " + root.string());
  }

  std::set<int> all_ids;
  for (int c = 0; c < config.num_classes; ++c) all_ids.insert(c);

  DatasetManifest manifest;
  manifest.root = root;
  manifest.config = config;
  manifest.seed = seed;
  if (config.num_classes >= 2) {
    manifest.split = split_classes(all_ids, config.base_fraction, seed);
  } else {
    manifest.split.base_ids.assign(all_ids.begin(), all_ids.end());
  }

  std::vector<FullSample> train, test;
  for (int attempt = 0;; ++attempt) {
    const std::uint64_t effective = attempt == 0 ? seed : mix_seed(seed, 1000003ULL * attempt);
    train.clear();
    test.clear();
    for (int i = 0; i < config.train_samples; ++i)
      train.push_back(render_sample(config, mix_seed(effective, 2ULL * i), sample_id("train", i)));
    for (int i = 0; i < config.test_samples; ++i)
      test.push_back(render_sample(config, mix_seed(effective, 2ULL * i + 1), sample_id("test", i)));
    manifest.effective_seed = effective;
    if (meets_cooccurrence(config, train)) break;
    if (attempt + 1 >= config.max_attempts) {
      throw std::runtime_error("generate_dataset: co-occurrence floor not met after " +
                               std::to_string(config.max_attempts) + " attempts");
    }
  }

  auto write = [&](const std::vector<FullSample>& samples, const char* subset, std::vector<std::string>& ids) {
    for (const auto& s : samples) {
      png::write_rgb(root / subset / (s.id + "_img.png"), s.image);
      png::write_gray(root / subset / (s.id + "_mask.png"), s.mask);
      ids.push_back(s.id);
      manifest.image_labels[s.id] = s.present_classes;
    }
  };
  write(train, "train", manifest.train_ids);
  write(test, "test", manifest.test_ids);
  manifest.save();
  return manifest;
}

WeakShotSample make_weakshot(const FullSample& sample, const ClassSplit& split) {
  WeakShotSample out;
  out.source_id = sample.id;
  out.image = sample.image;
  out.mask = sample.mask;
  for (auto& v : out.mask.data) {
    if (split.is_novel(v)) {
      v = static_cast<std::uint8_t>(split.ignore_id);
    } else if (!split.is_base(v)) {
      throw std::invalid_argument("make_weakshot: unknown class id " + std::to_string(v) + " in mask");
    }
  }
  out.image_labels = sample.present_classes;
  return out;
}

ReferencePick sample_reference(const WeakShotSample& input, const DatasetManifest& manifest, Rng& rng) {
  if (manifest.train_ids.empty()) throw std::invalid_argument("sample_reference: empty manifest");
  const auto& split = manifest.split;
  auto shares = [](const std::set<int>& a, const std::set<int>& b, auto pred) {
    return std::any_of(a.begin(), a.end(), [&](int c) { return pred(c) && b.count(c) > 0; });
  };
  auto is_base = [&](int c) { return split.is_base(c); };
  auto is_novel = [&](int c) { return split.is_novel(c); };

  std::array<std::vector<const std::string*>, 3> tiers;
  for (const auto& id : manifest.train_ids) {
    if (id == input.source_id) continue;
    auto it = manifest.image_labels.find(id);
    if (it == manifest.image_labels.end()) continue;
    const bool base = shares(input.image_labels, it->second, is_base);
    const bool novel = shares(input.image_labels, it->second, is_novel);
    if (base && novel) tiers[0].push_back(&id);
    if (novel) tiers[1].push_back(&id);
    if (base) tiers[2].push_back(&id);
  }
  for (int level = 0; level < 3; ++level) {
    if (tiers[level].empty()) continue;
    std::uniform_int_distribution<std::size_t> pick(0, tiers[level].size() - 1);
    return {*tiers[level][pick(rng)], static_cast<ReferenceFallback>(level)};
  }
  return {input.source_id, ReferenceFallback::kSelf};
}

ReferenceFallback reference_level(const WeakShotSample& input, const WeakShotSample& ref, const ClassSplit& split) {
  if (input.source_id == ref.source_id) return ReferenceFallback::kSelf;
  bool base = false, novel = false;
  for (int c : input.image_labels) {
    if (!ref.image_labels.count(c)) continue;
    base = base || split.is_base(c);
    novel = novel || split.is_novel(c);
  }
  if (base && novel) return ReferenceFallback::kSharedBaseAndNovel;
  if (novel) return ReferenceFallback::kSharedNovelOnly;
  if (base) return ReferenceFallback::kSharedBaseOnly;
  return ReferenceFallback::kSelf;
}

fs::path image_path(const DatasetManifest& manifest, const std::string& subset, const std::string& id) {
  return manifest.root / subset / (id + "_img.png");
}

fs::path mask_path(const DatasetManifest& manifest, const std::string& subset, const std::string& id) {
  return manifest.root / subset / (id + "_mask.png");
}

FullSample load_full_sample(const DatasetManifest& manifest, const std::string& subset, const std::string& id) {
  FullSample s;
  s.id = id;
  s.image = png::read_rgb(image_path(manifest, subset, id));
  s.mask = png::read_gray(mask_path(manifest, subset, id));
  if (s.image.height != s.mask.height || s.image.width != s.mask.width) {
    throw std::runtime_error("io_error: image/mask size mismatch for " + id);
  }
  s.present_classes = distinct_values(s.mask);
  return s;
}

}  // namespace simformer
