#include <doctest.h>

#include <fstream>

#include "protocol_checks.hpp"
#include "simformer/png_io.hpp"
#include "simformer/synthdata.hpp"
#include "test_util.hpp"

using namespace simformer;

namespace {

std::set<int> range_ids(int n) {
  std::set<int> s;
  for (int i = 0; i < n; ++i) s.insert(i);
  return s;
}

GenerationConfig small_config() {
  GenerationConfig c;
  c.image_size = 32;
  c.train_samples = 120;
  c.test_samples = 20;
  c.cooccurrence_floor = 3;
  c.min_class_images = 8;
  return c;
}

FullSample full_from(std::vector<std::uint8_t> values, int h, int w) {
  FullSample s;
  s.id = "x";
  s.image = Image(h, w, 3);
  s.mask = LabelMap(h, w);
  s.mask.data = std::move(values);
  s.present_classes = distinct_values(s.mask);
  return s;
}

WeakShotSample weak_with(const std::string& id, std::set<int> labels) {
  WeakShotSample w;
  w.source_id = id;
  w.image_labels = std::move(labels);
  return w;
}

}  // namespace

TEST_CASE("split_classes") {
  SUBCASE("3:1 on twelve classes") {
    auto s = split_classes(range_ids(12), 0.75, 0);
    CHECK(s.base_ids.size() == 9);
    CHECK(s.novel_ids.size() == 3);
    for (int c : s.base_ids) CHECK_FALSE(s.is_novel(c));
    CHECK(s.num_semantic() == 12);
    CHECK(std::is_sorted(s.base_ids.begin(), s.base_ids.end()));
  }
  SUBCASE("minimum partition and half split") {
    auto two = split_classes(range_ids(2), 0.5, 4);
    CHECK(two.base_ids.size() == 1);
    CHECK(two.novel_ids.size() == 1);
    auto half = split_classes(range_ids(12), 0.5, 4);
    CHECK(half.base_ids.size() == 6);
    CHECK(half.novel_ids.size() == 6);
    CHECK(split_classes(range_ids(3), 0.01, 1).base_ids.size() == 1);
    CHECK(split_classes(range_ids(3), 0.99, 1).novel_ids.size() == 1);
  }
  SUBCASE("deterministic per seed") {
    CHECK(split_classes(range_ids(12), 0.75, 9).base_ids == split_classes(range_ids(12), 0.75, 9).base_ids);
  }
  SUBCASE("uniform over 1000 seeds") {
    std::map<int, int> base_count;
    for (std::uint64_t seed = 0; seed < 1000; ++seed)
      for (int c : split_classes(range_ids(12), 0.75, seed).base_ids) ++base_count[c];
    for (int c = 0; c < 12; ++c) {
      INFO("class " << c);
      CHECK(std::abs(base_count[c] / 1000.0 - 0.75) <= 0.075);
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(split_classes({}, 0.5, 0), std::invalid_argument);
    CHECK_THROWS_AS(split_classes(range_ids(4), 0.0, 0), std::invalid_argument);
    CHECK_THROWS_AS(split_classes(range_ids(4), 1.0, 0), std::invalid_argument);
    CHECK_THROWS_AS(split_classes({3}, 0.5, 0), std::invalid_argument);
  }
  SUBCASE("json round trip") {
    auto s = split_classes(range_ids(12), 0.75, 2);
    nlohmann::json j = s;
    auto back = j.get<ClassSplit>();
    CHECK(back.base_ids == s.base_ids);
    CHECK(back.novel_ids == s.novel_ids);
    CHECK(back.ignore_id == 255);
  }
}

TEST_CASE("render_sample") {
  SUBCASE("degenerate config gives a constant mask") {
    GenerationConfig c;
    c.num_classes = 1;
    c.num_background = 1;
    c.min_foreground = 0;
    c.max_foreground = 0;
    c.image_size = 16;
    auto s = render_sample(c, 3, "d");
    CHECK(s.present_classes == std::set<int>{0});
    for (float v : s.image.data) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
  SUBCASE("default config") {
    GenerationConfig c;
    auto s = render_sample(c, 11, "s");
    CHECK(s.mask.height == 64);
    CHECK(s.image.channels == 3);
    CHECK(s.present_classes == distinct_values(s.mask));
    int fg = 0;
    for (int v : s.present_classes) {
      CHECK(v < 12);
      fg += v >= c.num_background;
    }
    CHECK(fg >= 2);
    CHECK(fg <= 4);
    CHECK(render_sample(c, 11, "s").mask == s.mask);
  }
  SUBCASE("invalid config") {
    GenerationConfig c;
    c.num_background = 0;
    CHECK_THROWS_AS(render_sample(c, 0, "x"), std::invalid_argument);
  }
}

TEST_CASE("make_weakshot") {
  ClassSplit s;
  s.base_ids = {0, 1, 2};
  s.novel_ids = {5, 7};
  SUBCASE("novel pixels become ignore") {
    auto w = make_weakshot(full_from({1, 5, 5, 1}, 2, 2), s);
    CHECK(w.mask.data == std::vector<std::uint8_t>{1, 255, 255, 1});
    CHECK(w.image_labels == std::set<int>{1, 5});
    CHECK(w.source_id == "x");
  }
  SUBCASE("all base is unchanged") {
    auto f = full_from({0, 1, 2, 1}, 2, 2);
    auto w = make_weakshot(f, s);
    CHECK(w.mask == f.mask);
    CHECK(w.image_labels == f.present_classes);
  }
  SUBCASE("all novel") {
    auto w = make_weakshot(full_from({7, 7, 7, 7}, 2, 2), s);
    for (auto v : w.mask.data) CHECK(v == 255);
    CHECK(w.image_labels == std::set<int>{7});
  }
  SUBCASE("unknown id") { CHECK_THROWS_AS(make_weakshot(full_from({0, 9}, 1, 2), s), std::invalid_argument); }
}

TEST_CASE("sample_reference") {
  DatasetManifest m;
  m.split.base_ids = {1, 2};
  m.split.novel_ids = {5, 7};
  auto add = [&](const std::string& id, std::set<int> labels) {
    m.train_ids.push_back(id);
    m.image_labels[id] = std::move(labels);
  };
  Rng rng(0);
  SUBCASE("unique qualifier") {
    add("in", {1, 5});
    add("a", {1, 5, 7});
    add("b", {2, 7});
    auto p = sample_reference(weak_with("in", {1, 5}), m, rng);
    CHECK(p.id == "a");
    CHECK(p.level == ReferenceFallback::kSharedBaseAndNovel);
  }
  SUBCASE("no novel labels falls back to a shared base class") {
    add("in", {1, 2});
    add("a", {7});
    add("b", {2, 5});
    add("c", {1});
    for (int i = 0; i < 20; ++i) {
      auto p = sample_reference(weak_with("in", {1, 2}), m, rng);
      CHECK(p.level == ReferenceFallback::kSharedBaseOnly);
      CHECK((p.id == "b" || p.id == "c"));
    }
  }
  SUBCASE("shared novel only") {
    add("in", {1, 5});
    add("a", {2, 5});
    auto p = sample_reference(weak_with("in", {1, 5}), m, rng);
    CHECK(p.id == "a");
    CHECK(p.level == ReferenceFallback::kSharedNovelOnly);
  }
  SUBCASE("pool with only the input") {
    add("in", {1, 5});
    auto p = sample_reference(weak_with("in", {1, 5}), m, rng);
    CHECK(p.id == "in");
    CHECK(p.level == ReferenceFallback::kSelf);
  }
  SUBCASE("uniform among qualifiers") {
    add("in", {1, 5});
    add("a", {1, 5});
    add("b", {1, 5, 2});
    std::map<std::string, int> seen;
    for (int i = 0; i < 2000; ++i) ++seen[sample_reference(weak_with("in", {1, 5}), m, rng).id];
    CHECK(seen["a"] > 900);
    CHECK(seen["b"] > 900);
  }
  SUBCASE("empty manifest") {
    CHECK_THROWS_AS(sample_reference(weak_with("in", {1}), m, rng), std::invalid_argument);
  }
  SUBCASE("reference_level") {
    CHECK(reference_level(weak_with("a", {1, 5}), weak_with("a", {1, 5}), m.split) == ReferenceFallback::kSelf);
    CHECK(reference_level(weak_with("a", {1, 5}), weak_with("b", {1, 5}), m.split) ==
          ReferenceFallback::kSharedBaseAndNovel);
    CHECK(reference_level(weak_with("a", {1, 5}), weak_with("b", {2, 5}), m.split) ==
          ReferenceFallback::kSharedNovelOnly);
    CHECK(reference_level(weak_with("a", {1, 5}), weak_with("b", {1, 7}), m.split) ==
          ReferenceFallback::kSharedBaseOnly);
    CHECK(reference_level(weak_with("a", {1}), weak_with("b", {2}), m.split) == ReferenceFallback::kSelf);
  }
}

TEST_CASE("png round trip") {
  testutil::TempDir dir("png");
  LabelMap m(3, 5);
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = static_cast<std::uint8_t>(i * 17);
  png::write_gray(dir.path / "m.png", m);
  CHECK(png::read_gray(dir.path / "m.png") == m);
  Image img(2, 2, 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(i) / 11.0f;
  png::write_rgb(dir.path / "i.png", img);
  auto back = png::read_rgb(dir.path / "i.png");
  REQUIRE(back.same_shape(img));
  for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(std::fabs(back.data[i] - img.data[i]) <= 0.5f / 255.0f + 1e-6f);
  CHECK_THROWS(png::read_gray(dir.path / "missing.png"));
}

TEST_CASE("generated corpus") {
  testutil::TempDir a("gen_a"), b("gen_b");
  const auto cfg = small_config();
  auto m = generate_dataset(cfg, 7, a.path);
  CHECK(m.train_ids.size() == 120);
  CHECK(m.test_ids.size() == 20);
  CHECK(m.split.base_ids.size() == 9);

  SUBCASE("manifest and layout") {
    CHECK(std::filesystem::exists(a.path / "manifest.json"));
    CHECK(std::filesystem::exists(image_path(m, "train", m.train_ids[0])));
    CHECK(mask_path(m, "test", m.test_ids[3]).filename().string() == m.test_ids[3] + "_mask.png");
    auto loaded = DatasetManifest::load(a.path);
    CHECK(loaded.train_ids == m.train_ids);
    CHECK(loaded.image_labels == m.image_labels);
    CHECK(loaded.split.novel_ids == m.split.novel_ids);
    CHECK(loaded.effective_seed == m.effective_seed);
  }
  SUBCASE("determinism") {
    auto m2 = generate_dataset(cfg, 7, b.path);
    for (const auto& id : m.train_ids) {
      std::ifstream fa(mask_path(m, "train", id), std::ios::binary), fb(mask_path(m2, "train", id), std::ios::binary);
      std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
      REQUIRE(sa == sb);
    }
  }
  SUBCASE("protocol properties") {
    auto rep = protocol::check_corpus(m, 2, 3);
    INFO(rep.summary());
    CHECK(rep.ok());
    CHECK(rep.samples == 140);
  }
  SUBCASE("co-occurrence floor") {
    std::map<std::pair<int, int>, int> joint;
    for (const auto& id : m.train_ids)
      for (int x : m.image_labels.at(id))
        for (int y : m.image_labels.at(id)) ++joint[{x, y}];
    for (int x : m.split.base_ids)
      for (int y : m.split.novel_ids) CHECK(joint[{x, y}] >= cfg.cooccurrence_floor);
  }
}

TEST_CASE("unwritable root") {
  testutil::TempDir d("ro");
  std::ofstream(d.path / "file") << "x";
  CHECK_THROWS_AS(generate_dataset(small_config(), 0, d.path / "file" / "sub"), std::runtime_error);
}
