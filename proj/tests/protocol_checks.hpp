#pragma once

// Weak-shot protocol properties over a generated corpus, shared by the
// synthdata unit tests and the acceptance binary.

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "simformer/synthdata.hpp"

namespace protocol {

using namespace simformer;

struct ProtocolReport {
  int samples = 0;
  int reference_draws = 0;
  std::map<int, int> fallback_counts;
  std::vector<std::string> failures;

  bool ok() const { return failures.empty(); }
  std::string summary() const {
    std::ostringstream os;
    os << samples << " samples, " << reference_draws << " reference draws, " << failures.size() << " violations";
    if (!failures.empty()) os << " (first: " << failures.front() << ")";
    return os.str();
  }
};

inline bool shares(const std::set<int>& a, const std::set<int>& b, bool base, const ClassSplit& split) {
  for (int c : a)
    if (b.count(c) && (base ? split.is_base(c) : split.is_novel(c))) return true;
  return false;
}

/// Checks every sample of `manifest` plus `draws_per_sample` reference draws
/// for every training sample.
inline ProtocolReport check_corpus(const DatasetManifest& manifest, int draws_per_sample, std::uint64_t seed) {
  ProtocolReport rep;
  const auto& split = manifest.split;
  auto fail = [&](const std::string& what) {
    if (rep.failures.size() < 50) rep.failures.push_back(what);
  };

  for (int c : split.base_ids)
    if (split.is_novel(c)) fail("class in both sides of the split");
  if (split.is_semantic(split.ignore_id)) fail("ignore id inside the split");
  {
    std::set<std::string> train(manifest.train_ids.begin(), manifest.train_ids.end());
    for (const auto& id : manifest.test_ids)
      if (train.count(id)) fail("id in train and test: " + id);
  }

  std::vector<WeakShotSample> weak_train;
  std::map<int, int> class_images;
  for (const char* subset : {"train", "test"}) {
    const auto& ids = std::string(subset) == "train" ? manifest.train_ids : manifest.test_ids;
    for (const auto& id : ids) {
      const auto full = load_full_sample(manifest, subset, id);
      ++rep.samples;
      if (full.present_classes != distinct_values(full.mask)) fail(id + ": present classes differ from mask");
      for (int c : full.present_classes)
        if (!split.is_semantic(c)) fail(id + ": unknown class " + std::to_string(c));
      auto it = manifest.image_labels.find(id);
      if (it == manifest.image_labels.end() || it->second != full.present_classes) fail(id + ": manifest labels");

      const auto weak = make_weakshot(full, split);
      if (weak.image_labels != full.present_classes) fail(id + ": image labels changed");
      LabelMap overlay = weak.mask;
      std::set<int> novel_with_ignore;
      for (std::size_t p = 0; p < weak.mask.data.size(); ++p) {
        const int w = weak.mask.data[p], f = full.mask.data[p];
        if (split.is_novel(w)) fail(id + ": novel id in weak mask");
        if (split.is_base(f) && w != f) fail(id + ": base pixel altered");
        if (split.is_novel(f)) {
          if (w != split.ignore_id) fail(id + ": novel pixel not reset");
          novel_with_ignore.insert(f);
          overlay.data[p] = static_cast<std::uint8_t>(f);
        }
        if (split.is_base(w) && !weak.image_labels.count(w)) fail(id + ": base class missing from labels");
      }
      for (int c : weak.image_labels)
        if (split.is_novel(c) && !novel_with_ignore.count(c)) fail(id + ": novel label without ignore pixels");
      if (!(overlay == full.mask)) fail(id + ": round trip differs");

      if (std::string(subset) == "train") {
        for (int c : full.present_classes) ++class_images[c];
        weak_train.push_back(weak);
      }
    }
  }
  for (int c = 0; c < split.num_semantic(); ++c)
    if (class_images[c] < manifest.config.min_class_images) fail("class " + std::to_string(c) + " too rare");

  std::map<std::string, const WeakShotSample*> by_id;
  for (const auto& w : weak_train) by_id[w.source_id] = &w;
  Rng rng(seed);
  for (const auto& input : weak_train) {
    // Best tier reachable from this input, by enumeration of the pool.
    int best = 3;
    for (const auto& other : weak_train) {
      if (other.source_id == input.source_id) continue;
      const bool b = shares(input.image_labels, other.image_labels, true, split);
      const bool n = shares(input.image_labels, other.image_labels, false, split);
      best = std::min(best, b && n ? 0 : n ? 1 : b ? 2 : 3);
      if (best == 0) break;
    }
    for (int d = 0; d < draws_per_sample; ++d) {
      const auto pick = sample_reference(input, manifest, rng);
      ++rep.reference_draws;
      const int level = static_cast<int>(pick.level);
      ++rep.fallback_counts[level];
      if (level != best) fail(input.source_id + ": fallback level " + std::to_string(level));
      auto it = by_id.find(pick.id);
      if (it == by_id.end()) {
        fail(input.source_id + ": reference outside the training set");
        continue;
      }
      if (reference_level(input, *it->second, split) != pick.level) fail(input.source_id + ": level mismatch");
      if (level == 0 && (pick.id == input.source_id || !shares(input.image_labels, it->second->image_labels, true, split) ||
                         !shares(input.image_labels, it->second->image_labels, false, split))) {
        fail(input.source_id + ": level-0 reference lacks shared classes");
      }
      if (level == 3 && pick.id != input.source_id) fail(input.source_id + ": self level with another image");
    }
  }
  return rep;
}

}  // namespace protocol
