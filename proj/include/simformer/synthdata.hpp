#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "simformer/common.hpp"

namespace simformer {

/// Disjoint base / novel partition of the semantic class vocabulary.
struct ClassSplit {
  std::vector<int> base_ids;   // sorted
  std::vector<int> novel_ids;  // sorted
  int ignore_id = kIgnoreId;

  int num_semantic() const { return static_cast<int>(base_ids.size() + novel_ids.size()); }
  bool is_base(int id) const;
  bool is_novel(int id) const;
  bool is_semantic(int id) const { return is_base(id) || is_novel(id); }

  /// Every class treated as base; used for fully supervised runs.
  static ClassSplit all_base(int num_classes);
};

void to_json(nlohmann::json& j, const ClassSplit& s);
void from_json(const nlohmann::json& j, ClassSplit& s);

/// Oracle-side, fully annotated sample.
struct FullSample {
  std::string id;
  Image image;
  LabelMap mask;
  std::set<int> present_classes;
};

/// Training-side sample: novel pixels reset to ignore, image-level labels kept.
struct WeakShotSample {
  std::string source_id;
  Image image;
  LabelMap mask;
  std::set<int> image_labels;
};

struct GenerationConfig {
  int image_size = 64;
  int num_classes = 12;
  int num_background = 4;
  int train_samples = 500;
  int test_samples = 100;
  int min_foreground = 2;
  int max_foreground = 4;
  // Probability that an image shows two background classes split by a horizon.
  double two_background_prob = 0.5;
  double base_fraction = 0.75;
  // Every class pair must co-occur in at least this many training images.
  int cooccurrence_floor = 20;
  // Every class must appear in at least this many training images.
  int min_class_images = 30;
  int max_attempts = 16;
};

void to_json(nlohmann::json& j, const GenerationConfig& c);
void from_json(const nlohmann::json& j, GenerationConfig& c);

struct DatasetManifest {
  ClassSplit split;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  std::map<std::string, std::set<int>> image_labels;
  std::filesystem::path root;
  GenerationConfig config;
  std::uint64_t seed = 0;
  // Seed actually used for the corpus after co-occurrence retries.
  std::uint64_t effective_seed = 0;

  static DatasetManifest load(const std::filesystem::path& root);
  void save() const;
};

/// Random base/novel partition; |base| = round(base_fraction·|all_ids|), at
/// least one class on each side.
ClassSplit split_classes(const std::set<int>& all_ids, double base_fraction, std::uint64_t seed);

/// Renders one fully annotated sample. Exposed for tests; generate_dataset
/// derives the per-sample seed from the corpus seed.
FullSample render_sample(const GenerationConfig& config, std::uint64_t sample_seed, const std::string& id);

/// Generates the corpus under `root`, writes PNGs and manifest.json.
DatasetManifest generate_dataset(const GenerationConfig& config, std::uint64_t seed,
                                 const std::filesystem::path& root);

/// Resets novel pixels to ignore and keeps all present classes as image labels.
WeakShotSample make_weakshot(const FullSample& sample, const ClassSplit& split);

enum class ReferenceFallback {
  kSharedBaseAndNovel = 0,
  kSharedNovelOnly = 1,
  kSharedBaseOnly = 2,
  kSelf = 3,
};

struct ReferencePick {
  std::string id;
  ReferenceFallback level = ReferenceFallback::kSelf;
};

/// Chooses a training image sharing a base and a novel class with `input`,
/// falling back to weaker criteria and finally to the input itself.
ReferencePick sample_reference(const WeakShotSample& input, const DatasetManifest& manifest, Rng& rng);

/// Tier an (input, reference) pair falls in; a pair sharing no class, or an
/// image paired with itself, is kSelf.
ReferenceFallback reference_level(const WeakShotSample& input, const WeakShotSample& ref, const ClassSplit& split);

std::set<int> distinct_values(const LabelMap& mask);

FullSample load_full_sample(const DatasetManifest& manifest, const std::string& subset, const std::string& id);
std::filesystem::path image_path(const DatasetManifest& manifest, const std::string& subset, const std::string& id);
std::filesystem::path mask_path(const DatasetManifest& manifest, const std::string& subset, const std::string& id);

}  // namespace simformer
