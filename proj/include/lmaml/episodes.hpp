#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lmaml/nn.hpp"
#include "lmaml/tensor.hpp"

namespace lmaml {

enum class Split { Train, Validation, Test };
std::string_view split_name(Split split);

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// All images of one class, stored contiguously as float in [0, 1].
struct ClassRecord {
  int class_id = 0;
  std::string name;
  std::vector<float> pixels;
  std::size_t count = 0;

  std::span<const float> image(std::size_t i, std::size_t image_numel) const {
    return {pixels.data() + i * image_numel, image_numel};
  }
};

struct ClassDataset {
  Split split = Split::Train;
  ImageShape shape{};
  std::vector<ClassRecord> classes;

  std::size_t image_count() const;
};

/// CIFAR-100 fine-label classes before splitting.
struct RawDataset {
  ImageShape shape{3, 32, 32};
  std::vector<ClassRecord> classes;
};

inline constexpr std::size_t kCifarRecordBytes = 3074;
inline constexpr std::size_t kCifarClasses = 100;

/// Appends the records of one CIFAR-100 binary file (coarse byte, fine byte,
/// 3072 R/G/B plane bytes) to `raw`. `raw` must hold 100 classes.
void parse_cifar100(std::span<const std::uint8_t> bytes, RawDataset& raw,
                    const std::string& source = "<memory>");

/// Reads train.bin and test.bin (and fine_label_names.txt when present) from
/// a cifar-100-binary directory.
RawDataset load_cifar100(const std::filesystem::path& dir);

/// Encodes records in the CIFAR-100 binary layout. `pixels` is 3072 values in
/// [0,1] per record.
std::vector<std::uint8_t> encode_cifar100(std::span<const int> fine_labels,
                                          std::span<const float> pixels);

struct SplitManifest {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
};

/// Sections start with a heading line `[train]`, `[validation]` or `[test]`
/// (a trailing-colon form `train:` is accepted too). Each other non-empty line
/// names one class, by name or numeric id. `#` starts a comment.
SplitManifest parse_split_manifest(const std::string& text);
SplitManifest read_split_manifest(const std::filesystem::path& path);

struct SplitDatasets {
  ClassDataset train;
  ClassDataset validation;
  ClassDataset test;
  std::vector<std::string> warnings;
};

/// Partitions `raw` per the manifest. Unknown or repeated classes throw;
/// counts other than 64/16/20 only produce warnings.
SplitDatasets apply_split(const RawDataset& raw, const SplitManifest& manifest);

struct TaskSpec {
  std::size_t n_way = 5;
  std::size_t k_shot = 1;
  std::size_t k_query = 15;

  std::string label() const;  // e.g. "1-shot 5-way"
  bool operator==(const TaskSpec&) const = default;
};

struct ImageRef {
  std::size_t class_index = 0;
  std::size_t image = 0;
  bool operator==(const ImageRef&) const = default;
};

/// One N-way K-shot task. Images are grouped by episode label, labels are
/// 0..n_way-1 and class_map[label] is the original class id.
struct Episode {
  TaskSpec spec;
  Tensor<double> support_x;
  Labels support_y;
  Tensor<double> query_x;
  Labels query_y;
  std::vector<int> class_map;
  std::vector<ImageRef> support_ids;
  std::vector<ImageRef> query_ids;
};

using Rng = std::mt19937_64;

/// Samples classes and images without replacement.
Episode sample_episode(const ClassDataset& ds, const TaskSpec& spec, Rng& rng);

std::vector<Episode> sample_episodes(const ClassDataset& ds, const TaskSpec& spec,
                                     std::size_t count, std::uint64_t seed);

struct SynthOptions {
  std::size_t n_classes = 2;
  ImageShape shape{3, 32, 32};
  /// 0 gives well-separated classes; 1 is heavily jittered.
  double difficulty = 0.0;
  std::size_t images_per_class = 40;
  int first_class_id = 0;
  Split split = Split::Train;
};

/// Procedural classes: a two-colour gradient modulated by an oriented stripe
/// texture, with per-image jitter that grows with difficulty.
ClassDataset synth_taskspace(const SynthOptions& options, Rng& rng);

struct SynthSplitOptions {
  std::size_t train_classes = 64;
  std::size_t validation_classes = 16;
  std::size_t test_classes = 20;
  ImageShape shape{3, 32, 32};
  double difficulty = 0.0;
  std::size_t images_per_class = 40;
  std::uint64_t seed = 0;
};

/// Three class-disjoint synthetic splits from one seed.
SplitDatasets synth_splits(const SynthSplitOptions& options);

}  // namespace lmaml
