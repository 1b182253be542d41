#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bafdet/image_io.hpp"

namespace bafdet {

/// One defect to render; geometry is drawn from the scene rng.
struct DefectRequest {
  int class_id = 0;  // crack, finger_interruption, black_core
};

struct SceneSpec {
  int width = 128, height = 128;
  std::uint64_t seed = 0;
  double background_level = 200.0;  // bright EL-active silicon
  double background_noise = 7.0;
  int busbar_count = 4;         // dark vertical bars, never annotated
  int max_dislocations = 3;     // dark distractor patches, never annotated
  std::vector<DefectRequest> defects;
};

struct SampleAnnotation {
  int class_id = 0;
  int xmin = 0, ymin = 0, xmax = 0, ymax = 0;  // corner form, tight on the mask
};

struct SampleRecord {
  GrayImage image;
  std::vector<SampleAnnotation> annotations;
  std::uint64_t seed = 0;
  std::uint64_t spec_hash = 0;
};

/// Deterministic render: identical spec gives identical bytes.
SampleRecord generate(const SceneSpec& spec);

struct ManifestEntry {
  std::string image_path;
  std::string xml_path;
  int class_counts[3] = {0, 0, 0};
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  long total_counts[3] = {0, 0, 0};
};

/// Renders n samples (approximately class-balanced) into out_dir as PGM +
/// VOC XML pairs and writes <split>_manifest.csv.
DatasetManifest emit_dataset(int n, const std::string& split, const std::string& out_dir,
                             std::uint64_t seed, int image_size = 128);

std::string manifest_path(const std::string& out_dir, const std::string& split);
DatasetManifest read_manifest(const std::string& path);

std::uint64_t hash_spec(const SceneSpec& spec);
std::uint64_t hash_file(const std::string& path);

}  // namespace bafdet
