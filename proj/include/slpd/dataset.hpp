#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace slpd {

/// One region of a slide. At this scale a region is a d_in-dimensional
/// feature vector rather than an image crop; the trainable encoder maps it
/// to the embedding space everything downstream operates in.
struct RegionRecord {
  std::vector<float> features;
  std::string slide_id;
  std::uint32_t region_index = 0;
};

struct Slide {
  std::string slide_id;
  std::vector<RegionRecord> regions;
  std::optional<int> label;
};

struct SlideDataset {
  std::vector<Slide> slides;
  std::uint32_t d_in = 0;
  std::optional<int> num_classes;

  std::size_t num_slides() const { return slides.size(); }
  std::size_t total_regions() const;
};

/// Checks every dataset invariant (unique ids, contiguous region indices,
/// uniform finite features, label range). Throws DataError on violation.
void validate(const SlideDataset& ds);

/// Loads a dataset from its manifest. Slide files may be read in parallel;
/// the result is identical to sequential loading and preserves manifest
/// order exactly. workers=0 means all cores.
SlideDataset load_dataset(const std::filesystem::path& manifest_path, int workers = 0);

/// Writes manifest.json plus one binary file per slide into dir
/// (created if missing). Round-trips through load_dataset bit-exactly.
void write_dataset(const SlideDataset& ds, const std::filesystem::path& dir);

/// Labeled synthetic dataset: each slide draws its regions from
/// within_slide_clusters Gaussian blobs, and every blob mean is offset by
/// class_separation along an orthonormal class-specific direction. Labels
/// are assigned round-robin. Pure function of its arguments.
SlideDataset generate_synthetic(int num_slides, int regions_per_slide, int d_in,
                                int num_classes, double class_separation,
                                int within_slide_clusters, std::uint64_t seed);

}  // namespace slpd
