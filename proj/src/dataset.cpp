#include "slpd/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "slpd/binary_io.hpp"
#include "slpd/errors.hpp"
#include "slpd/parallel.hpp"
#include "slpd/rng.hpp"

namespace slpd {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr char kMagic[4] = {'S', 'L', 'P', 'D'};
constexpr std::uint32_t kVersion = 1;

// Blob geometry of the synthetic generator. Blob centers are drawn with
// std kBlobScale per coordinate and regions scatter around them with std
// kRegionNoise, so class structure at separation ~3 is learnable but not
// trivial for an untrained encoder.
constexpr double kBlobScale = 1.0;
constexpr double kRegionNoise = 1.0;

std::string sanitize_filename(const std::string& id) {
  std::string out;
  out.reserve(id.size());
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '.' || c == '_' || c == '-';
    out.push_back(ok ? c : '_');
  }
  if (out.empty()) out = "slide";
  return out;
}

void write_slide_file(const std::filesystem::path& path, const Slide& slide,
                      std::uint32_t d_in) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open slide file for writing: " + path.string());
  os.write(kMagic, 4);
  detail::write_u32_le(os, kVersion);
  detail::write_u32_le(os, static_cast<std::uint32_t>(slide.regions.size()));
  detail::write_u32_le(os, d_in);
  for (const auto& region : slide.regions) {
    detail::write_f32_block(os, region.features.data(), region.features.size());
  }
  if (!os) throw DataError("I/O failure writing slide file: " + path.string());
}

Slide read_slide_file(const std::filesystem::path& path, const std::string& slide_id,
                      std::optional<int> label, std::uint32_t expected_dim) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing slide file: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("bad magic bytes in slide file: " + path.string());
  }
  const std::string ctx = path.string();
  const std::uint32_t version = detail::read_u32_le(is, ctx);
  if (version != kVersion) {
    throw DataError("unsupported slide file version " + std::to_string(version) +
                    " in " + path.string());
  }
  const std::uint32_t num_regions = detail::read_u32_le(is, ctx);
  const std::uint32_t dim = detail::read_u32_le(is, ctx);
  if (dim != expected_dim) {
    throw DataError("dimension mismatch in " + path.string() + ": file has dim " +
                    std::to_string(dim) + ", manifest d_in is " +
                    std::to_string(expected_dim));
  }
  Slide slide;
  slide.slide_id = slide_id;
  slide.label = label;
  slide.regions.resize(num_regions);
  for (std::uint32_t r = 0; r < num_regions; ++r) {
    auto& region = slide.regions[r];
    region.slide_id = slide_id;
    region.region_index = r;
    region.features.resize(dim);
    detail::read_f32_block(is, region.features.data(), dim, ctx);
    for (std::uint32_t j = 0; j < dim; ++j) {
      if (!std::isfinite(region.features[j])) {
        throw DataError("non-finite value in " + path.string() + " at region " +
                        std::to_string(r) + ", component " + std::to_string(j));
      }
    }
  }
  is.peek();
  if (!is.eof()) throw DataError("trailing bytes in slide file: " + path.string());
  return slide;
}

}  // namespace

std::size_t SlideDataset::total_regions() const {
  std::size_t n = 0;
  for (const auto& s : slides) n += s.regions.size();
  return n;
}

void validate(const SlideDataset& ds) {
  if (ds.d_in == 0) throw DataError("dataset d_in must be positive");
  std::set<std::string> ids;
  bool any_label = false;
  for (const auto& slide : ds.slides) {
    if (!ids.insert(slide.slide_id).second) {
      throw DataError("duplicate slide_id: " + slide.slide_id);
    }
    if (slide.regions.empty()) {
      throw DataError("slide has no regions: " + slide.slide_id);
    }
    for (std::size_t r = 0; r < slide.regions.size(); ++r) {
      const auto& region = slide.regions[r];
      if (region.region_index != r) {
        throw DataError("non-contiguous region_index in slide " + slide.slide_id);
      }
      if (region.slide_id != slide.slide_id) {
        throw DataError("region slide_id mismatch in slide " + slide.slide_id);
      }
      if (region.features.size() != ds.d_in) {
        throw DataError("feature dimension mismatch in slide " + slide.slide_id +
                        " region " + std::to_string(r));
      }
      for (float f : region.features) {
        if (!std::isfinite(f)) {
          throw DataError("non-finite feature in slide " + slide.slide_id +
                          " region " + std::to_string(r));
        }
      }
    }
    if (slide.label) {
      any_label = true;
      if (!ds.num_classes) {
        throw DataError("slide " + slide.slide_id + " has a label but num_classes is unset");
      }
      if (*slide.label < 0 || *slide.label >= *ds.num_classes) {
        throw DataError("label out of range in slide " + slide.slide_id);
      }
    }
  }
  if (ds.num_classes && *ds.num_classes <= 0) {
    throw DataError("num_classes must be positive when present");
  }
  (void)any_label;
}

SlideDataset load_dataset(const std::filesystem::path& manifest_path, int workers) {
  std::filesystem::path manifest = manifest_path;
  if (std::filesystem::is_directory(manifest)) manifest /= "manifest.json";
  std::ifstream is(manifest);
  if (!is) throw DataError("missing manifest: " + manifest.string());
  ordered_json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest " + manifest.string() + ": " + e.what());
  }
  if (!j.contains("d_in") || !j.contains("slides")) {
    throw DataError("manifest missing required keys (d_in, slides): " + manifest.string());
  }

  SlideDataset ds;
  ds.d_in = j.at("d_in").get<std::uint32_t>();
  if (j.contains("num_classes")) ds.num_classes = j.at("num_classes").get<int>();

  struct Entry {
    std::string slide_id;
    std::filesystem::path path;
    std::optional<int> label;
  };
  std::vector<Entry> entries;
  const auto base = manifest.parent_path();
  for (const auto& s : j.at("slides")) {
    Entry e;
    e.slide_id = s.at("slide_id").get<std::string>();
    e.path = base / s.at("path").get<std::string>();
    if (s.contains("label")) e.label = s.at("label").get<int>();
    entries.push_back(std::move(e));
  }

  ds.slides.resize(entries.size());
  parallel_for(entries.size(), workers, [&](std::size_t i) {
    ds.slides[i] = read_slide_file(entries[i].path, entries[i].slide_id,
                                   entries[i].label, ds.d_in);
  });
  validate(ds);
  return ds;
}

void write_dataset(const SlideDataset& ds, const std::filesystem::path& dir) {
  validate(ds);
  std::filesystem::create_directories(dir);

  std::vector<std::string> filenames;
  std::set<std::string> used;
  for (const auto& slide : ds.slides) {
    std::string name = sanitize_filename(slide.slide_id) + ".bin";
    if (!used.insert(name).second) {
      throw DataError("sanitized slide filenames collide: " + name);
    }
    filenames.push_back(name);
  }

  for (std::size_t i = 0; i < ds.slides.size(); ++i) {
    write_slide_file(dir / filenames[i], ds.slides[i], ds.d_in);
  }

  ordered_json j;
  j["format"] = "slpd-dataset";
  j["version"] = 1;
  j["d_in"] = ds.d_in;
  if (ds.num_classes) j["num_classes"] = *ds.num_classes;
  j["slides"] = ordered_json::array();
  for (std::size_t i = 0; i < ds.slides.size(); ++i) {
    ordered_json s;
    s["slide_id"] = ds.slides[i].slide_id;
    s["path"] = filenames[i];
    if (ds.slides[i].label) s["label"] = *ds.slides[i].label;
    j["slides"].push_back(std::move(s));
  }
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) throw DataError("cannot write manifest in " + dir.string());
  os << j.dump(2) << "\n";
  if (!os) throw DataError("I/O failure writing manifest in " + dir.string());
}

SlideDataset generate_synthetic(int num_slides, int regions_per_slide, int d_in,
                                int num_classes, double class_separation,
                                int within_slide_clusters, std::uint64_t seed) {
  if (num_slides <= 0 || regions_per_slide <= 0 || d_in <= 0 || num_classes <= 0 ||
      within_slide_clusters <= 0) {
    throw UsageError("generate_synthetic: all counts must be positive");
  }
  if (class_separation < 0) {
    throw UsageError("generate_synthetic: class_separation must be >= 0");
  }
  if (num_classes > d_in) {
    throw DataError("generate_synthetic: num_classes must not exceed d_in "
                    "(class directions are orthonormal)");
  }

  Rng rng = derive_stream(seed, "synth");

  // Orthonormal class directions via Gram-Schmidt over Gaussian draws.
  std::vector<std::vector<double>> dirs(num_classes, std::vector<double>(d_in));
  for (int c = 0; c < num_classes; ++c) {
    while (true) {
      for (int d = 0; d < d_in; ++d) dirs[c][d] = rng.next_gaussian();
      for (int p = 0; p < c; ++p) {
        double dot = 0;
        for (int d = 0; d < d_in; ++d) dot += dirs[c][d] * dirs[p][d];
        for (int d = 0; d < d_in; ++d) dirs[c][d] -= dot * dirs[p][d];
      }
      double norm = 0;
      for (int d = 0; d < d_in; ++d) norm += dirs[c][d] * dirs[c][d];
      norm = std::sqrt(norm);
      if (norm > 1e-6) {
        for (int d = 0; d < d_in; ++d) dirs[c][d] /= norm;
        break;
      }
    }
  }

  SlideDataset ds;
  ds.d_in = static_cast<std::uint32_t>(d_in);
  ds.num_classes = num_classes;
  ds.slides.resize(num_slides);
  char buf[32];

  for (int n = 0; n < num_slides; ++n) {
    Slide& slide = ds.slides[n];
    std::snprintf(buf, sizeof(buf), "slide_%04d", n);
    slide.slide_id = buf;
    const int label = n % num_classes;
    slide.label = label;

    std::vector<std::vector<double>> centers(within_slide_clusters,
                                             std::vector<double>(d_in));
    for (auto& center : centers) {
      for (int d = 0; d < d_in; ++d) center[d] = kBlobScale * rng.next_gaussian();
    }

    slide.regions.resize(regions_per_slide);
    for (int r = 0; r < regions_per_slide; ++r) {
      auto& region = slide.regions[r];
      region.slide_id = slide.slide_id;
      region.region_index = static_cast<std::uint32_t>(r);
      region.features.resize(d_in);
      const auto& center = centers[r % within_slide_clusters];
      for (int d = 0; d < d_in; ++d) {
        const double v = class_separation * dirs[label][d] + center[d] +
                         kRegionNoise * rng.next_gaussian();
        region.features[d] = static_cast<float>(v);
      }
    }
  }
  validate(ds);
  return ds;
}

}  // namespace slpd
