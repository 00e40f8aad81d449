#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "slpd/dataset.hpp"
#include "slpd/errors.hpp"
#include "slpd/eval.hpp"
#include "slpd/rng.hpp"

using namespace slpd;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("dataset");

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("slpd_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

SlideDataset small_dataset() {
  SlideDataset ds;
  ds.d_in = 4;
  for (int s = 0; s < 2; ++s) {
    Slide slide;
    slide.slide_id = "s" + std::to_string(s);
    for (int r = 0; r < 3; ++r) {
      RegionRecord region;
      region.slide_id = slide.slide_id;
      region.region_index = r;
      region.features = {float(s), float(r), 0.5f, -1.0f};
      slide.regions.push_back(region);
    }
    ds.slides.push_back(slide);
  }
  return ds;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

SlideDataset random_dataset(std::uint64_t seed) {
  Rng rng(seed);
  SlideDataset ds;
  ds.d_in = 5;
  ds.num_classes = 2;
  for (int s = 0; s < 4; ++s) {
    Slide slide;
    slide.slide_id = "rand_" + std::to_string(s);
    slide.label = s % 2;
    const int regions = 2 + static_cast<int>(rng.next_below(4));
    for (int r = 0; r < regions; ++r) {
      RegionRecord region;
      region.slide_id = slide.slide_id;
      region.region_index = r;
      for (std::size_t d = 0; d < ds.d_in; ++d) {
        region.features.push_back(static_cast<float>(rng.next_gaussian()));
      }
      slide.regions.push_back(region);
    }
    ds.slides.push_back(slide);
  }
  return ds;
}

}  // namespace

TEST_CASE("write then load a 2x3 dataset") {
  const auto dir = temp_dir("roundtrip_small");
  const auto ds = small_dataset();
  write_dataset(ds, dir);
  const auto loaded = load_dataset(dir);
  CHECK(loaded.num_slides() == 2);
  CHECK(loaded.d_in == 4);
  REQUIRE(loaded.slides[0].regions.size() == 3);
  REQUIRE(loaded.slides[1].regions.size() == 3);
  CHECK(loaded.slides[0].slide_id == "s0");
  CHECK_FALSE(loaded.num_classes.has_value());
}

TEST_CASE("binary layout: 16-byte header then packed little-endian floats") {
  const auto dir = temp_dir("layout");
  SlideDataset ds;
  ds.d_in = 2;
  Slide slide;
  slide.slide_id = "one";
  RegionRecord region;
  region.slide_id = "one";
  region.region_index = 0;
  region.features = {1.0f, 2.0f};
  slide.regions.push_back(region);
  ds.slides.push_back(slide);
  write_dataset(ds, dir);

  const std::string bytes = file_bytes(dir / "one.bin");
  REQUIRE(bytes.size() == 16 + 8);
  CHECK(bytes.substr(0, 4) == "SLPD");
  auto u32 = [&](std::size_t off) {
    return std::uint32_t(std::uint8_t(bytes[off])) |
           (std::uint32_t(std::uint8_t(bytes[off + 1])) << 8) |
           (std::uint32_t(std::uint8_t(bytes[off + 2])) << 16) |
           (std::uint32_t(std::uint8_t(bytes[off + 3])) << 24);
  };
  CHECK(u32(4) == 1);   // version
  CHECK(u32(8) == 1);   // num_regions
  CHECK(u32(12) == 2);  // dim
  CHECK(u32(16) == 0x3f800000u);  // 1.0f
  CHECK(u32(20) == 0x40000000u);  // 2.0f
}

TEST_CASE("unlabeled dataset omits label fields in the manifest") {
  const auto dir = temp_dir("nolabel");
  write_dataset(small_dataset(), dir);
  std::ifstream is(dir / "manifest.json");
  nlohmann::json j;
  is >> j;
  CHECK_FALSE(j.contains("num_classes"));
  for (const auto& s : j.at("slides")) CHECK_FALSE(s.contains("label"));
}

TEST_CASE("round-trip of a random dataset is lossless") {
  const auto dir = temp_dir("roundtrip_rand");
  const auto ds = random_dataset(99);
  write_dataset(ds, dir);
  const auto loaded = load_dataset(dir);

  REQUIRE(loaded.num_slides() == ds.num_slides());
  CHECK(loaded.num_classes == ds.num_classes);
  for (std::size_t s = 0; s < ds.slides.size(); ++s) {
    CHECK(loaded.slides[s].slide_id == ds.slides[s].slide_id);
    CHECK(loaded.slides[s].label == ds.slides[s].label);
    REQUIRE(loaded.slides[s].regions.size() == ds.slides[s].regions.size());
    for (std::size_t r = 0; r < ds.slides[s].regions.size(); ++r) {
      CHECK(loaded.slides[s].regions[r].region_index == r);
      CHECK(loaded.slides[s].regions[r].features == ds.slides[s].regions[r].features);
    }
  }

  // Byte-comparison oracle: re-serializing the loaded dataset reproduces
  // every file exactly.
  const auto dir2 = temp_dir("roundtrip_rand2");
  write_dataset(loaded, dir2);
  for (const auto& entry : fs::directory_iterator(dir)) {
    CHECK(file_bytes(entry.path()) == file_bytes(dir2 / entry.path().filename()));
  }
}

TEST_CASE("corrupted magic bytes produce an error naming the file") {
  const auto dir = temp_dir("badmagic");
  write_dataset(small_dataset(), dir);
  {
    std::fstream f(dir / "s0.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  try {
    load_dataset(dir);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("s0.bin") != std::string::npos);
    CHECK(std::string(e.what()).find("magic") != std::string::npos);
  }
}

TEST_CASE("missing slide file is a distinct error") {
  const auto dir = temp_dir("missing");
  write_dataset(small_dataset(), dir);
  fs::remove(dir / "s1.bin");
  CHECK_THROWS_AS(load_dataset(dir), DataError);
}

TEST_CASE("dimension mismatch across slides is rejected") {
  const auto dir = temp_dir("dimmismatch");
  write_dataset(small_dataset(), dir);
  // Rewrite s1.bin with dim 3 instead of 4.
  {
    std::ofstream f(dir / "s1.bin", std::ios::binary | std::ios::trunc);
    const char header[16] = {'S', 'L', 'P', 'D', 1, 0, 0, 0, 1, 0, 0, 0, 3, 0, 0, 0};
    f.write(header, 16);
    const float vals[3] = {0, 0, 0};
    f.write(reinterpret_cast<const char*>(vals), 12);
  }
  try {
    load_dataset(dir);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("dimension mismatch") != std::string::npos);
  }
}

TEST_CASE("non-finite payload is rejected with location info") {
  const auto dir = temp_dir("nonfinite");
  write_dataset(small_dataset(), dir);
  {
    std::fstream f(dir / "s0.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(16);
    const std::uint32_t nan_bits = 0x7fc00000u;
    f.write(reinterpret_cast<const char*>(&nan_bits), 4);
  }
  try {
    load_dataset(dir);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
  }
}

TEST_CASE("loading preserves manifest order") {
  const auto dir = temp_dir("order");
  SlideDataset ds = small_dataset();
  std::swap(ds.slides[0], ds.slides[1]);  // manifest order: s1, s0
  write_dataset(ds, dir);
  const auto loaded = load_dataset(dir);
  CHECK(loaded.slides[0].slide_id == "s1");
  CHECK(loaded.slides[1].slide_id == "s0");
}

TEST_CASE("parallel load equals sequential load") {
  const auto dir = temp_dir("parload");
  const auto ds = generate_synthetic(12, 6, 5, 2, 1.0, 2, 3);
  write_dataset(ds, dir);
  const auto seq = load_dataset(dir, 1);
  const auto par = load_dataset(dir, 4);
  REQUIRE(seq.num_slides() == par.num_slides());
  for (std::size_t s = 0; s < seq.slides.size(); ++s) {
    CHECK(seq.slides[s].slide_id == par.slides[s].slide_id);
    for (std::size_t r = 0; r < seq.slides[s].regions.size(); ++r) {
      CHECK(seq.slides[s].regions[r].features == par.slides[s].regions[r].features);
    }
  }
}

TEST_CASE("validate rejects duplicate ids and bad labels") {
  SlideDataset ds = small_dataset();
  ds.slides[1].slide_id = ds.slides[0].slide_id;
  for (auto& r : ds.slides[1].regions) r.slide_id = ds.slides[0].slide_id;
  CHECK_THROWS_AS(validate(ds), DataError);

  SlideDataset labeled = small_dataset();
  labeled.slides[0].label = 1;  // label without num_classes
  CHECK_THROWS_AS(validate(labeled), DataError);
  labeled.num_classes = 1;  // label 1 out of range
  CHECK_THROWS_AS(validate(labeled), DataError);
  labeled.num_classes = 2;
  CHECK_NOTHROW(validate(labeled));
}

TEST_CASE("generate_synthetic is deterministic and labeled round-robin") {
  const auto a = generate_synthetic(6, 5, 8, 3, 2.0, 2, 17);
  const auto b = generate_synthetic(6, 5, 8, 3, 2.0, 2, 17);
  REQUIRE(a.num_slides() == 6);
  for (std::size_t s = 0; s < a.slides.size(); ++s) {
    CHECK(*a.slides[s].label == static_cast<int>(s) % 3);
    for (std::size_t r = 0; r < a.slides[s].regions.size(); ++r) {
      CHECK(a.slides[s].regions[r].features == b.slides[s].regions[r].features);
    }
  }
  const auto c = generate_synthetic(6, 5, 8, 3, 2.0, 2, 18);
  CHECK(a.slides[0].regions[0].features != c.slides[0].regions[0].features);
}

TEST_CASE("strong class separation gives perfect raw-feature KNN") {
  // Train/test split over slides; mean-pooled raw features classified with
  // the eval module's KNN.
  const auto ds = generate_synthetic(24, 10, 8, 2, 10.0, 2, 5);
  std::vector<Vec> train_v, test_v;
  std::vector<int> train_l, test_l;
  for (std::size_t s = 0; s < ds.slides.size(); ++s) {
    std::vector<Vec> regions;
    for (const auto& r : ds.slides[s].regions) {
      regions.emplace_back(r.features.begin(), r.features.end());
    }
    const Vec pooled = mean_pool(regions);
    if (s % 3 == 0) {
      test_v.push_back(pooled);
      test_l.push_back(*ds.slides[s].label);
    } else {
      train_v.push_back(pooled);
      train_l.push_back(*ds.slides[s].label);
    }
  }
  const auto preds = knn_classify(train_v, train_l, test_v, 3);
  for (std::size_t i = 0; i < preds.size(); ++i) CHECK(preds[i].label == test_l[i]);
}

TEST_CASE("zero separation keeps KNN near chance") {
  const auto ds = generate_synthetic(30, 10, 8, 2, 0.0, 2, 11);
  std::vector<Vec> train_v, test_v;
  std::vector<int> train_l, test_l;
  for (std::size_t s = 0; s < ds.slides.size(); ++s) {
    std::vector<Vec> regions;
    for (const auto& r : ds.slides[s].regions) {
      regions.emplace_back(r.features.begin(), r.features.end());
    }
    const Vec pooled = mean_pool(regions);
    if (s % 3 == 0) {
      test_v.push_back(pooled);
      test_l.push_back(*ds.slides[s].label);
    } else {
      train_v.push_back(pooled);
      train_l.push_back(*ds.slides[s].label);
    }
  }
  const auto preds = knn_classify(train_v, train_l, test_v, 3);
  int correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].label == test_l[i]) ++correct;
  }
  const double acc = static_cast<double>(correct) / preds.size();
  CHECK(acc >= 0.1);
  CHECK(acc <= 0.9);
}

TEST_SUITE_END();
