#include <set>
#include <vector>

#include "doctest.h"
#include "srnn/data.hpp"

using namespace srnn;

TEST_SUITE("data") {

TEST_CASE("generation is a pure function of the spec") {
  SyntheticSpec spec;
  spec.train_per_class = 3;
  spec.val_per_class = 2;
  spec.seed = 99;
  auto [t1, v1] = generate_scale_task<float>(spec);
  auto [t2, v2] = generate_scale_task<float>(spec);
  REQUIRE(t1.size() == t2.size());
  REQUIRE(v1.size() == v2.size());
  for (std::size_t i = 0; i < t1.size(); ++i) {
    CHECK(t1.samples[i].label == t2.samples[i].label);
    for (std::size_t p = 0; p < t1.samples[i].image.data.size(); ++p)
      CHECK(t1.samples[i].image.data[p] == t2.samples[i].image.data[p]);
  }
}

TEST_CASE("every pixel lands in [0,1] on the fixed canvas") {
  SyntheticSpec spec;
  spec.train_per_class = 2;
  spec.val_per_class = 1;
  auto [train, val] = generate_scale_task<float>(spec);
  CHECK(train.size() == spec.classes() * 2);
  CHECK(val.size() == spec.classes() * 1);
  for (const auto& s : train.samples) {
    CHECK(s.image.channels() == 1);
    CHECK(s.image.height() == 64);
    CHECK(s.image.width() == 64);
    for (float v : s.image.data.data) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
    CHECK(s.label < spec.classes());
  }
}

TEST_CASE("noise-free single-sample generation yields C distinct images") {
  SyntheticSpec spec;
  spec.noise_amplitude = 0.0;
  spec.train_per_class = 1;
  spec.val_per_class = 1;
  auto [train, val] = generate_scale_task<float>(spec);
  REQUIRE(train.size() == 16);
  std::set<std::vector<float>> unique;
  for (const auto& s : train.samples) unique.insert(s.image.data.data);
  CHECK(unique.size() == 16);
}

TEST_CASE("primitive counts are enforced") {
  SyntheticSpec spec;
  spec.coarse_shapes = 5;
  CHECK_THROWS_AS(generate_scale_task<float>(spec), ConfigError);
  spec.coarse_shapes = 4;
  spec.fine_textures = 9;
  CHECK_THROWS_AS(generate_scale_task<float>(spec), ConfigError);
  spec.fine_textures = 1;
  CHECK_THROWS_AS(generate_scale_task<float>(spec), ContractError);
}

TEST_CASE("downscaling keeps shapes but destroys textures") {
  SyntheticSpec spec;  // default G=4, T=4, 200/50 per class
  auto [train, val] = generate_scale_task<float>(spec);
  const SeparabilityReport rep =
      scale_separability_selftest(train, val, spec);
  CHECK(rep.coarse_accuracy >= 0.80);
  CHECK(rep.fine_accuracy <= 0.35);
}

TEST_CASE("cifar loader parses well-formed records") {
  std::vector<unsigned char> bytes(2 * kCifarRecordBytes, 0);
  bytes[0] = 3;
  bytes[kCifarRecordBytes] = 9;
  bytes[1] = 128;  // R plane, first pixel of record 0
  auto ds = parse_cifar10_bytes<float>(bytes);
  REQUIRE(ds.size() == 2);
  CHECK(ds.classes == 10);
  CHECK(ds.samples[0].label == 3);
  CHECK(ds.samples[1].label == 9);
  CHECK(ds.samples[0].image.channels() == 3);
  CHECK(ds.samples[0].image.height() == 32);
  CHECK(ds.samples[0].image.width() == 32);
  CHECK(ds.samples[0].image.at(0, 0, 0) == doctest::Approx(128.0 / 255.0));
}

TEST_CASE("truncated cifar file is a format error with a byte offset") {
  std::vector<unsigned char> bytes(3072, 0);  // one byte short
  CHECK_THROWS_WITH_AS(parse_cifar10_bytes<float>(bytes),
                       doctest::Contains("byte offset 0"), FormatError);
  std::vector<unsigned char> longer(kCifarRecordBytes + 10, 0);
  CHECK_THROWS_WITH_AS(parse_cifar10_bytes<float>(longer),
                       doctest::Contains("byte offset 3073"), FormatError);
}

TEST_CASE("out-of-range label byte is a format error") {
  std::vector<unsigned char> bytes(kCifarRecordBytes, 0);
  bytes[0] = 10;
  CHECK_THROWS_WITH_AS(parse_cifar10_bytes<float>(bytes),
                       doctest::Contains("label 10"), FormatError);
}

TEST_CASE("hand-built record: label 7, first pixel 255") {
  std::vector<unsigned char> bytes(kCifarRecordBytes, 0);
  bytes[0] = 7;
  bytes[1] = 255;
  auto ds = parse_cifar10_bytes<float>(bytes);
  REQUIRE(ds.size() == 1);
  CHECK(ds.samples[0].label == 7);
  CHECK(ds.samples[0].image.at(0, 0, 0) == 1.0f);
  CHECK(ds.samples[0].image.at(0, 0, 1) == 0.0f);
}

TEST_CASE("loader round-trips the exact input bytes") {
  Rng rng(55);
  std::vector<unsigned char> bytes(3 * kCifarRecordBytes);
  for (std::size_t r = 0; r < 3; ++r) {
    bytes[r * kCifarRecordBytes] = static_cast<unsigned char>(rng.index(10));
    for (std::size_t i = 1; i < kCifarRecordBytes; ++i)
      bytes[r * kCifarRecordBytes + i] =
          static_cast<unsigned char>(rng.index(256));
  }
  auto ds = parse_cifar10_bytes<float>(bytes);
  CHECK(cifar10_bytes(ds) == bytes);
}

TEST_CASE("batches cover the dataset with the final short batch kept") {
  Rng rng(3);
  auto batches = make_batches(10, 4, rng);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].size() == 4);
  CHECK(batches[1].size() == 4);
  CHECK(batches[2].size() == 2);
  std::set<std::size_t> seen;
  for (const auto& b : batches) seen.insert(b.begin(), b.end());
  CHECK(seen.size() == 10);
}

TEST_CASE("batch order is reproducible per seed") {
  Rng a(17), b(17), c(18);
  auto ba = make_batches(23, 5, a);
  auto bb = make_batches(23, 5, b);
  auto bc = make_batches(23, 5, c);
  CHECK(ba == bb);
  CHECK(ba != bc);
}

TEST_CASE("shuffle places each sample first roughly uniformly") {
  std::vector<std::size_t> first_counts(10, 0);
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(seed);
    auto batches = make_batches(10, 4, rng);
    ++first_counts[batches[0][0]];
  }
  double chi2 = 0.0;
  for (std::size_t c : first_counts) {
    const double diff = static_cast<double>(c) - 100.0;
    chi2 += diff * diff / 100.0;
  }
  CHECK(chi2 < 27.88);  // chi^2_9 at the 99.9th percentile
}

TEST_CASE("zero batch size is rejected") {
  Rng rng(1);
  CHECK_THROWS_AS(make_batches(5, 0, rng), ContractError);
}

}  // TEST_SUITE
