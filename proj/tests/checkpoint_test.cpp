#include <cstdio>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "srnn/checkpoint.hpp"
#include "srnn/model_io.hpp"
#include "srnn/rng.hpp"

using namespace srnn;

namespace {

std::vector<NamedTensorF> sample_state() {
  Rng rng(31);
  return {
      {"cnn.stage0.weight", rand_uniform<float>({4, 1, 3, 3}, rng)},
      {"cnn.stage0.bias", rand_uniform<float>({4}, rng)},
      {"fc.weight", rand_uniform<float>({2, 4}, rng)},
      {"fc.bias", rand_uniform<float>({2}, rng)},
  };
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("byte round trip is the identity") {
  const auto state = sample_state();
  const auto bytes = checkpoint_bytes(state);
  const auto back = checkpoint_parse(bytes);
  REQUIRE(back.size() == state.size());
  for (std::size_t i = 0; i < state.size(); ++i) {
    CHECK(back[i].name == state[i].name);
    REQUIRE(back[i].tensor.shape == state[i].tensor.shape);
    for (std::size_t j = 0; j < state[i].tensor.size(); ++j)
      CHECK(back[i].tensor[j] == state[i].tensor[j]);
  }
  // and serialization is stable
  CHECK(checkpoint_bytes(back) == bytes);
}

TEST_CASE("file round trip is the identity") {
  const auto state = sample_state();
  const std::string path = "roundtrip_test.srnn";
  checkpoint_save(path, state);
  const auto back = checkpoint_load(path);
  CHECK(checkpoint_bytes(back) == checkpoint_bytes(state));
  std::remove(path.c_str());
}

TEST_CASE("a flipped payload byte fails the CRC") {
  auto bytes = checkpoint_bytes(sample_state());
  bytes[bytes.size() / 2] ^= 0x40;
  CHECK_THROWS_WITH_AS(checkpoint_parse(bytes), doctest::Contains("CRC"),
                       CheckpointError);
}

TEST_CASE("truncation never yields a partial load") {
  const auto bytes = checkpoint_bytes(sample_state());
  for (std::size_t keep : {std::size_t(0), std::size_t(3), std::size_t(11),
                           bytes.size() / 2, bytes.size() - 1})
    CHECK_THROWS_AS(
        checkpoint_parse({bytes.begin(), bytes.begin() + keep}),
        CheckpointError);
}

TEST_CASE("bad magic is rejected") {
  auto bytes = checkpoint_bytes(sample_state());
  bytes[0] = 'X';
  // CRC trips first; repair it so the magic check is what fires
  const std::uint32_t crc = crc32(bytes.data(), bytes.size() - 4);
  for (int i = 0; i < 4; ++i)
    bytes[bytes.size() - 4 + i] =
        static_cast<unsigned char>((crc >> (8 * i)) & 0xFF);
  CHECK_THROWS_WITH_AS(checkpoint_parse(bytes), doctest::Contains("magic"),
                       CheckpointError);
}

TEST_CASE("unsupported version is rejected") {
  auto bytes = checkpoint_bytes(sample_state());
  bytes[4] = 9;
  const std::uint32_t crc = crc32(bytes.data(), bytes.size() - 4);
  for (int i = 0; i < 4; ++i)
    bytes[bytes.size() - 4 + i] =
        static_cast<unsigned char>((crc >> (8 * i)) & 0xFF);
  CHECK_THROWS_WITH_AS(checkpoint_parse(bytes), doctest::Contains("version"),
                       CheckpointError);
}

TEST_CASE("committed little-endian fixture loads to the expected tensors") {
  const auto state =
      checkpoint_load(std::string(SRNN_TESTS_DIR) + "/fixtures/reference.srnn");
  REQUIRE(state.size() == 2);
  CHECK(state[0].name == "alpha.weight");
  REQUIRE(state[0].tensor.shape == Shape{2, 3});
  const float alpha[] = {1.5f, -2.25f, 0.125f, 3.0f, -0.5f, 42.0f};
  for (std::size_t i = 0; i < 6; ++i) CHECK(state[0].tensor[i] == alpha[i]);
  CHECK(state[1].name == "beta.bias");
  REQUIRE(state[1].tensor.shape == Shape{4});
  const float beta[] = {0.0f, -1.0f, 2.5f, -0.0078125f};
  for (std::size_t i = 0; i < 4; ++i) CHECK(state[1].tensor[i] == beta[i]);

  // writing those tensors back reproduces the committed bytes
  std::ifstream in(std::string(SRNN_TESTS_DIR) + "/fixtures/reference.srnn",
                   std::ios::binary);
  std::vector<unsigned char> original((std::istreambuf_iterator<char>(in)),
                                      std::istreambuf_iterator<char>());
  CHECK(checkpoint_bytes(state) == original);
}

TEST_CASE("model state round trip preserves every tensor bitwise") {
  Rng rng(7);
  BaseCnnConfig cfg;
  cfg.in_channels = 1;
  cfg.stage_channels = {4, 6};
  auto base = CnnClassifier<float>::init(cfg, 3, rng);
  auto gru = SrnnHalfGru<float>::from_pretrained(base);
  gru.Wz = leaf(rand_uniform<float>({6, 6}, rng));

  const auto state = state_of(gru.named_params());
  const std::string path = "model_roundtrip.srnn";
  checkpoint_save(path, state);
  auto loaded = halfgru_from_state<float>(checkpoint_load(path));
  const auto p1 = gru.named_params();
  const auto p2 = loaded.named_params();
  REQUIRE(p1.size() == p2.size());
  for (std::size_t t = 0; t < p1.size(); ++t) {
    CHECK(p1[t].name == p2[t].name);
    REQUIRE(p1[t].node->value.shape == p2[t].node->value.shape);
    for (std::size_t i = 0; i < p1[t].node->value.size(); ++i)
      CHECK(p1[t].node->value[i] == p2[t].node->value[i]);
  }
  std::remove(path.c_str());
}

TEST_CASE("missing tensors are reported by name, nothing is half-loaded") {
  Rng rng(9);
  BaseCnnConfig cfg;
  cfg.in_channels = 1;
  cfg.stage_channels = {4, 6};
  auto base = CnnClassifier<float>::init(cfg, 3, rng);
  auto state = state_of(base.named_params());
  CHECK(checkpoint_kind(state) == ModelKind::base);

  // a vanilla model cannot load from a base checkpoint
  CHECK_THROWS_WITH_AS(vanilla_from_state<float>(state),
                       doctest::Contains("srnn.U"), CheckpointError);

  // but a base model can load from an srnn checkpoint (extras ignored)
  auto v = SrnnVanilla<float>::from_pretrained(base);
  const auto vstate = state_of(v.named_params());
  CHECK(checkpoint_kind(vstate) == ModelKind::vanilla);
  auto recovered = base_from_state<float>(vstate);
  CHECK(recovered.fc.weight->value.size() == base.fc.weight->value.size());

  auto g = SrnnHalfGru<float>::from_pretrained(base);
  CHECK(checkpoint_kind(state_of(g.named_params())) == ModelKind::half_gru);
}

TEST_CASE("shape mismatch on load is rejected") {
  Rng rng(11);
  BaseCnnConfig cfg;
  cfg.in_channels = 1;
  cfg.stage_channels = {4, 6};
  auto base = CnnClassifier<float>::init(cfg, 3, rng);
  auto state = state_of(base.named_params());
  for (auto& nt : state)
    if (nt.name == "fc.bias") nt.tensor = Tensor<float>({7});
  CHECK_THROWS_WITH_AS(
      load_state(base.named_params(), state),
      doctest::Contains("fc.bias"), CheckpointError);
}

}  // TEST_SUITE
