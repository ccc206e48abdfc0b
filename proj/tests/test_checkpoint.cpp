#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "foura/checkpoint.hpp"
#include "foura/rng.hpp"
#include "foura/trainer.hpp"

using namespace foura;

namespace {

Checkpoint random_checkpoint(Rng& rng) {
  Checkpoint ckpt;
  ckpt.meta = {{"task", "matrix_fit"}, {"rank", "4"}, {"transform", "dct"},
               {"axis", "embedding"}, {"alpha", "1"}, {"seed", "9"},
               {"gate_mode", "absent"}, {"threshold", "0.5"},
               {"lambda_entropy", "0.001"}, {"layers", "0"}};
  const std::size_t n_tensors = 1 + rng.next_u64() % 4;
  for (std::size_t i = 0; i < n_tensors; ++i) {
    TensorRecord t;
    t.name = "tensor" + std::to_string(i);
    t.dtype = kDtypeF64;
    const std::uint32_t r = 1 + static_cast<std::uint32_t>(rng.next_u64() % 6);
    const std::uint32_t c = 1 + static_cast<std::uint32_t>(rng.next_u64() % 6);
    t.dims = {r, c};
    for (std::uint32_t v = 0; v < r * c; ++v) t.values.push_back(rng.gaussian());
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

}  // namespace

TEST_CASE("checkpoint bytes round-trip bitwise") {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const Checkpoint ckpt = random_checkpoint(rng);
    const std::string bytes = encode_checkpoint(ckpt);
    const Checkpoint back = decode_checkpoint(bytes);
    REQUIRE(back.meta == ckpt.meta);
    REQUIRE(back.tensors.size() == ckpt.tensors.size());
    for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
      REQUIRE(back.tensors[i].name == ckpt.tensors[i].name);
      REQUIRE(back.tensors[i].dims == ckpt.tensors[i].dims);
      // bitwise: values compare equal as doubles including signs of zero
      REQUIRE(std::memcmp(back.tensors[i].values.data(), ckpt.tensors[i].values.data(),
                          ckpt.tensors[i].values.size() * sizeof(double)) == 0);
    }
    // encoding is canonical: re-encoding reproduces the same bytes
    REQUIRE(encode_checkpoint(back) == bytes);
  }
}

TEST_CASE("unknown version is rejected") {
  Rng rng(32);
  const Checkpoint ckpt = random_checkpoint(rng);
  std::string bytes = encode_checkpoint(ckpt);
  bytes[5] = 2;  // bump the little-endian version word
  REQUIRE_THROWS_AS(decode_checkpoint(bytes), CheckpointError);
}

TEST_CASE("corrupt containers are rejected") {
  Rng rng(33);
  const Checkpoint ckpt = random_checkpoint(rng);
  std::string bytes = encode_checkpoint(ckpt);

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  REQUIRE_THROWS_AS(decode_checkpoint(bad_magic), CheckpointError);

  const std::string truncated = bytes.substr(0, bytes.size() - 3);
  REQUIRE_THROWS_AS(decode_checkpoint(truncated), CheckpointError);

  const std::string trailing = bytes + "xx";
  REQUIRE_THROWS_AS(decode_checkpoint(trailing), CheckpointError);
}

TEST_CASE("f32 storage widens back to doubles with float precision") {
  TensorRecord t;
  t.name = "w";
  t.dtype = kDtypeF32;
  t.dims = {1, 3};
  t.values = {1.0, 0.333333333333333, -2.5};
  Checkpoint ckpt;
  ckpt.meta = {{"layers", "0"}};
  ckpt.tensors = {t};
  const Checkpoint back = decode_checkpoint(encode_checkpoint(ckpt));
  REQUIRE(back.tensors[0].dtype == kDtypeF32);
  for (std::size_t i = 0; i < 3; ++i) {
    REQUIRE(back.tensors[0].values[i] ==
            static_cast<double>(static_cast<float>(t.values[i])));
  }
}

TEST_CASE("trained layers survive the checkpoint round trip") {
  TrainConfig cfg;
  cfg.task = Task::MatrixFit;
  cfg.rank = 4;
  cfg.r_true = 2;
  cfg.steps = 60;
  cfg.transform = TransformKind::Dct;
  cfg.gate_mode = GateChoice::Frozen;
  cfg.seed = 77;
  const TrainTrace tr = run_matrix_fit(cfg);

  const Checkpoint ckpt = make_checkpoint(cfg, tr.final_layers);
  const Checkpoint back = decode_checkpoint(encode_checkpoint(ckpt));
  const std::vector<AdapterLayer> layers = layers_from_checkpoint(back);
  REQUIRE(layers.size() == 1);
  REQUIRE(layers[0].w0 == tr.final_layers[0].w0);
  REQUIRE(layers[0].a == tr.final_layers[0].a);
  REQUIRE(layers[0].b == tr.final_layers[0].b);
  REQUIRE(layers[0].gate->mode == GateMode::Frozen);
  REQUIRE(layers[0].gate->frozen_mask == tr.final_layers[0].gate->frozen_mask);
  REQUIRE(layers[0].alpha == cfg.alpha);
  REQUIRE(layers[0].transform == cfg.transform);

  // behavioural equivalence on a fresh input
  Rng rng(5);
  const Matrix z = rng.gaussian_matrix(3, cfg.k1);
  REQUIRE(max_abs_diff(foura_forward(layers[0], z).first,
                       foura_forward(tr.final_layers[0], z).first) == 0.0);
}

TEST_CASE("file round trip") {
  Rng rng(34);
  const Checkpoint ckpt = random_checkpoint(rng);
  const std::string path = "test_ckpt_roundtrip.bin";
  write_checkpoint(path, ckpt);
  const Checkpoint back = read_checkpoint(path);
  REQUIRE(encode_checkpoint(back) == encode_checkpoint(ckpt));
  std::remove(path.c_str());

  REQUIRE_THROWS_AS(read_checkpoint("does_not_exist.bin"), CheckpointError);
}

TEST_CASE("decoder survives corrupted byte streams") {
  Rng rng(35);
  const Checkpoint ckpt = random_checkpoint(rng);
  const std::string bytes = encode_checkpoint(ckpt);

  // every proper prefix is rejected cleanly
  for (std::size_t len = 0; len < bytes.size(); ++len) {
    REQUIRE_THROWS_AS(decode_checkpoint(std::string_view(bytes.data(), len)),
                      CheckpointError);
  }

  // random byte soup never crashes: it is either rejected or parses
  for (int trial = 0; trial < 200; ++trial) {
    std::string junk(1 + rng.next_u64() % 96, '\0');
    for (char& c : junk) c = static_cast<char>(rng.next_u64() & 0xFF);
    try {
      (void)decode_checkpoint(junk);
    } catch (const CheckpointError&) {
    }
  }
}

TEST_CASE("missing tensors are reported") {
  TrainConfig cfg;
  cfg.task = Task::MatrixFit;
  cfg.rank = 4;
  cfg.r_true = 2;
  cfg.steps = 5;
  cfg.transform = TransformKind::Dct;
  cfg.gate_mode = GateChoice::Soft;
  const TrainTrace tr = run_matrix_fit(cfg);
  Checkpoint ckpt = make_checkpoint(cfg, tr.final_layers);
  ckpt.tensors.erase(ckpt.tensors.begin());  // drop layer0.w0
  REQUIRE_THROWS_AS(layers_from_checkpoint(ckpt), CheckpointError);
}
