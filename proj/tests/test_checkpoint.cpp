#include <doctest.h>

#include "test_util.hpp"
#include "zhmt/checkpoint.hpp"
#include "zhmt/errors.hpp"

using namespace zhmt;

namespace {

Checkpoint sample() {
  Checkpoint c;
  c.model = ModelConfig::tiny();
  c.params = init_model(c.model);
  c.adam = init_adam_state(c.params.trainable);
  c.adam.step = 7;
  for (auto& [_, t] : c.adam.v) t.fill(0.25);
  c.step = 7;
  c.meta = {{"seed", "0"}, {"stage", "pretrain"}};
  c.log_tsv = "step\tlr\n1\t0.5\n";
  return c;
}

}  // namespace

TEST_CASE("encode/decode round trip is bit-exact") {
  const auto c = sample();
  const std::string bytes = encode_checkpoint(c);
  const auto back = decode_checkpoint(bytes);
  CHECK(back == c);
  CHECK(encode_checkpoint(back) == bytes);
  CHECK(back.params.frozen_checksum() == c.params.frozen_checksum());
}

TEST_CASE("save and load through files") {
  testutil::TempDir dir("ckpt");
  const auto c = sample();
  const auto path = dir / "nested" / "step-7.ckpt";
  save_checkpoint(c, path);
  CHECK(load_checkpoint(path) == c);
  const std::string manifest = testutil::slurp(manifest_path(path));
  CHECK(manifest == manifest_text(c));
  CHECK(manifest.find("init_mode\tmixed") != std::string::npos);
  CHECK(manifest.find("step\t7\n") != std::string::npos);
  CHECK(manifest.find("meta.stage\tpretrain") != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(path.string() + ".tmp"));
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
}

TEST_CASE("damaged checkpoints are rejected") {
  const std::string bytes = encode_checkpoint(sample());
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, bytes.size() / 2, bytes.size() - 1})
    CHECK_THROWS_AS(decode_checkpoint(std::string_view(bytes).substr(0, cut)), CheckpointError);
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x01;
  CHECK_THROWS_AS(decode_checkpoint(flipped), CheckpointError);
  std::string magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(magic), CheckpointError);
  CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), CheckpointError);
}

TEST_CASE("metadata must be single-line") {
  auto c = sample();
  c.meta["bad"] = "two\nlines";
  CHECK_THROWS_AS(encode_checkpoint(c), CheckpointError);
}
