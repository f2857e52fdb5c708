#include "doctest.h"

#include "adabatch/checkpoint.hpp"
#include "adabatch/experiment.hpp"
#include "support/oracles.hpp"

using namespace adabatch;

namespace {

RunConfig tiny_config() {
  RunConfig c;
  c.seed = 17;
  c.input = SampleShape{1, 5, 5};
  c.layers = {LayerSpec{LayerKind::conv, 2, 3, 3, 2, 2, Activation::identity},
              LayerSpec{LayerKind::bn, 0, 1, 1, 1, 1, Activation::tanh},
              LayerSpec{LayerKind::fc, 3}};
  c.dataset.classes = 3;
  c.dataset.per_class = 20;
  c.optimizer = SgdConfig{0.9, 5e-4};
  c.schedule.base_lr = 0.05;
  c.schedule.base_batch = 4;
  c.schedule.batch_multiplier = 2;
  c.schedule.lr_decay = 0.75;
  c.schedule.interval_epochs = 2;
  c.schedule.total_epochs = 5;
  return c;
}

}  // namespace

TEST_CASE("encode and decode are inverse") {
  CheckpointData d;
  d.records.push_back({"a", {2, 3}, {1, -2, 3.5, 1e-300, -0.0, 7}});
  d.records.push_back({"velocity.a", {6}, {0, 0, 0, 0, 0, 1}});
  d.rng_state = "state bytes";
  d.next_epoch = 3;
  const auto bytes = encode_checkpoint(d);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "ADAB");
  CHECK(decode_checkpoint(bytes) == d);
  CHECK(encode_checkpoint(decode_checkpoint(bytes)) == bytes);
}

TEST_CASE("decode rejects damaged input") {
  CheckpointData d;
  d.records.push_back({"w", {2}, {1, 2}});
  d.rng_state = "x";
  const auto bytes = encode_checkpoint(d);

  for (std::size_t cut : {std::size_t{2}, std::size_t{7}, bytes.size() / 2, bytes.size() - 1}) {
    const std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    CAPTURE(cut);
    CHECK_THROWS_AS(decode_checkpoint(part), FormatError);
  }
  auto magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_WITH_AS(decode_checkpoint(magic), doctest::Contains("magic"), FormatError);
  auto version = bytes;
  version[4] = 2;
  CHECK_THROWS_WITH_AS(decode_checkpoint(version), doctest::Contains("version"), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(trailing), FormatError);
}

TEST_CASE("save, load, save is byte-identical") {
  oracle::TempDir dir("ckpt");
  Experiment<double> exp(tiny_config());
  {
    TrainOptions o;
    exp.run(o);
  }
  exp.save(dir / "a.ckpt");
  Experiment<double> other(tiny_config());
  other.resume(dir / "a.ckpt");
  other.save(dir / "b.ckpt");
  CHECK(read_bytes(dir / "a.ckpt") == read_bytes(dir / "b.ckpt"));
  CHECK(other.next_epoch() == 5);
  CHECK(other.rng() == exp.rng());
  auto pa = exp.net().state_tensors(), pb = other.net().state_tensors();
  for (std::size_t k = 0; k < pa.size(); ++k) CHECK(*pa[k].tensor == *pb[k].tensor);
  CHECK(exp.optimizer().velocity() == other.optimizer().velocity());
}

TEST_CASE("resume reproduces the uninterrupted run") {
  oracle::TempDir dir("resume");
  Experiment<double> full(tiny_config());
  const auto all = full.run();

  Experiment<double> first(tiny_config());
  TrainOptions stop;
  std::vector<EpochLog> head;
  stop.on_epoch = [&](const EpochLog& l) {
    head.push_back(l);
    if (l.epoch == 1) first.save(dir / "epoch2.ckpt");
  };
  first.run(stop);

  Experiment<double> resumed(tiny_config());
  resumed.resume(dir / "epoch2.ckpt");
  CHECK(resumed.next_epoch() == 2);
  const auto tail = resumed.run();
  REQUIRE(tail.size() == 3);
  for (std::size_t i = 0; i < tail.size(); ++i) CHECK(tail[i].same_except_wall(all[i + 2]));
}

TEST_CASE("restore rejects a different architecture") {
  oracle::TempDir dir("arch");
  Experiment<double> exp(tiny_config());
  exp.save(dir / "a.ckpt");
  auto wide = tiny_config();
  wide.layers[0].out = 3;
  Experiment<double> other(wide);
  CHECK_THROWS_AS(other.resume(dir / "a.ckpt"), FormatError);
  CHECK_THROWS_AS(other.resume(dir / "missing.ckpt"), DataError);

  auto bytes = read_bytes(dir / "a.ckpt");
  bytes.resize(bytes.size() - 3);
  write_bytes(dir / "cut.ckpt", bytes);
  CHECK_THROWS_WITH_AS(exp.resume(dir / "cut.ckpt"), doctest::Contains("truncated"), FormatError);
}

TEST_CASE("float networks round-trip through the f64 file") {
  oracle::TempDir dir("f32");
  auto c = tiny_config();
  c.precision = "f32";
  Experiment<float> exp(c);
  exp.run();
  exp.save(dir / "f.ckpt");
  Experiment<float> back(c);
  back.resume(dir / "f.ckpt");
  auto pa = exp.net().state_tensors(), pb = back.net().state_tensors();
  for (std::size_t k = 0; k < pa.size(); ++k) CHECK(*pa[k].tensor == *pb[k].tensor);
}
