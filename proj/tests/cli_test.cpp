#include <fstream>

#include "doctest.h"
#include "minnet/checkpoint.hpp"
#include "minnet/config.hpp"
#include "test_util.hpp"

using namespace minnet;

namespace {

ModelSpec small_spec() {
  ModelSpec spec;
  spec.family = Family::densenet_bc;
  spec.n = 1;
  spec.k = 4;
  spec.min_substitution = true;
  spec.seed = 12;
  return spec;
}

std::vector<char> file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::vector<char>((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("checkpoint save/load/apply round trip") {
  testutil::TempDir tmp;
  Model m = build(small_spec());
  // make running stats non-trivial so buffers are exercised
  Rng rng(4);
  auto x = testutil::random_tensor<float>({4, 3, 32, 32}, rng);
  m.forward(x, true);

  const auto path = tmp.str("model.ckpt");
  save_checkpoint(path, checkpoint_from_model(m, 7));

  auto loaded = load_checkpoint(path);
  CHECK(loaded.epoch == 7);
  CHECK(loaded.spec.family == Family::densenet_bc);
  CHECK(loaded.spec.n == 1);
  CHECK(loaded.spec.k == 4);
  CHECK(loaded.spec.min_substitution);
  CHECK(loaded.spec.seed == 12);

  Model restored = model_from_checkpoint(loaded);
  REQUIRE(restored.params().size() == m.params().size());
  for (size_t i = 0; i < m.params().size(); ++i)
    CHECK(restored.params().items()[i].tensor.values() ==
          m.params().items()[i].tensor.values());
  auto ba = m.buffers();
  auto bb = restored.buffers();
  REQUIRE(ba.size() == bb.size());
  for (size_t i = 0; i < ba.size(); ++i) CHECK(*ba[i].data == *bb[i].data);

  SUBCASE("save -> load -> save is byte-identical") {
    const auto path2 = tmp.str("model2.ckpt");
    save_checkpoint(path2, loaded);
    CHECK(file_bytes(path) == file_bytes(path2));
  }
  SUBCASE("corruption is caught by the checksum") {
    auto bytes = file_bytes(path);
    bytes[bytes.size() / 2] ^= 0x40;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("checksum"),
                         std::runtime_error);
  }
  SUBCASE("truncation is an explicit error") {
    auto bytes = file_bytes(path);
    bytes.resize(bytes.size() / 3);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  }
}

TEST_CASE("checkpoint entries follow the parameter-store order") {
  Model m = build(small_spec());
  auto ckpt = checkpoint_from_model(m, 0);
  const auto& items = m.params().items();
  REQUIRE(ckpt.entries.size() == items.size() + m.buffers().size());
  for (size_t i = 0; i < items.size(); ++i) CHECK(ckpt.entries[i].name == items[i].name);
}

TEST_CASE("snapshot checkpoints carry the snapshot values") {
  Model m = build(small_spec());
  auto snap = snapshot(m);
  for (auto& v : snap.params[0]) v += 1.0f;
  auto ckpt = checkpoint_from_snapshot(m, snap, 3);
  CHECK(ckpt.epoch == 3);
  CHECK(ckpt.entries[0].values == snap.params[0]);
  CHECK(ckpt.entries[0].values != m.params().items()[0].tensor.values());
}

TEST_CASE("config files parse with comments and overrides") {
  testutil::TempDir tmp;
  const auto path = tmp.str("run.cfg");
  {
    std::ofstream out(path);
    out << "# training setup\n"
        << "family = densenet\n"
        << "n = 9\n"
        << "min = 1\n"
        << "lr = 0.05   # initial rate\n"
        << "lr_drops = 30:10,60:10\n"
        << "seed = 77\n"
        << "synthetic = true\n";
  }
  RunConfig cfg;
  load_config_file(cfg, path);
  CHECK(cfg.model.family == Family::densenet_bc);
  CHECK(cfg.model.n == 9);
  CHECK(cfg.model.min_substitution);
  CHECK(cfg.training.lr0 == doctest::Approx(0.05));
  REQUIRE(cfg.training.lr_drops.size() == 2);
  CHECK(cfg.training.lr_drops[1].epoch == 60);
  CHECK(cfg.model.seed == 77);
  CHECK(cfg.training.seed == 77);
  CHECK(cfg.synthetic);

  SUBCASE("unknown keys are rejected") {
    CHECK_THROWS_AS(apply_config_key(cfg, "warp_factor", "9"), std::invalid_argument);
  }
  SUBCASE("serialized form reparses to the same config") {
    const auto echo_path = tmp.str("echo.cfg");
    {
      std::ofstream out(echo_path);
      out << serialize_config(cfg);
    }
    RunConfig back;
    load_config_file(back, echo_path);
    CHECK(serialize_config(back) == serialize_config(cfg));
  }
  SUBCASE("unsorted drops are rejected") {
    CHECK_THROWS_AS(parse_lr_drops("60:10,30:10"), std::invalid_argument);
    CHECK_THROWS_AS(parse_lr_drops("60"), std::invalid_argument);
    CHECK(parse_lr_drops("").empty());
  }
}

TEST_SUITE_END();
