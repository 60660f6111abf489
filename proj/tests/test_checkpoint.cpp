#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "dualmask/checkpoint.hpp"
#include "fixtures.hpp"

namespace dualmask {
namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("dualmask_test_" + name);
}

TEST(Checkpoint, RoundTripPreservesParametersAndMeta) {
  Predictor model(testing::tiny_config(16, 2, 12));
  testing::randomize(model, 5);
  const CheckpointMeta meta{42, 2, 96, 7, "masked", "model.dim = 16\n"};
  const auto path = temp_file("roundtrip.ckpt");
  save_checkpoint(path, model, meta);

  const auto loaded = load_checkpoint(path);
  EXPECT_EQ(parameter_hash(loaded.model), parameter_hash(model));
  EXPECT_EQ(loaded.meta.step, 42);
  EXPECT_EQ(loaded.meta.stage, 2);
  EXPECT_EQ(loaded.meta.sobol_index, 96u);
  EXPECT_EQ(loaded.meta.seed, 7u);
  EXPECT_EQ(loaded.meta.config_echo, meta.config_echo);
  EXPECT_EQ(model_config_hash(loaded.config), model_config_hash(model.config()));
  for (std::size_t p = 0; p < model.params().size(); ++p) {
    const auto a = model.params()[p].tensor.data();
    const auto b = loaded.model.params()[p].tensor.data();
    ASSERT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
  }

  Predictor fresh(testing::tiny_config(16, 2, 12));
  load_into(path, fresh);
  EXPECT_EQ(parameter_hash(fresh), parameter_hash(model));
}

TEST(Checkpoint, MismatchNamesEveryField) {
  Predictor model(testing::tiny_config(16, 1, 12));
  const auto path = temp_file("mismatch.ckpt");
  save_checkpoint(path, model, {});
  auto other = testing::tiny_config(32, 2, 12);
  Predictor wrong(other);
  try {
    load_into(path, wrong);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("model.dim 16 vs 32"), std::string::npos) << what;
    EXPECT_NE(what.find("model.layers 1 vs 2"), std::string::npos) << what;
  }
}

TEST(Checkpoint, RejectsForeignFile) {
  const auto path = temp_file("foreign.ckpt");
  {
    std::ofstream os(path);
    os << "not a checkpoint\n";
  }
  EXPECT_THROW(load_checkpoint(path), std::runtime_error);
}

}  // namespace
}  // namespace dualmask
