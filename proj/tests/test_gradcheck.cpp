#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "crossfuse/gradcheck.hpp"

using namespace crossfuse;
using namespace crossfuse::gradcheck;

TEST(RelativeError, FloorsDenominatorAtOne) {
  EXPECT_DOUBLE_EQ(relative_error(1e-4, 2e-4), 1e-4);
  EXPECT_DOUBLE_EQ(relative_error(10.0, 11.0), 1.0 / 11.0);
  EXPECT_DOUBLE_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_TRUE(std::isinf(relative_error(std::numeric_limits<double>::quiet_NaN(), 1.0)));
}

TEST(Primitives, AllPassInBothPrecisions) {
  const auto ops = primitive_ops();
  const auto results = check_primitives(ops);
  ASSERT_EQ(results.size(), 2 * ops.size());
  for (const auto& r : results) {
    EXPECT_TRUE(r.passed()) << r.op << ' ' << r.precision << ' ' << r.max_rel_error;
    EXPECT_GT(r.coordinates, 0u) << r.op;
    EXPECT_DOUBLE_EQ(r.tolerance, r.precision == "f32" ? 1e-3 : 1e-6);
  }
}

TEST(Primitives, CoversEveryDifferentiableOp) {
  const auto ops = primitive_ops();
  for (const char* op : {"matmul", "linear", "add", "mul", "relu", "gelu", "softmax", "log_softmax", "layer_norm",
                         "mean", "concat", "conv2d", "conv1d", "transpose_last_two"}) {
    EXPECT_NE(std::find(ops.begin(), ops.end(), op), ops.end()) << op;
  }
}

TEST(Primitives, CorruptedGradientIsCaught) {
  const auto results = check_primitives({"softmax", "matmul"}, {}, 7, "softmax");
  for (const auto& r : results) EXPECT_EQ(r.passed(), r.op != "softmax") << r.op << ' ' << r.precision;
}

TEST(Primitives, UnknownOpIsRejected) { EXPECT_ANY_THROW(check_primitives({"frobnicate"})); }

TEST(WholeModel, TinyConfigPasses) {
  const FusionModelConfig cfg = tiny_model_config();
  EXPECT_EQ(cfg.common_dim, 8u);
  EXPECT_EQ(cfg.heads, 2u);
  const OpResult r = check_model(cfg);
  EXPECT_TRUE(r.passed()) << r.max_rel_error;
  EXPECT_DOUBLE_EQ(r.tolerance, 1e-2);
  EXPECT_GT(r.coordinates, 100u);
}

TEST(WholeModel, CorruptedGradientIsCaught) {
  const OpResult r = check_model(tiny_model_config(), 10, {}, 11, true);
  EXPECT_FALSE(r.passed());
}
