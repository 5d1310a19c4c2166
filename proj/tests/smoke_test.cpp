#include <gtest/gtest.h>

#include "dream/config.hpp"
#include "dream/decoding.hpp"
#include "dream/eval.hpp"
#include "dream/image_io.hpp"
#include "dream/training.hpp"

TEST(Smoke, DefaultsValidate) {
  dream::RunConfig c = dream::parse_run_config(nlohmann::json::object());
  EXPECT_EQ(dream::parse_run_config(dream::run_config_to_json(c)), c);
}
