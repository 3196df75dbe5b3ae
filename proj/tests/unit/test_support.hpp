#pragma once

#include <gtest/gtest.h>

#include <cstring>
#include <vector>

#include "microtorch/executor.hpp"
#include "microtorch/ops.hpp"

namespace microtorch {
inline void PrintTo(ExecMode mode, std::ostream* os) { *os << to_string(mode); }
}  // namespace microtorch

namespace mt_test {

// Runs each test body once per execution mode.
class ModeTest : public ::testing::TestWithParam<microtorch::ExecMode> {
 protected:
  void SetUp() override {
    microtorch::Executor::global().synchronize();
    microtorch::Executor::global().set_mode(GetParam());
  }
  void TearDown() override {
    microtorch::Executor::global().synchronize();
    microtorch::Executor::global().set_mode(microtorch::ExecMode::Async);
  }
};

inline std::string mode_name(const ::testing::TestParamInfo<microtorch::ExecMode>& info) {
  return std::string(microtorch::to_string(info.param));
}

#define MT_INSTANTIATE_MODES(suite)                                                            \
  INSTANTIATE_TEST_SUITE_P(Modes, suite,                                                     \
                           ::testing::Values(microtorch::ExecMode::Sync,                     \
                                             microtorch::ExecMode::Async),                   \
                           mt_test::mode_name)

inline void expect_values(const microtorch::Tensor& t, const std::vector<double>& expected,
                          double tol = 0.0) {
  const std::vector<double> got = microtorch::to_host(t);
  ASSERT_EQ(got.size(), expected.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    if (tol == 0.0) {
      EXPECT_EQ(got[i], expected[i]) << "at " << i;
    } else {
      EXPECT_NEAR(got[i], expected[i], tol) << "at " << i;
    }
  }
}

template <typename Fn>
microtorch::ErrorCode error_code_of(Fn&& fn) {
  try {
    fn();
  } catch (const microtorch::Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected a microtorch::Error";
  return microtorch::ErrorCode::InvalidArgument;
}

}  // namespace mt_test
