#include <chrono>
#include <cmath>

#include <gtest/gtest.h>

#include "pkd/error.hpp"
#include "pkd/verify.hpp"

using namespace pkd;

namespace {

// closed_form_step with the tie rule flipped: |v_i| == lambda activates.
SparseStep flipped_tie_step(std::span<const double> v, double eps, double lambda) {
  SparseStep s;
  s.epsilon = eps;
  s.signs.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (std::abs(v[i]) >= lambda && v[i] != 0.0) s.signs[i] = v[i] > 0 ? 1 : -1;
  }
  return s;
}

}  // namespace

TEST(verify, instances_contain_threshold_coordinates) {
  const auto inst = random_lp_instances(50, 0);
  ASSERT_EQ(inst.size(), 50u);
  for (const auto& i : inst) {
    bool half = false, at = false, twice = false;
    for (double v : i.v) {
      half |= std::abs(v) == i.lambda / 2;
      at |= std::abs(v) == i.lambda;
      twice |= std::abs(v) == 2 * i.lambda;
    }
    EXPECT_TRUE(half && at && twice);
    EXPECT_GT(i.epsilon, 0.0);
  }
  EXPECT_EQ(random_lp_instances(5, 3)[4].v, random_lp_instances(5, 3)[4].v);
}

TEST(verify, theorem_suite_passes) {
  VerifyOptions opts;
  const VerifyReport r = verify_theorems(opts);
  EXPECT_TRUE(r.passed()) << r.to_text();
  EXPECT_EQ(r.checks.size(), 5u);
}

TEST(verify, flipped_tie_rule_is_caught) {
  const auto inst = random_lp_instances(1000, 0);
  const CheckResult bad = check_step_matches_oracle(inst, flipped_tie_step);
  EXPECT_FALSE(bad.passed) << bad.detail;
  VerifyOptions opts;
  opts.step = flipped_tie_step;
  EXPECT_FALSE(verify_theorems(opts).passed());
}

TEST(verify, gradient_suite_passes_within_budget) {
  const auto t0 = std::chrono::steady_clock::now();
  const VerifyReport r = run_verify("gradients", {});
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_TRUE(r.passed()) << r.to_text();
  EXPECT_LT(s, 60.0);
}

TEST(verify, report_lists_tolerances) {
  VerifyReport r;
  r.checks.push_back({"a", true, "1e-12", "fine", 0.5});
  r.checks.push_back({"b", false, "exact", "broken", 0.0});
  EXPECT_FALSE(r.passed());
  const std::string text = r.to_text();
  EXPECT_NE(text.find("PASS a [1e-12] fine"), std::string::npos);
  EXPECT_NE(text.find("FAIL b [exact] broken"), std::string::npos);
  EXPECT_THROW(run_verify("everything", {}), ConfigError);
}

TEST(verify, relative_error_floor) {
  EXPECT_EQ(gradient_relative_error(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(gradient_relative_error(1e-9, 0.0), 1e-3);
  EXPECT_DOUBLE_EQ(gradient_relative_error(2.0, 1.0), 0.5);
}

TEST(verify, calibrated_worlds_have_unit_normalizer) {
  for (const auto& w : random_calibrated_worlds(20, 1)) {
    EXPECT_GE(w.size(), 2u);
    EXPECT_LE(w.size(), 50u);
    EXPECT_NEAR(w.z, 1.0, 1e-12);
  }
}
