#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "cbd/error.hpp"
#include "cbd/io_util.hpp"
#include "cbd/rng.hpp"
#include "cbd/trajectory.hpp"

using namespace cbd;

namespace {

Trajectory make_traj(int T, Rng& rng, std::int64_t period = 0) {
  Trajectory t;
  t.period = period;
  t.states = Mat(T + 1, kStateDim);
  for (Eigen::Index i = 0; i < t.states.size(); ++i) t.states.data()[i] = rng.normal();
  // Budget feature decreasing so spend-based functionals behave.
  for (int r = 0; r <= T; ++r) t.states(r, kBudgetFeature) = 100.0 - 2.0 * r;
  t.actions = Mat(T, 1);
  for (int r = 0; r < T; ++r) t.actions(r, 0) = rng.normal();
  t.rewards = Vec(T);
  for (int r = 0; r < T; ++r) t.rewards[r] = std::floor(rng.uniform(0.0, 5.0));
  t.y = 0.5;
  return t;
}

Dataset make_dataset(int n, int T, std::uint64_t seed) {
  Dataset d;
  d.T = T;
  Rng rng(seed);
  for (int i = 0; i < n; ++i) d.trajectories.push_back(make_traj(T, rng, i));
  d.condition_stats = compute_condition_stats(d);
  d.state_stats = compute_feature_stats(d);
  const PropertyFunctional f = PropertyFunctional::returns(d.condition_stats);
  for (Trajectory& t : d.trajectories) t.y = compute_condition(t, f);
  return d;
}

}  // namespace

TEST_CASE("compute_condition: return tag") {
  Rng rng(1);
  Trajectory t = make_traj(4, rng);

  SUBCASE("all rewards zero maps to the normalization offset") {
    t.rewards.setZero();
    ConditionStats cs{0.0, 10.0};
    CHECK(compute_condition(t, PropertyFunctional::returns(cs)) == 0.0);
  }
  SUBCASE("hand-summed toy: rewards 1,0,2,0 -> raw 3, scaled by stats") {
    t.rewards << 1.0, 0.0, 2.0, 0.0;
    ConditionStats cs{1.0, 5.0};
    CHECK(compute_condition(t, PropertyFunctional::returns(cs)) ==
          doctest::Approx((3.0 - 1.0) / 4.0).epsilon(1e-15));
  }
}

TEST_CASE("compute_condition: early_spend") {
  Rng rng(2);
  Trajectory t = make_traj(8, rng);

  SUBCASE("all spend in the first half gives 1.0") {
    for (int r = 0; r <= 8; ++r) t.states(r, kBudgetFeature) = r < 3 ? 50.0 - 10.0 * r : 30.0;
    CHECK(compute_condition(t, PropertyFunctional::early_spend()) == 1.0);
  }
  SUBCASE("zero total cost is defined as 0") {
    for (int r = 0; r <= 8; ++r) t.states(r, kBudgetFeature) = 50.0;
    CHECK(compute_condition(t, PropertyFunctional::early_spend()) == 0.0);
  }
  SUBCASE("invariant to uniform scaling of all costs") {
    Rng r2(3);
    for (int r = 0; r <= 8; ++r)
      t.states(r, kBudgetFeature) = 100.0 - 5.0 * r - r2.uniform(0.0, 2.0) * r;
    const double base = compute_condition(t, PropertyFunctional::early_spend());
    Trajectory scaled = t;
    scaled.states.col(kBudgetFeature) *= 7.5;
    CHECK(compute_condition(scaled, PropertyFunctional::early_spend()) ==
          doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("compute_condition: smoothness is the spend variance") {
  Rng rng(4);
  Trajectory t = make_traj(4, rng);
  // budgets 100, 98, 96, 94, 92 -> spends all 2 -> variance 0
  CHECK(compute_condition(t, PropertyFunctional::smoothness()) == 0.0);
  t.states(2, kBudgetFeature) = 95.0;  // spends 2,3,1,2 -> mean 2, var 1/2
  CHECK(compute_condition(t, PropertyFunctional::smoothness()) ==
        doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("normalization: z-score plus exact round-trip") {
  SUBCASE("constant-state trajectory normalizes to zeros with clamped std") {
    Dataset d;
    d.T = 3;
    Trajectory t;
    t.states = Mat::Constant(4, kStateDim, 2.5);
    t.actions = Mat::Zero(3, 1);
    t.rewards = Vec::Zero(3);
    d.trajectories.push_back(t);
    const Dataset norm = normalize_states(d);
    CHECK(norm.trajectories[0].states.cwiseAbs().maxCoeff() == 0.0);
    for (auto flag : norm.state_stats.clamped) CHECK(flag == 1);
  }
  SUBCASE("two points at 0 and 2 normalize to -1 and +1") {
    Dataset d;
    d.T = 1;
    for (double v : {0.0, 2.0}) {
      Trajectory t;
      t.states = Mat::Constant(2, kStateDim, v);
      t.actions = Mat::Zero(1, 1);
      t.rewards = Vec::Zero(1);
      d.trajectories.push_back(t);
    }
    const Dataset norm = normalize_states(d);
    CHECK(norm.trajectories[0].states(0, 0) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(norm.trajectories[1].states(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("denormalize(normalize(x)) is identity within 1e-9") {
    Dataset d = make_dataset(6, 5, 42);
    const FeatureStats stats = compute_feature_stats(d);
    for (const Trajectory& t : d.trajectories) {
      const Mat back = denormalize_states(normalize_states(t.states, stats), stats);
      CHECK((back - t.states).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
}

TEST_CASE("dataset save/load round-trips both formats") {
  namespace fs = std::filesystem;
  const Dataset d = make_dataset(10, 6, 31);
  const std::string dir = (fs::temp_directory_path() / "cbd_traj_test").string();
  fs::create_directories(dir);

  for (const std::string name : {std::string("d.jsonl"), std::string("d.bin")}) {
    const std::string path = dir + "/" + name;
    save_dataset(d, path);
    const Dataset back = load_dataset(path);
    REQUIRE(back.size() == d.size());
    CHECK(back.T == d.T);
    CHECK(back.normalized == d.normalized);
    for (std::size_t i = 0; i < d.size(); ++i) {
      CHECK((back.trajectories[i].states - d.trajectories[i].states).cwiseAbs().maxCoeff() == 0.0);
      CHECK((back.trajectories[i].actions - d.trajectories[i].actions).cwiseAbs().maxCoeff() ==
            0.0);
      CHECK((back.trajectories[i].rewards - d.trajectories[i].rewards).cwiseAbs().maxCoeff() ==
            0.0);
      CHECK(back.trajectories[i].y == d.trajectories[i].y);
      CHECK(back.trajectories[i].period == d.trajectories[i].period);
    }
    CHECK((back.state_stats.mean - d.state_stats.mean).cwiseAbs().maxCoeff() == 0.0);
    CHECK(back.condition_stats.y_min == d.condition_stats.y_min);
  }

  SUBCASE("empty dataset round-trips") {
    Dataset empty;
    empty.T = 6;
    empty.state_stats.mean = Vec::Zero(kStateDim);
    empty.state_stats.stddev = Vec::Ones(kStateDim);
    empty.state_stats.clamped.assign(kStateDim, 0);
    save_dataset(empty, dir + "/empty.jsonl");
    CHECK(load_dataset(dir + "/empty.jsonl").empty());
  }

  SUBCASE("corrupted header magic fails with a format error") {
    const std::string path = dir + "/bad.jsonl";
    save_dataset(d, path);
    std::string text = read_file(path);
    const auto pos = text.find("CBDD");
    text.replace(pos, 4, "XXXX");
    write_file(path, text);
    try {
      load_dataset(path);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.code() == FormatError::Code::bad_magic);
    }
  }
  SUBCASE("flipped payload byte fails the checksum") {
    const std::string path = dir + "/crc.jsonl";
    save_dataset(d, path);
    std::string text = read_file(path);
    const auto pos = text.find("\"y\":");
    text[pos + 4] = text[pos + 4] == '0' ? '1' : '0';
    write_file(path, text);
    try {
      load_dataset(path);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      const bool crc_or_malformed = e.code() == FormatError::Code::checksum ||
                                    e.code() == FormatError::Code::malformed;
      CHECK(crc_or_malformed);
    }
  }
  SUBCASE("truncated record stream is reported") {
    const std::string path = dir + "/trunc.jsonl";
    save_dataset(d, path);
    std::string text = read_file(path);
    write_file(path, text.substr(0, text.size() / 2));
    try {
      load_dataset(path);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      const bool trunc_or_crc = e.code() == FormatError::Code::truncated ||
                                e.code() == FormatError::Code::checksum;
      CHECK(trunc_or_crc);
    }
  }
}

TEST_CASE("stored y is recomputable from rewards") {
  const Dataset d = make_dataset(8, 5, 77);
  const PropertyFunctional f = PropertyFunctional::returns(d.condition_stats);
  for (const Trajectory& t : d.trajectories)
    CHECK(std::abs(compute_condition(t, f) - t.y) < 1e-9);
}

TEST_CASE("trajectory validation rejects malformed records") {
  Rng rng(9);
  Trajectory t = make_traj(4, rng);
  t.validate();
  Trajectory bad = t;
  bad.actions = Mat::Zero(3, 1);
  CHECK_THROWS_AS(bad.validate(), ShapeError);
  bad = t;
  bad.states(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}
