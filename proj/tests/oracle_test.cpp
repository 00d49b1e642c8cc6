#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "coflow/oracle.hpp"
#include "support/oracles.hpp"

using namespace coflow;

namespace {

double binary_entropy(double p) { return -p * std::log(p) - (1 - p) * std::log(1 - p); }

JointMarkovSpec from_rows(int nx, int ny, std::vector<double> t) {
  JointMarkovSpec s;
  s.nx = nx;
  s.ny = ny;
  s.transition = std::move(t);
  s.initial.assign(s.states(), 1.0 / s.states());
  return s;
}

}  // namespace

TEST(ExactFlow, IdentityOnRandomSpecs) {
  std::mt19937_64 rng(101);
  for (int i = 0; i < 100; ++i) {
    const int nx = 1 + static_cast<int>(rng() % 4), ny = 1 + static_cast<int>(rng() % 4);
    const auto r = exact_flow(random_spec(rng, nx, ny));
    EXPECT_LT(std::abs(r.identity_gap()), 1e-9) << i;
    EXPECT_GE(r.te_x_to_y, -1e-12);
    EXPECT_GE(r.te_y_to_x, -1e-12);
    EXPECT_GE(r.instantaneous, -1e-12);
  }
}

TEST(ExactFlow, CanonicalSpecs) {
  const double ln2 = std::numbers::ln2;
  const auto ind = exact_flow(independent_spec());
  EXPECT_NEAR(ind.total_flow, 0.0, 1e-12);
  EXPECT_NEAR(ind.te_x_to_y, 0.0, 1e-12);
  EXPECT_NEAR(ind.te_y_to_x, 0.0, 1e-12);
  EXPECT_NEAR(ind.instantaneous, 0.0, 1e-12);
  EXPECT_NEAR(ind.h_x, binary_entropy(0.3), 1e-12);
  EXPECT_NEAR(ind.h_y, binary_entropy(0.4), 1e-12);

  const auto copy = exact_flow(copy_spec());
  EXPECT_NEAR(copy.total_flow, ln2, 1e-12);
  EXPECT_NEAR(copy.te_x_to_y, ln2, 1e-12);
  EXPECT_NEAR(copy.te_y_to_x, 0.0, 1e-12);
  EXPECT_NEAR(copy.instantaneous, 0.0, 1e-12);

  const auto inst = exact_flow(instantaneous_spec());
  EXPECT_NEAR(inst.total_flow, ln2, 1e-12);
  EXPECT_NEAR(inst.te_x_to_y, 0.0, 1e-12);
  EXPECT_NEAR(inst.te_y_to_x, 0.0, 1e-12);
  EXPECT_NEAR(inst.instantaneous, ln2, 1e-12);
}

TEST(ExactFlow, MatchesPluginEntropiesOfLongPaths) {
  std::mt19937_64 rng(103);
  for (int i = 0; i < 5; ++i) {
    const auto spec = random_spec(rng, 2, 3);
    const auto exact = exact_flow(spec);
    const auto plug = reference::plugin_entropies(sample_paths(spec, 400000, 7 + i));
    EXPECT_NEAR(plug.h_x, exact.h_x, 0.01);
    EXPECT_NEAR(plug.h_y, exact.h_y, 0.01);
    EXPECT_NEAR(plug.h_xy, exact.h_xy, 0.01);
  }
}

TEST(Stationary, FixedPoint) {
  std::mt19937_64 rng(107);
  const auto spec = random_spec(rng, 3, 2);
  const auto pi = stationary(spec);
  double total = 0.0;
  for (double p : pi) total += p;
  EXPECT_NEAR(total, 1.0, 1e-12);
  const int n = spec.states();
  for (int b = 0; b < n; ++b) {
    double next = 0.0;
    for (int a = 0; a < n; ++a) next += pi[a] * spec.transition[a * n + b];
    EXPECT_NEAR(next, pi[b], 1e-11);
  }
  for (double p : stationary(copy_spec())) EXPECT_NEAR(p, 0.25, 1e-12);
}

TEST(Stationary, RejectsChainsWithoutUniqueLimit) {
  // Identity: every state is its own closed class.
  EXPECT_THROW(stationary(from_rows(2, 1, {1, 0, 0, 1})), ConvergenceError);
  // Deterministic flip: period 2.
  EXPECT_THROW(stationary(from_rows(2, 1, {0, 1, 1, 0})), ConvergenceError);
  // Transient state feeding one aperiodic class is fine.
  EXPECT_NO_THROW(stationary(from_rows(2, 1, {0.5, 0.5, 0, 1})));
  EXPECT_THROW(stationary(from_rows(2, 1, {0.5, 0.4, 0, 1})), Error);
  EXPECT_THROW(stationary(from_rows(2, 1, {1.5, -0.5, 0, 1})), Error);
}

TEST(SamplePaths, DeterministicAndFollowsSupport) {
  const auto a = sample_paths(copy_spec(), 5000, 3);
  const auto b = sample_paths(copy_spec(), 5000, 3);
  EXPECT_EQ(a.xs, b.xs);
  EXPECT_EQ(a.ys, b.ys);
  for (std::size_t t = 1; t < a.xs.size(); ++t) EXPECT_EQ(a.ys[t], a.xs[t - 1]);
  const auto c = sample_paths(instantaneous_spec(), 5000, 3);
  EXPECT_EQ(c.xs, c.ys);
}

TEST(PathTracks, ChunksAndRegisters) {
  const auto path = sample_paths(independent_spec(), 1000, 5);
  const auto chunks = path_tracks(path, GridConfig{});
  ASSERT_EQ(chunks.size(), 2u);
  EXPECT_EQ(chunks[0].first.size(), 512u);
  EXPECT_EQ(chunks[1].second.size(), 488u);
  for (std::size_t t = 0; t < 512; ++t) {
    EXPECT_EQ(chunks[0].first[t].pitch, 48 + path.xs[t]);
    EXPECT_EQ(chunks[0].second[t].pitch, 72 + path.ys[t]);
    EXPECT_EQ(chunks[0].first[t].beat, static_cast<int>(t));
  }
  EXPECT_EQ(chunks[1].first[0].pitch, 48 + path.xs[512]);
  EXPECT_THROW(path_tracks(path, GridConfig{.max_beat = 100}), Error);
}

TEST(SpecText, RoundTripAndErrors) {
  std::mt19937_64 rng(109);
  const auto spec = random_spec(rng, 2, 2);
  std::stringstream ss;
  write_spec(ss, spec);
  const auto back = read_spec(ss);
  EXPECT_EQ(back.nx, 2);
  for (std::size_t i = 0; i < spec.transition.size(); ++i) EXPECT_EQ(back.transition[i], spec.transition[i]);
  EXPECT_EQ(back.initial, spec.initial);

  std::istringstream uniform_init("1 2  # one x symbol\n0.5 0.5\n0.5 0.5\n");
  EXPECT_EQ(read_spec(uniform_init).initial, (std::vector<double>{0.5, 0.5}));
  std::istringstream short_table("2 2\n1 0 0 0\n");
  EXPECT_THROW(read_spec(short_table), FormatError);
  std::istringstream junk("2 x\n");
  EXPECT_THROW(read_spec(junk), FormatError);
  std::istringstream bad_row("1 2\n0.9 0.5\n0.5 0.5\n");
  EXPECT_THROW(read_spec(bad_row), FormatError);
}
