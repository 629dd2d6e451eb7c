// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "slkner/crf.hpp"

using namespace slkner;

namespace {

TagLattice to_lattice(const oracle::Lattice& L) {
  return TagLattice(L.n, L.Y, L.O, L.T, L.boundary ? CrfBoundary::StartStop : CrfBoundary::Zero);
}

// Random lattice; `integer` draws small integers so exact ties are common.
oracle::Lattice random_lattice(std::mt19937_64& rng, std::size_t n, std::size_t Y,
                               bool integer = false, bool boundary = true) {
  oracle::Lattice L;
  L.n = n;
  L.Y = Y;
  L.boundary = boundary;
  std::uniform_real_distribution<double> d(-2, 2);
  std::uniform_int_distribution<int> di(-1, 1);
  auto draw = [&] { return integer ? double(di(rng)) : d(rng); };
  L.O.resize(n * Y);
  for (auto& v : L.O) v = draw();
  L.T = initial_transitions(Y);
  const auto fixed = fixed_transitions(Y);
  for (std::size_t i = 0; i < L.T.size(); ++i)
    if (!fixed[i]) L.T[i] = draw();
  return L;
}

std::vector<std::size_t> widen(const std::vector<TagId>& y) { return {y.begin(), y.end()}; }

std::vector<TagId> random_tags(std::mt19937_64& rng, std::size_t n, std::size_t Y) {
  std::vector<TagId> y(n);
  for (auto& t : y) t = static_cast<TagId>(rng() % Y);
  return y;
}

}  // namespace

TEST(Crf, BoundaryNames) {
  EXPECT_EQ(parse_crf_boundary("start_stop"), CrfBoundary::StartStop);
  EXPECT_EQ(parse_crf_boundary(to_string(CrfBoundary::Zero)), CrfBoundary::Zero);
  EXPECT_THROW(parse_crf_boundary("none"), ConfigError);
}

TEST(Crf, TransitionLayout) {
  const auto T = initial_transitions(3);
  const auto f = fixed_transitions(3);
  ASSERT_EQ(T.size(), 25u);
  for (std::size_t j = 0; j < 5; ++j) {
    EXPECT_EQ(T[j * 5 + 3], kForbidden);  // into START
    EXPECT_EQ(T[4 * 5 + j], kForbidden);  // out of STOP
    EXPECT_TRUE(f[j * 5 + 3]);
    EXPECT_TRUE(f[4 * 5 + j]);
  }
  EXPECT_EQ(T[3 * 5 + 0], 0.0);
  EXPECT_FALSE(f[3 * 5 + 0]);
  EXPECT_EQ(T[0 * 5 + 4], 0.0);
}

TEST(Crf, ClosedFormPartitions) {
  // one position, two tags, emissions 1 and 3
  auto T2 = initial_transitions(2);
  EXPECT_NEAR(log_partition(TagLattice(1, 2, {1, 3}, T2)), std::log(std::exp(1.0) + std::exp(3.0)),
              1e-12);
  EXPECT_NEAR(log_partition(TagLattice(1, 2, {1, 3}, T2)), 3.126928011042972, 1e-12);
  // all-zero scores over 3 tags and 2 positions: 9 equal paths
  EXPECT_NEAR(log_partition(TagLattice(2, 3, std::vector<double>(6, 0.0), initial_transitions(3))),
              std::log(9.0), 1e-12);
}

TEST(Crf, ScoreOfAllZeroLatticeIsZero) {
  TagLattice lat(4, 3, std::vector<double>(12, 0.0), initial_transitions(3));
  const std::vector<TagId> y = {0, 2, 1, 1};
  EXPECT_EQ(score_sequence(lat, y), 0.0);
}

TEST(Crf, SingletonLattice) {
  auto T = initial_transitions(2);
  T[2 * 4 + 1] = 0.5;  // START -> 1
  T[1 * 4 + 3] = 0.25;  // 1 -> STOP
  TagLattice lat(1, 2, {1.0, 2.0}, T);
  const std::vector<TagId> y = {1};
  EXPECT_DOUBLE_EQ(score_sequence(lat, y), 2.75);
  auto v = viterbi(lat);
  EXPECT_EQ(v.path, y);
  EXPECT_DOUBLE_EQ(v.score, 2.75);
}

TEST(Crf, ScoreMatchesOracle) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 6, Y = 1 + trial % 4;
    auto L = random_lattice(rng, n, Y, false, trial % 3 != 0);
    auto y = random_tags(rng, n, Y);
    EXPECT_NEAR(score_sequence(to_lattice(L), y), L.path_score(widen(y)), 1e-12);
  }
}

TEST(Crf, PartitionAndMarginalsMatchBruteForce) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 6, Y = 1 + trial % 4;
    auto L = random_lattice(rng, n, Y, false, trial % 3 != 0);
    auto lat = to_lattice(L);
    EXPECT_NEAR(log_partition(lat), oracle::brute_log_partition(L), 1e-9);
    const auto p = marginals(lat);
    const auto q = oracle::brute_marginals(L);
    for (std::size_t i = 0; i < p.size(); ++i) ASSERT_NEAR(p[i], q[i], 1e-9);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0;
      for (std::size_t k = 0; k < Y; ++k) s += p[i * Y + k];
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Crf, ViterbiMatchesBruteForceIncludingTies) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 400; ++trial) {
    const std::size_t n = 1 + trial % 6, Y = 1 + trial % 4;
    auto L = random_lattice(rng, n, Y, trial % 2 == 0, trial % 5 != 0);
    auto v = viterbi(to_lattice(L));
    auto [arg, best] = oracle::brute_argmax(L);
    ASSERT_EQ(widen(v.path), arg) << "trial " << trial;
    EXPECT_NEAR(v.score, best, 1e-12);
  }
}

TEST(Crf, ViterbiScoreIsPathScore) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    auto lat = to_lattice(random_lattice(rng, 1 + trial % 9, 1 + trial % 5));
    auto v = viterbi(lat);
    EXPECT_NEAR(v.score, score_sequence(lat, v.path), 1e-12);
    EXPECT_LE(v.score, log_partition(lat) + 1e-12);
  }
}

TEST(Crf, NllIsNonNegativeAndVanishesWhenOnePathDominates) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    auto lat = to_lattice(random_lattice(rng, 1 + trial % 6, 1 + trial % 4));
    auto y = random_tags(rng, lat.n, lat.tags);
    EXPECT_GE(nll(lat, y).nll, 0.0);
  }
  // gold emissions +50, everything else 0: other paths carry < e^-50 mass
  const std::size_t n = 5, Y = 3;
  const std::vector<TagId> y = {0, 2, 2, 1, 0};
  std::vector<double> O(n * Y, 0.0);
  for (std::size_t i = 0; i < n; ++i) O[i * Y + y[i]] = 50.0;
  EXPECT_LT(nll(TagLattice(n, Y, O, initial_transitions(Y)), y).nll, 1e-8);
}

TEST(Crf, UniformLatticeNll) {
  for (std::size_t n : {1u, 3u, 6u})
    for (std::size_t Y : {1u, 2u, 5u}) {
      TagLattice lat(n, Y, std::vector<double>(n * Y, 0.0), initial_transitions(Y));
      const std::vector<TagId> y(n, 0);
      EXPECT_NEAR(nll(lat, y).nll, double(n) * std::log(double(Y)), 1e-10);
    }
}

TEST(Crf, NllGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 1 + trial % 5, Y = 1 + trial % 4;
    const auto boundary = trial % 4 == 3 ? CrfBoundary::Zero : CrfBoundary::StartStop;
    auto L = random_lattice(rng, n, Y, false, boundary == CrfBoundary::StartStop);
    const auto y = random_tags(rng, n, Y);
    ParamStore<double> ps;
    ps.add("O", Tensor<double>({n, Y}, L.O));
    auto& T = ps.add("T", Tensor<double>({Y + 2, Y + 2}, L.T));
    T.fixed = fixed_transitions(Y);
    auto lattice = [&] { return make_lattice(ps["O"].value, ps["T"].value, boundary); };
    auto loss = [&] { return nll(lattice(), y).nll; };
    auto grad = [&](Gradients<double>& g) {
      auto r = nll(lattice(), y);
      g[0] = Tensor<double>({n, Y}, r.dO);
      g[1] = Tensor<double>({Y + 2, Y + 2}, r.dT);
    };
    EXPECT_LT(grad_check(ps, loss, grad).max_rel_error, 1e-6) << "trial " << trial;
    auto r = nll(lattice(), y);
    const auto f = fixed_transitions(Y);
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (f[i]) {
        EXPECT_EQ(r.dT[i], 0.0);
      }
    }
  }
}

TEST(Crf, EmissionGradientRowsSumToZero) {
  std::mt19937_64 rng(7);
  auto lat = to_lattice(random_lattice(rng, 4, 3));
  auto r = nll(lat, random_tags(rng, 4, 3));
  for (std::size_t i = 0; i < 4; ++i)
    EXPECT_NEAR(r.dO[i * 3] + r.dO[i * 3 + 1] + r.dO[i * 3 + 2], 0.0, 1e-12);
}

TEST(Crf, ShiftingEmissionsPerPositionIsInvisible) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    auto L = random_lattice(rng, 1 + trial % 5, 2 + trial % 3);
    auto shifted = L;
    for (std::size_t i = 0; i < L.n; ++i) {
      const double c = std::uniform_real_distribution<double>(-10, 10)(rng);
      for (std::size_t k = 0; k < L.Y; ++k) shifted.O[i * L.Y + k] += c;
    }
    const auto y = random_tags(rng, L.n, L.Y);
    EXPECT_NEAR(nll(to_lattice(L), y).nll, nll(to_lattice(shifted), y).nll, 1e-9);
    EXPECT_EQ(viterbi(to_lattice(L)).path, viterbi(to_lattice(shifted)).path);
  }
}

TEST(Crf, DominantEmissionsDecideViterbi) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    auto L = random_lattice(rng, 1 + trial % 6, 2 + trial % 3);
    const auto y = random_tags(rng, L.n, L.Y);
    for (std::size_t i = 0; i < L.n; ++i) L.O[i * L.Y + y[i]] += 100.0;
    EXPECT_EQ(viterbi(to_lattice(L)).path, y);
  }
}

TEST(Crf, ForbiddenTransitionNeverDecoded) {
  // BIOES over one type: O B-X I-X E-X S-X
  TagScheme scheme(SchemeKind::BIOES, {"X"});
  const std::size_t Y = scheme.size();
  auto T = initial_transitions(Y);
  const auto mask = illegal_transition_mask(scheme);
  for (std::size_t i = 0; i < T.size(); ++i) T[i] += mask[i];
  // emissions favour I-X at position 0, which cannot follow START
  const auto I = *scheme.parse("I-X");
  std::vector<double> O(2 * Y, 0.0);
  O[I] = 5.0;
  O[Y + I] = 5.0;
  auto v = viterbi(TagLattice(2, Y, O, T));
  EXPECT_NE(v.path[0], I);
  EXPECT_TRUE(scheme.legal(std::nullopt, v.path[0]));
  EXPECT_TRUE(scheme.legal(v.path[0], v.path[1]));
  EXPECT_TRUE(scheme.legal(v.path[1], std::nullopt));
  EXPECT_EQ(mask[scheme.parse("B-X").value() * (Y + 2) + *scheme.parse("O")], kForbidden);
}

TEST(Crf, ZeroBoundaryIgnoresStartStopRow) {
  std::mt19937_64 rng(10);
  auto L = random_lattice(rng, 3, 3, false, false);
  auto moved = L;
  for (std::size_t k = 0; k < 3; ++k) {
    moved.T[3 * 5 + k] += 7.0;
    moved.T[k * 5 + 4] -= 3.0;
  }
  EXPECT_NEAR(log_partition(to_lattice(L)), log_partition(to_lattice(moved)), 1e-12);
  const std::vector<TagId> y = {1, 0, 2};
  auto r = nll(to_lattice(L), y);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(r.dT[3 * 5 + k], 0.0);
    EXPECT_EQ(r.dT[k * 5 + 4], 0.0);
  }
}

TEST(Crf, RejectsBadShapesAndTags) {
  EXPECT_THROW(TagLattice(2, 3, std::vector<double>(5, 0.0), initial_transitions(3)), ShapeError);
  EXPECT_THROW(TagLattice(2, 3, std::vector<double>(6, 0.0), initial_transitions(2)), ShapeError);
  TagLattice lat(2, 3, std::vector<double>(6, 0.0), initial_transitions(3));
  const std::vector<TagId> bad = {0, 3}, short_y = {0};
  EXPECT_THROW(nll(lat, bad), SchemeError);
  EXPECT_THROW(score_sequence(lat, short_y), SchemeError);
}

TEST(Emissions, AffinePerRowAndGradients) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + trial % 4, d = 1 + trial % 5, Y = 1 + trial % 3;
    ParamStore<double> ps;
    std::uniform_real_distribution<double> u(-1, 1);
    auto fill = [&](Shape s) {
      Tensor<double> t(std::move(s));
      for (auto& v : t.data()) v = u(rng);
      return t;
    };
    ps.add("R", fill({n, d}));
    ps.add("W_o", fill({Y, d}));
    ps.add("b_o", fill({Y}));
    const auto c = fill({n, Y});
    auto O = emissions(ps["R"].value, ps["W_o"].value, ps["b_o"].value);
    for (std::size_t i = 0; i < n; ++i) {
      Tensor<double> r({d}, std::vector<double>(ps["R"].value.row(i).begin(),
                                                ps["R"].value.row(i).end()));
      auto row = affine(r, ps["W_o"].value, ps["b_o"].value);
      for (std::size_t k = 0; k < Y; ++k) EXPECT_NEAR(O.at(i, k), row[k], 1e-14);
    }
    auto loss = [&] {
      auto o = emissions(ps["R"].value, ps["W_o"].value, ps["b_o"].value);
      double l = 0;
      for (std::size_t i = 0; i < o.size(); ++i) l += c[i] * o[i];
      return l;
    };
    auto grad = [&](Gradients<double>& g) {
      g[0] = emissions_backward(ps["R"].value, ps["W_o"].value, c, &g[1], &g[2]);
    };
    EXPECT_LT(grad_check(ps, loss, grad).max_rel_error, 1e-6);
  }
}
