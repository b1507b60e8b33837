#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "tokweight/rng.hpp"
#include "tokweight/weighting.hpp"

using namespace tokweight;

namespace {

ScoreVector scores_of(std::vector<double> s, std::uint64_t id = 0) {
  ScoreVector v;
  v.seq_id = id;
  v.scores = std::move(s);
  return v;
}

double sum(const WeightVector& w) { return std::accumulate(w.weights.begin(), w.weights.end(), 0.0); }

std::size_t nonzero(const WeightVector& w) {
  return static_cast<std::size_t>(std::count_if(w.weights.begin(), w.weights.end(), [](double x) { return x != 0.0; }));
}

}  // namespace

TEST_CASE("uniform weights") {
  const auto w = uniform_weights(3, 5);
  CHECK(w.seq_id == 3);
  CHECK(w.weights == std::vector<double>(5, 1.0));
  CHECK(w.tag.kind == PostprocessTag::Kind::kUniform);
}

TEST_CASE("sparse count") {
  CHECK(sparse_count(0.2, 10) == 2);
  CHECK(sparse_count(0.25, 10) == 3);  // round half away from zero
  CHECK(sparse_count(0.01, 10) == 1);
  CHECK(sparse_count(1.0, 7) == 7);
}

TEST_CASE("sparse keeps the top scores at weight N/m") {
  const auto w = sparsify_quantile(scores_of({0.1, 0.9, -0.3, 0.5, 0.2}), 0.4, 1);
  CHECK(w.weights == std::vector<double>{0.0, 2.5, 0.0, 2.5, 0.0});
  CHECK(w.tag.kind == PostprocessTag::Kind::kSparse);
  CHECK(w.tag.kappa == 0.4);
}

TEST_CASE("sparse rejects bad inputs") {
  CHECK_THROWS_AS(sparsify_quantile(scores_of({1.0}), 0.0, 0), std::invalid_argument);
  CHECK_THROWS_AS(sparsify_quantile(scores_of({1.0}), 1.5, 0), std::invalid_argument);
  CHECK_THROWS_AS(sparsify_quantile(scores_of({}), 0.5, 0), std::invalid_argument);
  CHECK_THROWS_AS(sparsify_quantile(scores_of({NAN, 1.0}), 0.5, 0), std::invalid_argument);
}

TEST_CASE("sparse ties are broken by a seeded per-sequence stream") {
  const std::vector<double> zeros(100, 0.0);
  const auto a = sparsify_quantile(scores_of(zeros, 7), 0.2, 11);
  const auto b = sparsify_quantile(scores_of(zeros, 7), 0.2, 11);
  const auto c = sparsify_quantile(scores_of(zeros, 8), 0.2, 11);
  const auto d = sparsify_quantile(scores_of(zeros, 7), 0.2, 12);
  CHECK(nonzero(a) == 20);
  CHECK(a.weights == b.weights);
  CHECK(a.weights != c.weights);
  CHECK(a.weights != d.weights);

  // Every tied position is equally likely to be kept.
  std::vector<int> hits(10, 0);
  for (std::uint64_t id = 0; id < 20000; ++id) {
    const auto w = sparsify_quantile(scores_of({5.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0}, id), 0.3, 3);
    CHECK(w.weights[0] > 0.0);
    CHECK(w.weights[9] == 0.0);
    for (std::size_t i = 0; i < 10; ++i) hits[i] += w.weights[i] > 0.0;
  }
  for (std::size_t i = 1; i < 9; ++i) CHECK(std::abs(hits[i] / 20000.0 - 0.25) < 0.015);
}

TEST_CASE("sparse property: sizes, sums, threshold and scale invariance") {
  Rng rng(5);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 1 + rng.below(300);
    std::vector<double> s(n);
    const bool ties = rng.below(2) == 0;
    for (auto& x : s) x = ties ? static_cast<double>(rng.below(4)) : rng.normal();
    const double kappa = 0.01 + 0.99 * rng.uniform();
    const std::uint64_t seed = rng.below(1000);
    const auto w = sparsify_quantile(scores_of(s, trial), kappa, seed);
    const std::size_t m = sparse_count(kappa, n);
    REQUIRE(nonzero(w) == m);
    CHECK(std::abs(sum(w) - static_cast<double>(n)) <= 1e-9 * static_cast<double>(n));
    std::vector<double> sorted = s;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    const double threshold = sorted[m - 1];
    for (std::size_t i = 0; i < n; ++i) {
      if (s[i] > threshold) CHECK(w.weights[i] > 0.0);
      if (s[i] < threshold) CHECK(w.weights[i] == 0.0);
      if (w.weights[i] != 0.0) CHECK(w.weights[i] == static_cast<double>(n) / static_cast<double>(m));
    }
    std::vector<double> scaled = s;
    const double c = 0.1 + 10.0 * rng.uniform();
    for (auto& x : scaled) x *= c;
    CHECK(sparsify_quantile(scores_of(scaled, trial), kappa, seed).weights == w.weights);
  }
}

TEST_CASE("kappa one keeps everything at weight one") {
  const auto w = sparsify_quantile(scores_of({3.0, -1.0, 0.0, 2.0}), 1.0, 0);
  CHECK(w.weights == std::vector<double>(4, 1.0));
}

TEST_CASE("dense normalization") {
  const auto w = normalize_to_length(scores_of({1.0, 3.0, 0.0, 4.0}, 2));
  CHECK(w.seq_id == 2);
  CHECK(w.weights == std::vector<double>{0.5, 1.5, 0.0, 2.0});
  CHECK(normalize_to_length(scores_of({0.0, 0.0, 0.0})).weights == std::vector<double>(3, 1.0));
  CHECK(normalize_to_length(scores_of({1e-15, 0.0})).weights == std::vector<double>(2, 1.0));
  CHECK_THROWS_AS(normalize_to_length(scores_of({1.0, -0.5})), std::invalid_argument);
  CHECK_THROWS_AS(normalize_to_length(scores_of({})), std::invalid_argument);
}

TEST_CASE("dense property: sum, scale invariance and interpolation") {
  Rng rng(6);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 1 + rng.below(512);
    std::vector<double> s(n);
    for (auto& x : s) x = rng.below(3) == 0 ? 0.0 : 5.0 * rng.uniform();
    const auto d = normalize_to_length(scores_of(s));
    CHECK(std::abs(sum(d) - static_cast<double>(n)) <= 1e-9 * static_cast<double>(n));
    std::vector<double> scaled = s;
    const double c = 0.01 + 100.0 * rng.uniform();
    for (auto& x : scaled) x *= c;
    const auto d2 = normalize_to_length(scores_of(scaled));
    for (std::size_t i = 0; i < n; ++i) CHECK(d2.weights[i] == doctest::Approx(d.weights[i]).epsilon(1e-12));

    const double lambda = rng.uniform();
    const auto w = interpolate_uniform(d, lambda);
    CHECK(w.tag.kind == PostprocessTag::Kind::kDense);
    CHECK(w.tag.lambda == lambda);
    CHECK(std::abs(sum(w) - static_cast<double>(n)) <= 1e-9 * static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(w.weights[i] >= lambda - 1e-12);
      CHECK(w.weights[i] == doctest::Approx(lambda + (1.0 - lambda) * d.weights[i]));
    }
    CHECK(interpolate_uniform(d, 1.0).weights == std::vector<double>(n, 1.0));
    CHECK(interpolate_uniform(d, 0.0).weights == d.weights);
  }
}

TEST_CASE("interpolation rejects bad inputs") {
  const auto d = normalize_to_length(scores_of({1.0, 1.0}));
  CHECK_THROWS_AS(interpolate_uniform(d, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(interpolate_uniform(d, 1.1), std::invalid_argument);
  WeightVector off{0, {1.0, 2.0}, {}};
  CHECK_THROWS_AS(interpolate_uniform(off, 0.5), std::invalid_argument);
}

TEST_CASE("weight dump format") {
  const TokenSequence seq{1, {4, 2}};
  const LogProbTrace lt{1, 64, {-0.5, -1.0}};
  const LogProbTrace st{1, 16, {-0.75, -1.0}};
  const auto s = signed_score(st, lt);
  const auto w = sparsify_quantile(abs_score(s), 0.5, 0);
  std::ostringstream out;
  write_weight_dump(out, seq, lt, st, s, w);
  CHECK(out.str() ==
        "pos\ttoken_id\tloss_long\tloss_short\tscore\tweight\n"
        "0\t4\t0.500000\t0.750000\t-0.250000\t2.000000\n"
        "1\t2\t1.000000\t1.000000\t0.000000\t0.000000\n");
}
