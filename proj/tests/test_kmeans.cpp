#include "doctest.h"

#include <limits>
#include <set>

#include "fblab/errors.hpp"
#include "fblab/kmeans.hpp"
#include "fblab/rng.hpp"

using namespace fblab;

namespace {

// Plain Lloyd iterations from the given centres.
std::vector<int> lloyd(const std::vector<std::vector<double>>& pts, std::vector<std::vector<double>> centres) {
  std::vector<int> assign(pts.size(), -1);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < centres.size(); ++c) {
        double d = 0;
        for (std::size_t j = 0; j < pts[i].size(); ++j) d += (pts[i][j] - centres[c][j]) * (pts[i][j] - centres[c][j]);
        if (d < bd) bd = d, best = static_cast<int>(c);
      }
      if (assign[i] != best) assign[i] = best, changed = true;
    }
    for (std::size_t c = 0; c < centres.size(); ++c) {
      std::vector<double> sum(pts[0].size(), 0.0);
      int n = 0;
      for (std::size_t i = 0; i < pts.size(); ++i)
        if (assign[i] == static_cast<int>(c)) {
          ++n;
          for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += pts[i][j];
        }
      if (n > 0)
        for (std::size_t j = 0; j < sum.size(); ++j) centres[c][j] = sum[j] / n;
    }
    if (!changed) break;
  }
  return assign;
}

std::vector<std::vector<double>> blobs(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> pts;
  for (int i = 0; i < 60; ++i) pts.push_back({rng.normal(0.0, 0.3), rng.normal(0.0, 0.3)});
  for (int i = 0; i < 60; ++i) pts.push_back({rng.normal(5.0, 0.3), rng.normal(5.0, 0.3)});
  return pts;
}

}  // namespace

TEST_CASE("one cluster per point") {
  const std::vector<std::vector<double>> pts{{0, 0}, {1, 0}, {0, 3}, {7, 7}, {2, 5}};
  KMeansOptions o;
  o.k = 5;
  const auto r = minibatch_kmeans(pts, o);
  CHECK(r.inertia == 0.0);
  CHECK(std::set<int>(r.assignments.begin(), r.assignments.end()).size() == 5);
}

TEST_CASE("single cluster centre is the mean") {
  const std::vector<std::vector<double>> pts{{0, 0}, {2, 2}, {4, -1}};
  KMeansOptions o;
  o.k = 1;
  const auto r = minibatch_kmeans(pts, o);
  CHECK(r.centroids[0][0] == doctest::Approx(2.0));
  CHECK(r.centroids[0][1] == doctest::Approx(1.0 / 3.0));
  CHECK(r.inertia == doctest::Approx((4.0 + 1.0 / 9) + 25.0 / 9 + (4.0 + 16.0 / 9)).epsilon(1e-12));
}

TEST_CASE("two separated blobs match an exact Lloyd run") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto pts = blobs(seed);
    KMeansOptions o;
    o.k = 2;
    o.batch_size = 32;
    o.seed = seed;
    const auto r = minibatch_kmeans(pts, o);
    const auto oracle = lloyd(pts, {pts.front(), pts.back()});
    // Same partition up to relabelling.
    for (std::size_t i = 0; i < pts.size(); ++i)
      CHECK((r.assignments[i] == r.assignments[0]) == (oracle[i] == oracle[0]));
    for (std::size_t i = 0; i < pts.size(); ++i) CHECK((r.assignments[i] == r.assignments[0]) == (i < 60));
  }
}

TEST_CASE("duplicate points still fill every cluster") {
  const std::vector<std::vector<double>> pts(10, std::vector<double>{1.0, 1.0});
  KMeansOptions o;
  o.k = 4;
  const auto r = minibatch_kmeans(pts, o);
  CHECK(std::set<int>(r.assignments.begin(), r.assignments.end()).size() == 4);
  CHECK(r.inertia == 0.0);
}

TEST_CASE("k-means errors") {
  const std::vector<std::vector<double>> pts{{0, 0}, {1, 1}};
  KMeansOptions o;
  o.k = 3;
  CHECK_THROWS_AS(minibatch_kmeans(pts, o), ConfigError);
  o.k = 2;
  const std::vector<std::vector<double>> ragged{{0, 0}, {1}};
  CHECK_THROWS_AS(minibatch_kmeans(ragged, o), ShapeError);
}
