#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace fblab {

struct KMeansOptions {
  int k = 8;
  int batch_size = 1000;
  int max_epochs = 100;
  double tolerance = 1e-6;  // stop when no centroid moves further in an epoch
  std::uint64_t seed = 0;
};

struct KMeansResult {
  std::vector<int> assignments;
  std::vector<std::vector<double>> centroids;  // exact means of the final partition
  double inertia = 0.0;
  int epochs = 0;
};

// Mini-batch k-means (per-centre learning rate 1/count) seeded with k-means++.
// The final assignment is a full pass; exactly tied centres share points
// evenly and empty clusters are re-seeded from the farthest point, so every
// cluster ends up non-empty.
KMeansResult minibatch_kmeans(std::span<const std::vector<double>> points, const KMeansOptions& options);

double squared_distance(std::span<const double> a, std::span<const double> b);

}  // namespace fblab
