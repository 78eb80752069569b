#include "fblab/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fblab/errors.hpp"
#include "fblab/rng.hpp"

namespace fblab {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

namespace {

// Row-major point storage.
struct Flat {
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<double> data;
  std::span<const double> row(std::size_t i) const { return {data.data() + i * d, d}; }
};

std::vector<double> kmeanspp(const Flat& x, int k, Rng& rng) {
  std::vector<double> centers;
  centers.reserve(static_cast<std::size_t>(k) * x.d);
  auto push = [&](std::size_t i) {
    const auto r = x.row(i);
    centers.insert(centers.end(), r.begin(), r.end());
  };
  push(rng.uniform_index(x.n));
  std::vector<double> d2(x.n);
  for (std::size_t i = 0; i < x.n; ++i) d2[i] = squared_distance(x.row(i), {centers.data(), x.d});
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t pick = 0;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      pick = x.n - 1;
      for (std::size_t i = 0; i < x.n; ++i) {
        u -= d2[i];
        if (u < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      // Every point coincides with a centre already; fall back to uniform.
      pick = rng.uniform_index(x.n);
    }
    push(pick);
    const std::span<const double> newest(centers.data() + static_cast<std::size_t>(c) * x.d, x.d);
    for (std::size_t i = 0; i < x.n; ++i) d2[i] = std::min(d2[i], squared_distance(x.row(i), newest));
  }
  return centers;
}

int nearest(std::span<const double> p, const std::vector<double>& centers, std::size_t k, std::size_t d) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < k; ++c) {
    const double dist = squared_distance(p, {centers.data() + c * d, d});
    if (dist < best_d) {
      best_d = dist;
      best = static_cast<int>(c);
    }
  }
  return best;
}

}  // namespace

KMeansResult minibatch_kmeans(std::span<const std::vector<double>> points, const KMeansOptions& opt) {
  if (opt.k < 1) throw ConfigError("k must be at least 1");
  if (points.size() < static_cast<std::size_t>(opt.k)) throw ConfigError("k exceeds the number of points");
  if (opt.batch_size < 1 || opt.max_epochs < 0) throw ConfigError("invalid k-means batch/epoch settings");

  Flat x;
  x.n = points.size();
  x.d = points.front().size();
  x.data.reserve(x.n * x.d);
  for (const auto& p : points) {
    if (p.size() != x.d) throw ShapeError("k-means points have inconsistent dimension");
    x.data.insert(x.data.end(), p.begin(), p.end());
  }
  const auto k = static_cast<std::size_t>(opt.k);

  Rng rng(derive_seed(opt.seed, "kmeans"));
  std::vector<double> centers = kmeanspp(x, opt.k, rng);
  std::vector<double> counts(k, 0.0);

  KMeansResult result;
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(opt.batch_size), x.n);
  const std::size_t batches_per_epoch = (x.n + batch - 1) / batch;
  std::vector<std::size_t> idx(batch);
  std::vector<int> lab(batch);
  for (int epoch = 0; epoch < opt.max_epochs; ++epoch) {
    const std::vector<double> before = centers;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      for (std::size_t i = 0; i < batch; ++i) {
        idx[i] = rng.uniform_index(x.n);
        lab[i] = nearest(x.row(idx[i]), centers, k, x.d);
      }
      for (std::size_t i = 0; i < batch; ++i) {
        const auto c = static_cast<std::size_t>(lab[i]);
        counts[c] += 1.0;
        const double eta = 1.0 / counts[c];
        const auto p = x.row(idx[i]);
        for (std::size_t j = 0; j < x.d; ++j) {
          double& cj = centers[c * x.d + j];
          cj += eta * (p[j] - cj);
        }
      }
    }
    result.epochs = epoch + 1;
    double max_move = 0.0;
    for (std::size_t c = 0; c < k; ++c)
      max_move = std::max(max_move, std::sqrt(squared_distance({centers.data() + c * x.d, x.d},
                                                                {before.data() + c * x.d, x.d})));
    if (max_move < opt.tolerance) break;
  }

  // Final full-batch assignment. Exactly tied centres split points evenly.
  result.assignments.assign(x.n, 0);
  std::vector<std::size_t> members(k, 0);
  std::vector<double> dist(x.n, 0.0);
  for (std::size_t i = 0; i < x.n; ++i) {
    const auto p = x.row(i);
    double best_d = std::numeric_limits<double>::infinity();
    int best = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const double dd = squared_distance(p, {centers.data() + c * x.d, x.d});
      if (dd < best_d || (dd == best_d && members[c] < members[static_cast<std::size_t>(best)])) {
        best_d = dd;
        best = static_cast<int>(c);
      }
    }
    result.assignments[i] = best;
    dist[i] = best_d;
    ++members[static_cast<std::size_t>(best)];
  }

  // Re-seed empty clusters from the farthest point of a multi-member cluster.
  for (std::size_t c = 0; c < k; ++c) {
    if (members[c] > 0) continue;
    std::size_t far = x.n;
    for (std::size_t i = 0; i < x.n; ++i) {
      if (members[static_cast<std::size_t>(result.assignments[i])] < 2) continue;
      if (far == x.n || dist[i] > dist[far]) far = i;
    }
    --members[static_cast<std::size_t>(result.assignments[far])];
    result.assignments[far] = static_cast<int>(c);
    dist[far] = 0.0;
    members[c] = 1;
    const auto p = x.row(far);
    std::copy(p.begin(), p.end(), centers.begin() + static_cast<std::ptrdiff_t>(c * x.d));
  }

  // Centroids are the exact means of the final partition.
  result.centroids.assign(k, std::vector<double>(x.d, 0.0));
  for (std::size_t i = 0; i < x.n; ++i) {
    auto& c = result.centroids[static_cast<std::size_t>(result.assignments[i])];
    const auto p = x.row(i);
    for (std::size_t j = 0; j < x.d; ++j) c[j] += p[j];
  }
  for (std::size_t c = 0; c < k; ++c)
    for (double& v : result.centroids[c]) v /= static_cast<double>(members[c]);
  result.inertia = 0.0;
  for (std::size_t i = 0; i < x.n; ++i)
    result.inertia += squared_distance(x.row(i), result.centroids[static_cast<std::size_t>(result.assignments[i])]);
  return result;
}

}  // namespace fblab
