#include "fragility/kmeans.hpp"

#include <limits>

#include <fmt/format.h>

#include "fragility/errors.hpp"
#include "fragility/rng.hpp"

namespace fragility {

KMeansResult kmeans(const Eigen::MatrixXd& data, std::size_t k, std::uint64_t seed,
                    int max_iterations) {
  const auto n = static_cast<std::size_t>(data.rows());
  if (k == 0 || k > n) {
    throw InvalidInput(fmt::format("k-means needs 1 <= k <= n (k = {}, n = {})", k, n));
  }
  Rng rng(seed, 0x6B6D65616E73ULL);
  KMeansResult res;
  res.centroids.resize(static_cast<Eigen::Index>(k), data.cols());

  // k-means++ seeding
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t first = rng.below(n);
  res.centroids.row(0) = data.row(static_cast<Eigen::Index>(first));
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = (data.row(static_cast<Eigen::Index>(i)) -
                        res.centroids.row(static_cast<Eigen::Index>(c - 1)))
                           .squaredNorm();
      d2[i] = std::min(d2[i], d);
      total += d2[i];
    }
    std::size_t pick = n - 1;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      for (std::size_t i = 0; i < n; ++i) {
        target -= d2[i];
        if (target < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.below(n);
    }
    res.centroids.row(static_cast<Eigen::Index>(c)) = data.row(static_cast<Eigen::Index>(pick));
  }

  res.labels.assign(n, 0);
  std::vector<double> dist(n, 0.0);
  for (int it = 0; it < max_iterations; ++it) {
    bool changed = it == 0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const double d = (data.row(static_cast<Eigen::Index>(i)) -
                          res.centroids.row(static_cast<Eigen::Index>(c)))
                             .squaredNorm();
        if (d < best) {
          best = d;
          arg = c;
        }
      }
      if (arg != res.labels[i]) changed = true;
      res.labels[i] = arg;
      dist[i] = best;
    }
    res.iterations = it + 1;
    if (!changed) break;

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(res.centroids.rows(), data.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(static_cast<Eigen::Index>(res.labels[i])) += data.row(static_cast<Eigen::Index>(i));
      ++counts[res.labels[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        res.centroids.row(static_cast<Eigen::Index>(c)) =
            sums.row(static_cast<Eigen::Index>(c)) / static_cast<double>(counts[c]);
        continue;
      }
      std::size_t far = 0;
      for (std::size_t i = 1; i < n; ++i) {
        if (dist[i] > dist[far]) far = i;
      }
      res.centroids.row(static_cast<Eigen::Index>(c)) = data.row(static_cast<Eigen::Index>(far));
      dist[far] = 0.0;
    }
  }
  return res;
}

}  // namespace fragility
