#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace fragility {

struct KMeansResult {
  Eigen::MatrixXd centroids;        // k x d
  std::vector<std::size_t> labels;  // one per row of the data
  int iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding. Rows of `data` are samples.
/// Deterministic for a given seed. Empty clusters are re-seeded with the
/// point farthest from its centroid.
KMeansResult kmeans(const Eigen::MatrixXd& data, std::size_t k, std::uint64_t seed,
                    int max_iterations = 100);

}  // namespace fragility
