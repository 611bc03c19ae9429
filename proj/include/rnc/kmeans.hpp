#pragma once

#include <cstdint>
#include <vector>

namespace rnc {

using Point = std::vector<double>;

double squared_distance(const Point& a, const Point& b);
/// Index of the nearest centroid; lowest index on ties.
int nearest(const Point& p, const std::vector<Point>& centroids);

struct KMeansResult {
  std::vector<Point> centroids;
  std::vector<int> assignment;
  /// Sum of squared distances after each assignment step.
  std::vector<double> objective;
  int iterations = 0;
  bool converged = false;
};

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or `max_iter` is reached. A cluster that loses all its points
/// keeps its previous centroid. Requires 1 <= k <= points.size().
KMeansResult kmeans(const std::vector<Point>& points, int k, std::uint64_t seed, int max_iter = 100);

}  // namespace rnc
