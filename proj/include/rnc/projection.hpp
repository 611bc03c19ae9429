#pragma once

#include <array>
#include <string>
#include <vector>

#include "rnc/cascade.hpp"

namespace rnc {

using Point2 = std::array<double, 2>;

struct Pca2 {
  Point mean;
  /// Two unit-length principal axes, largest variance first. Each axis is
  /// signed so its largest-magnitude component is positive.
  std::array<Point, 2> axes;
  std::vector<Point2> coords;
};

/// Top-2 principal components of the rows of `x`. Fewer than 3 rows yields
/// all-zero coordinates and a warning.
Pca2 pca_2d(const std::vector<Point>& x);

/// Mean silhouette coefficient of 2D points under `labels`.
double silhouette(const std::vector<Point2>& points, const std::vector<int>& labels);

struct ProjectedPoint {
  std::string id;
  std::string disease;
  int cluster = -1;
  double x = 0.0;
  double y = 0.0;
};

std::vector<ProjectedPoint> project_2d(const std::vector<ContextVector>& vectors);
/// `id disease cluster x y` rows with a header line.
std::string projection_tsv(const std::vector<ProjectedPoint>& points);

}  // namespace rnc
