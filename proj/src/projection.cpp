#include "rnc/projection.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include <Eigen/Dense>
#include <spdlog/spdlog.h>

#include "rnc/errors.hpp"

namespace rnc {

Pca2 pca_2d(const std::vector<Point>& x) {
  Pca2 out;
  out.coords.assign(x.size(), Point2{0.0, 0.0});
  if (x.empty()) return out;
  const auto n = x.size(), d = x.front().size();
  for (const auto& row : x) {
    if (row.size() != d) throw ShapeError("pca_2d: rows have different lengths");
  }
  out.mean.assign(d, 0.0);
  out.axes = {Point(d, 0.0), Point(d, 0.0)};
  if (n < 3) {
    spdlog::warn("projection needs at least 3 vectors, got {}; emitting zeros", n);
    return out;
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = x[i][j];
  }
  Eigen::RowVectorXd mean = m.colwise().mean();
  m.rowwise() -= mean;
  Eigen::MatrixXd cov = (m.transpose() * m) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericError("pca_2d: eigen decomposition failed");
  for (std::size_t j = 0; j < d; ++j) out.mean[j] = mean(static_cast<Eigen::Index>(j));
  const auto cols = eig.eigenvectors().cols();
  for (int a = 0; a < 2 && a < cols; ++a) {
    Eigen::VectorXd v = eig.eigenvectors().col(cols - 1 - a);
    Eigen::Index big = 0;
    v.cwiseAbs().maxCoeff(&big);
    if (v(big) < 0) v = -v;
    for (std::size_t j = 0; j < d; ++j) out.axes[static_cast<std::size_t>(a)][j] = v(static_cast<Eigen::Index>(j));
    Eigen::VectorXd proj = m * v;
    for (std::size_t i = 0; i < n; ++i) out.coords[i][static_cast<std::size_t>(a)] = proj(static_cast<Eigen::Index>(i));
  }
  if (eig.eigenvalues().maxCoeff() <= 0.0) spdlog::warn("projection input has no variance");
  return out;
}

double silhouette(const std::vector<Point2>& points, const std::vector<int>& labels) {
  if (points.size() != labels.size()) throw ShapeError("silhouette: points and labels differ in length");
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
  if (groups.size() < 2) return 0.0;
  auto dist = [&](std::size_t a, std::size_t b) {
    return std::hypot(points[a][0] - points[b][0], points[a][1] - points[b][1]);
  };
  double total = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& own = groups[labels[i]];
    if (own.size() < 2) continue;
    double a = 0.0;
    for (auto j : own) a += j == i ? 0.0 : dist(i, j);
    a /= static_cast<double>(own.size() - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [label, members] : groups) {
      if (label == labels[i]) continue;
      double s = 0.0;
      for (auto j : members) s += dist(i, j);
      b = std::min(b, s / static_cast<double>(members.size()));
    }
    const double m = std::max(a, b);
    total += m > 0 ? (b - a) / m : 0.0;
  }
  return total / static_cast<double>(points.size());
}

std::vector<ProjectedPoint> project_2d(const std::vector<ContextVector>& vectors) {
  std::vector<Point> rows;
  for (const auto& v : vectors) rows.push_back(v.h);
  auto pca = pca_2d(rows);
  std::vector<ProjectedPoint> out;
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    out.push_back({vectors[i].id, vectors[i].disease, vectors[i].cluster, pca.coords[i][0], pca.coords[i][1]});
  }
  return out;
}

std::string projection_tsv(const std::vector<ProjectedPoint>& points) {
  std::ostringstream os;
  os << "id\tdisease\tcluster\tx\ty\n";
  char buf[64];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%.9g\t%.9g", p.x, p.y);
    os << p.id << '\t' << p.disease << '\t' << p.cluster << '\t' << buf << '\n';
  }
  return os.str();
}

}  // namespace rnc
