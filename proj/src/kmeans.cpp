#include "rnc/kmeans.hpp"

#include <limits>
#include <random>
#include <string>

#include "rnc/errors.hpp"

namespace rnc {

double squared_distance(const Point& a, const Point& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

int nearest(const Point& p, const std::vector<Point>& centroids) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = squared_distance(p, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

namespace {

std::vector<Point> plus_plus_seeds(const std::vector<Point>& points, int k, std::mt19937_64& rng) {
  std::vector<Point> seeds;
  std::uniform_int_distribution<std::size_t> first(0, points.size() - 1);
  seeds.push_back(points[first(rng)]);
  std::vector<double> d2(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) d2[i] = squared_distance(points[i], seeds[0]);
  while (static_cast<int>(seeds.size()) < k) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t pick = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng), acc = 0.0;
      pick = points.size() - 1;
      for (std::size_t i = 0; i < points.size(); ++i) {
        acc += d2[i];
        if (r < acc && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = first(rng);
    }
    seeds.push_back(points[pick]);
    for (std::size_t i = 0; i < points.size(); ++i) {
      d2[i] = std::min(d2[i], squared_distance(points[i], seeds.back()));
    }
  }
  return seeds;
}

}  // namespace

KMeansResult kmeans(const std::vector<Point>& points, int k, std::uint64_t seed, int max_iter) {
  if (points.empty()) throw UsageError("kmeans: no points");
  if (k < 1 || static_cast<std::size_t>(k) > points.size()) {
    throw UsageError("kmeans: k=" + std::to_string(k) + " outside [1, " + std::to_string(points.size()) + "]");
  }
  const std::size_t dim = points.front().size();
  for (const auto& p : points) {
    if (p.size() != dim) throw ShapeError("kmeans: points have different dimensions");
  }
  std::mt19937_64 rng(seed);
  KMeansResult r;
  r.centroids = plus_plus_seeds(points, k, rng);
  r.assignment.assign(points.size(), -1);
  for (int it = 0; it < max_iter; ++it) {
    bool changed = false;
    double obj = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const int c = nearest(points[i], r.centroids);
      if (c != r.assignment[i]) changed = true;
      r.assignment[i] = c;
      obj += squared_distance(points[i], r.centroids[static_cast<std::size_t>(c)]);
    }
    r.objective.push_back(obj);
    r.iterations = it + 1;
    if (!changed) {
      r.converged = true;
      break;
    }
    std::vector<Point> sums(static_cast<std::size_t>(k), Point(dim, 0.0));
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto c = static_cast<std::size_t>(r.assignment[i]);
      ++counts[c];
      for (std::size_t d = 0; d < dim; ++d) sums[c][d] += points[i][d];
    }
    for (std::size_t c = 0; c < sums.size(); ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t d = 0; d < dim; ++d) r.centroids[c][d] = sums[c][d] / static_cast<double>(counts[c]);
    }
  }
  return r;
}

}  // namespace rnc
