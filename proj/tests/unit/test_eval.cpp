#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "doctest.h"
#include "rnc/bleu.hpp"
#include "rnc/errors.hpp"
#include "rnc/projection.hpp"

using namespace rnc;

TEST_CASE("bleu: identical sequences score 1 at every order") {
  Tokens t{"calcified", "granuloma", "right", "upper", "lobe"};
  for (int n = 1; n <= 4; ++n) CHECK(bleu_n(t, t, n) == 1.0);
}

TEST_CASE("bleu: clipped unigram precision 2/7") {
  Tokens cand(7, "the");
  Tokens ref{"the", "cat", "is", "on", "the", "mat"};
  CHECK(modified_precision(cand, ref, 1) == 2.0 / 7.0);
  CHECK(bleu_n(cand, ref, 1) == 2.0 / 7.0);
}

TEST_CASE("bleu: half match") {
  CHECK(bleu_n({"a", "b"}, {"a", "c"}, 1) == 0.5);
  CHECK(bleu_n({"a", "b"}, {"a", "c"}, 2) == 0.0);
}

TEST_CASE("bleu: brevity penalty and short candidates") {
  Tokens ref{"a", "b", "c", "d"};
  CHECK(bleu_n({"a", "b"}, ref, 1) == doctest::Approx(std::exp(1.0 - 4.0 / 2.0)));
  CHECK(bleu_n({"a"}, ref, 2) == 0.0);
  CHECK(bleu_n({}, ref, 1) == 0.0);
}

TEST_CASE("bleu: scores stay in [0,1] and foreign tokens never add matches") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> tok(0, 5), len(1, 7);
  for (int trial = 0; trial < 500; ++trial) {
    Tokens c, r;
    for (int i = len(rng); i > 0; --i) c.push_back(std::string(1, static_cast<char>('a' + tok(rng))));
    for (int i = len(rng); i > 0; --i) r.push_back(std::string(1, static_cast<char>('a' + tok(rng))));
    for (int n = 1; n <= 4; ++n) {
      const double s = bleu_n(c, r, n);
      CHECK(s >= 0.0);
      CHECK(s <= 1.0);
      auto extended = c;
      extended.insert(extended.begin() + static_cast<std::ptrdiff_t>(trial % (c.size() + 1)), "zz");
      CHECK(clipped_ngrams(extended, r, n).matched <= clipped_ngrams(c, r, n).matched);
    }
  }
}

TEST_CASE("bleu corpus: length filtering and averaging") {
  std::vector<Prediction> preds;
  preds.push_back({"a", Split::test, "x", {"x", "y", "z"}, {"x", "y", "z"}});
  preds.push_back({"b", Split::test, "x", {"p"}, {"q"}});
  preds.push_back({"c", Split::train, "x", {"p"}, {"p"}});
  auto r = bleu_corpus(preds, Split::test);
  CHECK(r.count == std::array<std::size_t, 4>{2, 1, 1, 0});
  CHECK(r.score[0] == 50.0);
  CHECK(r.score[1] == 100.0);
  CHECK(r.score[2] == 100.0);
  CHECK(r.score[3] == 0.0);
  CHECK_THROWS_AS(bleu_corpus(preds, Split::val), DataError);

  std::vector<Prediction> empty{{"e", Split::val, "x", {}, {"a", "b"}}};
  auto z = bleu_corpus(empty, Split::val);
  for (double s : z.score) CHECK(s == 0.0);

  auto no_seed = bleu_corpus(preds, Split::test, {false});
  CHECK(no_seed.score[0] == 50.0 * (2.0 / 2.0) * std::exp(1.0 - 3.0 / 2.0));
  auto table = bleu_table({r});
  CHECK(table.find("test") != std::string::npos);
  CHECK(table.find("BLEU-4") != std::string::npos);
}

TEST_CASE("pca: 2D input is rotated, distances preserved") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0, 1);
  std::vector<Point> x;
  for (int i = 0; i < 40; ++i) x.push_back({3 * g(rng), g(rng) + 0.5 * x.size()});
  auto p = pca_2d(x);
  REQUIRE(p.coords.size() == x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double d0 = std::hypot(x[i][0] - x[j][0], x[i][1] - x[j][1]);
      const double d1 = std::hypot(p.coords[i][0] - p.coords[j][0], p.coords[i][1] - p.coords[j][1]);
      CHECK(d1 == doctest::Approx(d0).epsilon(1e-9));
    }
  }
}

TEST_CASE("pca reconstruction beats every other rank-2 projection") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g(0, 1);
  const int n = 60, d = 5;
  std::vector<Point> x(n, Point(d));
  for (auto& row : x) {
    const double a = g(rng), b = g(rng);
    for (int k = 0; k < d; ++k) row[static_cast<std::size_t>(k)] = a * (k + 1) + b * (d - k) * 0.5 + 0.2 * g(rng);
  }
  auto p = pca_2d(x);
  auto recon_error = [&](const std::array<Point, 2>& axes) {
    double err = 0.0;
    for (const auto& row : x) {
      Point c(d);
      for (int k = 0; k < d; ++k) c[static_cast<std::size_t>(k)] = row[static_cast<std::size_t>(k)] - p.mean[static_cast<std::size_t>(k)];
      Point rec(d, 0.0);
      for (const auto& ax : axes) {
        double dot = 0.0;
        for (int k = 0; k < d; ++k) dot += c[static_cast<std::size_t>(k)] * ax[static_cast<std::size_t>(k)];
        for (int k = 0; k < d; ++k) rec[static_cast<std::size_t>(k)] += dot * ax[static_cast<std::size_t>(k)];
      }
      for (int k = 0; k < d; ++k) err += std::pow(c[static_cast<std::size_t>(k)] - rec[static_cast<std::size_t>(k)], 2);
    }
    return err;
  };
  const double best = recon_error(p.axes);

  // SVD oracle.
  Eigen::MatrixXd m(n, d);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < d; ++k) m(i, k) = x[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] - p.mean[static_cast<std::size_t>(k)];
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  double tail = 0.0;
  for (int k = 2; k < s.size(); ++k) tail += s(k) * s(k);
  CHECK(best == doctest::Approx(tail).epsilon(1e-9));

  for (int trial = 0; trial < 200; ++trial) {
    Eigen::MatrixXd r = Eigen::MatrixXd::NullaryExpr(d, 2, [&]() { return g(rng); });
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(r);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, 2);
    std::array<Point, 2> axes{Point(d), Point(d)};
    for (int a = 0; a < 2; ++a) {
      for (int k = 0; k < d; ++k) axes[static_cast<std::size_t>(a)][static_cast<std::size_t>(k)] = q(k, a);
    }
    CHECK(best <= recon_error(axes) + 1e-9);
  }
}

TEST_CASE("projection: separated modes, row count, degenerate input") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0, 0.3);
  std::vector<ContextVector> v;
  std::vector<int> labels;
  for (int i = 0; i < 50; ++i) {
    ContextVector c;
    c.id = std::to_string(i);
    c.disease = "d";
    c.cluster = i % 2;
    c.h = Point(8);
    for (std::size_t k = 0; k < 8; ++k) c.h[k] = g(rng) + (i % 2 ? 2.0 : -2.0) * (k < 4 ? 1.0 : 0.0);
    v.push_back(c);
    labels.push_back(i % 2);
  }
  auto pts = project_2d(v);
  CHECK(pts.size() == v.size());
  std::vector<Point2> xy;
  for (const auto& p : pts) xy.push_back({p.x, p.y});
  CHECK(silhouette(xy, labels) > 0.5);
  auto tsv = projection_tsv(pts);
  CHECK(std::count(tsv.begin(), tsv.end(), '\n') == 51);

  auto tiny = pca_2d({{1.0, 2.0}, {3.0, 4.0}});
  for (const auto& c : tiny.coords) CHECK((c[0] == 0.0 && c[1] == 0.0));
}
