#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "contextseg/raster.hpp"

using namespace cseg;

namespace {

Stroke mk(std::vector<Point2D> pts, int id = 0) { return Stroke{std::move(pts), id}; }

std::vector<Stroke> random_scene(std::mt19937_64& rng, int res, int strokes) {
  std::uniform_real_distribution<double> c(0.0, res - 1.0);
  std::uniform_int_distribution<int> n(1, 8);
  std::vector<Stroke> out;
  for (int i = 0; i < strokes; ++i) {
    Stroke s;
    s.id = i;
    const int m = n(rng);
    for (int k = 0; k < m; ++k) s.points.push_back({c(rng), c(rng)});
    out.push_back(s);
  }
  return out;
}

// Distance by dense sampling along each segment.
double sampled_distance(const Point2D& p, const Stroke& s) {
  double best = std::hypot(p.x - s.points[0].x, p.y - s.points[0].y);
  for (std::size_t i = 0; i + 1 < s.points.size(); ++i) {
    const auto& a = s.points[i];
    const auto& b = s.points[i + 1];
    for (int k = 0; k <= 1000; ++k) {
      const double t = k / 1000.0;
      best = std::min(best, std::hypot(p.x - (a.x + t * (b.x - a.x)), p.y - (a.y + t * (b.y - a.y))));
    }
  }
  return best;
}

// Closed-form point-segment distance written independently of the library.
double naive_field(const Point2D& p, const std::vector<Stroke>& strokes, double k) {
  double best = 1e300;
  for (const auto& s : strokes) {
    if (s.points.size() == 1) best = std::min(best, std::hypot(p.x - s.points[0].x, p.y - s.points[0].y));
    for (std::size_t i = 0; i + 1 < s.points.size(); ++i) {
      const double ax = s.points[i].x, ay = s.points[i].y;
      const double bx = s.points[i + 1].x, by = s.points[i + 1].y;
      const double vx = bx - ax, vy = by - ay;
      const double len2 = vx * vx + vy * vy;
      double t = len2 > 0 ? ((p.x - ax) * vx + (p.y - ay) * vy) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      best = std::min(best, std::hypot(p.x - (ax + t * vx), p.y - (ay + t * vy)));
    }
  }
  return 1.0 / (1.0 + k * std::exp(best));
}

std::set<std::pair<int, int>> on_pixels(const ImageGrid& g) {
  std::set<std::pair<int, int>> out;
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x)
      if (g.at(x, y) != 0.0) out.insert({x, y});
  return out;
}

}  // namespace

TEST(Rasterize, HorizontalSegment) {
  const auto g = rasterize(mk({{10, 20}, {50, 20}}), 64);
  std::set<std::pair<int, int>> want;
  for (int x = 10; x <= 50; ++x) want.insert({x, 20});
  EXPECT_EQ(on_pixels(g), want);
}

TEST(Rasterize, SinglePoint) {
  const auto g = rasterize(mk({{7.2, 3.9}}), 16);
  EXPECT_EQ(on_pixels(g), (std::set<std::pair<int, int>>{{7, 4}}));
}

TEST(Rasterize, DiagonalBresenham) {
  const auto g = rasterize(mk({{0, 0}, {5, 5}}), 8);
  std::set<std::pair<int, int>> want;
  for (int i = 0; i <= 5; ++i) want.insert({i, i});
  EXPECT_EQ(on_pixels(g), want);
}

TEST(Rasterize, BinaryAndEightConnected) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 50; ++t) {
    const auto scene = random_scene(rng, 64, 1);
    const auto g = rasterize(scene[0], 64);
    for (double v : g.values) EXPECT_TRUE(v == 0.0 || v == 1.0);
    // each segment's pixels form an 8-connected chain touching both endpoints
    const auto& pts = scene[0].points;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
      const auto seg = rasterize(mk({pts[i], pts[i + 1]}), 64);
      auto px = on_pixels(seg);
      std::set<std::pair<int, int>> seen;
      std::vector<std::pair<int, int>> stack{*px.begin()};
      while (!stack.empty()) {
        auto [x, y] = stack.back();
        stack.pop_back();
        if (!px.count({x, y}) || !seen.insert({x, y}).second) continue;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) stack.push_back({x + dx, y + dy});
      }
      EXPECT_EQ(seen.size(), px.size());
      EXPECT_TRUE(px.count({int(std::lround(pts[i].x)), int(std::lround(pts[i].y))}));
    }
  }
}

TEST(Rasterize, ReversalInvariant) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 100; ++t) {
    auto s = random_scene(rng, 64, 1)[0];
    auto r = s;
    std::reverse(r.points.begin(), r.points.end());
    EXPECT_EQ(rasterize(s, 64), rasterize(r, 64));
  }
}

TEST(Rasterize, OutOfBoundsNamesStroke) {
  try {
    rasterize(mk({{1, 1}, {70, 3}}, 4), 64);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("stroke 4"), std::string::npos);
  }
  EXPECT_THROW(rasterize(mk({{-0.5, 1}}), 64), DataError);
}

TEST(Rasterize, ThickStrokeCoversThin) {
  const auto thin = rasterize(mk({{10, 10}, {40, 30}}), 64);
  const auto thick = rasterize(mk({{10, 10}, {40, 30}}), 64, 3);
  EXPECT_GT(thick.count_nonzero(), thin.count_nonzero());
  for (std::size_t i = 0; i < thin.values.size(); ++i)
    if (thin.values[i] != 0.0) {
      EXPECT_EQ(thick.values[i], 1.0);
    }
}

TEST(CoordChannels, EndpointsAndMidpoint) {
  auto [xs, ys] = coord_channels(64);
  EXPECT_EQ(xs.at(0, 10), -1.0);
  EXPECT_EQ(xs.at(63, 10), 1.0);
  EXPECT_EQ(ys.at(5, 0), -1.0);
  EXPECT_EQ(ys.at(5, 63), 1.0);
  auto [x3, y3] = coord_channels(3);
  EXPECT_EQ(x3.at(1, 0), 0.0);
  EXPECT_EQ(y3.at(2, 1), 0.0);
}

TEST(CoordChannels, ConstantAndAntisymmetric) {
  for (int r : {2, 3, 17, 64}) {
    auto [xs, ys] = coord_channels(r);
    for (int y = 0; y < r; ++y)
      for (int x = 0; x < r; ++x) {
        EXPECT_EQ(xs.at(x, y), xs.at(x, 0));
        EXPECT_EQ(ys.at(x, y), ys.at(0, y));
        EXPECT_EQ(xs.at(x, y), -xs.at(r - 1 - x, y));
        EXPECT_EQ(ys.at(x, y), -ys.at(x, r - 1 - y));
        if (x + 1 < r) {
          EXPECT_LT(xs.at(x, y), xs.at(x + 1, y));
        }
      }
  }
  EXPECT_THROW(coord_channels(1), ConfigError);
}

TEST(PolylineDistance, Basics) {
  const auto s = mk({{0, 0}, {2, 0}, {2, 5}});
  EXPECT_EQ(polyline_distance({2, 0}, s), 0.0);
  EXPECT_DOUBLE_EQ(polyline_distance({1, 1}, mk({{0, 0}, {2, 0}})), 1.0);
  EXPECT_DOUBLE_EQ(polyline_distance({3, 4}, mk({{0, 0}})), 5.0);
}

TEST(PolylineDistance, MatchesSampling) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> c(-10.0, 74.0);
  for (int t = 0; t < 200; ++t) {
    const auto s = random_scene(rng, 64, 1)[0];
    const Point2D p{c(rng), c(rng)};
    const double exact = polyline_distance(p, s);
    EXPECT_GE(exact, 0.0);
    EXPECT_LE(exact, sampled_distance(p, s) + 1e-12);
    EXPECT_NEAR(exact, sampled_distance(p, s), 1e-3);
  }
}

TEST(DistanceField, AnalyticAnchors) {
  const double k = 0.001;
  EXPECT_DOUBLE_EQ(field_value(0.0, k), 1.0 / 1.001);
  EXPECT_NEAR(field_value(std::log(1.0 / k), k), 0.5, 1e-12);
  EXPECT_NEAR(std::log(1.0 / k), 6.9078, 1e-4);
  EXPECT_EQ(field_value(1e6, k), 0.0);
  const auto f = distance_field(mk({{10, 32}, {50, 32}}), 64, k);
  EXPECT_DOUBLE_EQ(f.grid.at(30, 32), 1.0 / 1.001);
  // 7 rows away is the nearest pixel to the half-value radius
  EXPECT_NEAR(f.grid.at(30, 39), 0.5, field_value(6.4078, k) - 0.5);
}

TEST(DistanceField, MatchesBruteForce) {
  std::mt19937_64 rng(77);
  for (int scene = 0; scene < 20; ++scene) {
    const auto strokes = random_scene(rng, 64, 3);
    const auto f = distance_field(strokes, 64);
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        const double want = naive_field({double(x), double(y)}, strokes, kDefaultFieldK);
        ASSERT_NEAR(f.grid.at(x, y), want, 1e-9) << "scene " << scene << " at " << x << "," << y;
      }
  }
}

TEST(DistanceField, RangeAndMonotone) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 5; ++t) {
    const auto strokes = random_scene(rng, 48, 2);
    const double k = 0.001;
    const auto f = distance_field(strokes, 48, k);
    std::vector<std::pair<double, double>> dv;
    for (int y = 0; y < 48; ++y)
      for (int x = 0; x < 48; ++x) {
        double d = 1e300;
        for (const auto& s : strokes) d = std::min(d, polyline_distance({double(x), double(y)}, s));
        const double v = f.grid.at(x, y);
        EXPECT_GT(v, 0.0);
        EXPECT_LE(v, 1.0 / (1.0 + k));
        EXPECT_EQ(v == 1.0 / (1.0 + k), d == 0.0);
        dv.emplace_back(d, v);
      }
    std::sort(dv.begin(), dv.end());
    for (std::size_t i = 1; i < dv.size(); ++i)
      if (dv[i].first > dv[i - 1].first) {
        EXPECT_LE(dv[i].second, dv[i - 1].second);
        if (dv[i].first - dv[i - 1].first > 1e-6) {
          EXPECT_LT(dv[i].second, dv[i - 1].second);
        }
      }
  }
}

TEST(DistanceField, BandWidensAsKShrinks) {
  for (double d : {0.5, 1.0, 3.0, 10.0, 40.0}) EXPECT_GT(field_value(d, 0.0001), field_value(d, 0.01));
}

TEST(DistanceField, Errors) {
  EXPECT_THROW(distance_field(mk({{1, 1}}), 16, 0.0), ConfigError);
  EXPECT_THROW(distance_field(std::span<const Stroke>{}, 16), DataError);
}

TEST(ComposeGroup, UnionRules) {
  Sketch sk;
  sk.resolution = 64;
  sk.strokes = {mk({{2, 2}, {20, 2}}, 0), mk({{2, 40}, {30, 50}}, 1), mk({{40, 10}, {40, 60}}, 2)};
  const std::vector<int> one{1}, all{0, 1, 2}, disjoint{0, 2}, none{};
  EXPECT_EQ(compose_group_image(sk, one, 64), rasterize(sk.strokes[1], 64));
  EXPECT_EQ(compose_group_image(sk, all, 64), rasterize(sk));
  EXPECT_EQ(compose_group_image(sk, disjoint, 64).count_nonzero(),
            rasterize(sk.strokes[0], 64).count_nonzero() + rasterize(sk.strokes[2], 64).count_nonzero());
  EXPECT_EQ(compose_group_image(sk, none, 64).count_nonzero(), 0u);
  const std::vector<int> bad{3};
  EXPECT_THROW(compose_group_image(sk, bad, 64), DataError);
}
