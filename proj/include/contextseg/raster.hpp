#pragma once

// Stroke rasterization, CoordConv channels and the narrow-band stroke
// distance field 1 / (1 + k * exp(dist)).
//
// Pixel (x, y) has its center at integer coordinates (x, y); rasterization and
// field evaluation share this convention.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "contextseg/error.hpp"
#include "contextseg/sketch.hpp"

namespace cseg {

inline constexpr double kDefaultFieldK = 0.001;

struct ImageGrid {
  int width = 0;
  int height = 0;
  std::vector<double> values;  // row-major

  ImageGrid() = default;
  ImageGrid(int w, int h, double fill = 0.0)
      : width(w), height(h), values(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

  double& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }

  std::size_t count_nonzero() const {
    return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), [](double v) { return v != 0.0; }));
  }

  friend bool operator==(const ImageGrid&, const ImageGrid&) = default;
};

struct MultiChannelImage {
  std::vector<ImageGrid> channels;

  std::size_t channel_count() const noexcept { return channels.size(); }
};

struct DistanceFieldMap {
  ImageGrid grid;
  double k = kDefaultFieldK;
};

// ---------------------------------------------------------------------------
// Rasterization

namespace detail {

inline int to_pixel(double v, int resolution) {
  return std::min(static_cast<int>(std::lround(v)), resolution - 1);
}

template <typename Plot>
void bresenham(int x0, int y0, int x1, int y1, Plot&& plot) {
  const int dx = std::abs(x1 - x0);
  const int dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1;
  const int sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    plot(x0, y0);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

inline void check_stroke_bounds(const Stroke& s, int resolution) {
  for (const auto& p : s.points)
    if (!(p.x >= 0.0 && p.x < resolution && p.y >= 0.0 && p.y < resolution))
      throw DataError("stroke " + std::to_string(s.id) + ": point (" + std::to_string(p.x) + ", " +
                      std::to_string(p.y) + ") outside canvas");
}

}  // namespace detail

// Unions the segments' pixels into `grid`. Bresenham runs from the lower
// endpoint so that reversing a stroke yields the same pixels.
inline void rasterize_into(ImageGrid& grid, const Stroke& stroke, int thickness = 1) {
  const int res = grid.width;
  detail::check_stroke_bounds(stroke, res);
  const double radius = 0.5 * (thickness - 1);
  const int reach = static_cast<int>(std::ceil(radius));
  auto plot = [&](int x, int y) {
    if (thickness <= 1) {
      grid.at(x, y) = 1.0;
      return;
    }
    for (int oy = -reach; oy <= reach; ++oy)
      for (int ox = -reach; ox <= reach; ++ox) {
        const int px = x + ox;
        const int py = y + oy;
        if (px < 0 || py < 0 || px >= res || py >= grid.height) continue;
        if (ox * ox + oy * oy <= radius * radius + 1e-9) grid.at(px, py) = 1.0;
      }
  };
  const auto& pts = stroke.points;
  if (pts.size() == 1) {
    plot(detail::to_pixel(pts[0].x, res), detail::to_pixel(pts[0].y, res));
    return;
  }
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    int x0 = detail::to_pixel(pts[i].x, res), y0 = detail::to_pixel(pts[i].y, res);
    int x1 = detail::to_pixel(pts[i + 1].x, res), y1 = detail::to_pixel(pts[i + 1].y, res);
    if (std::pair(x1, y1) < std::pair(x0, y0)) {
      std::swap(x0, x1);
      std::swap(y0, y1);
    }
    detail::bresenham(x0, y0, x1, y1, plot);
  }
}

inline ImageGrid rasterize(std::span<const Stroke> strokes, int resolution, int thickness = 1) {
  if (resolution <= 0) throw ConfigError("resolution must be positive");
  if (thickness < 1) throw ConfigError("thickness must be >= 1");
  ImageGrid grid(resolution, resolution);
  for (const auto& s : strokes) rasterize_into(grid, s, thickness);
  return grid;
}

inline ImageGrid rasterize(const Stroke& stroke, int resolution, int thickness = 1) {
  return rasterize(std::span<const Stroke>(&stroke, 1), resolution, thickness);
}

inline ImageGrid rasterize(const Sketch& sketch, int thickness = 1) {
  return rasterize(std::span<const Stroke>(sketch.strokes), sketch.resolution, thickness);
}

// Union of the member strokes' rasterizations; the empty set gives a blank grid.
inline ImageGrid compose_group_image(const Sketch& sketch, std::span<const int> member_ids, int resolution) {
  ImageGrid grid(resolution, resolution);
  for (int id : member_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= sketch.strokes.size())
      throw DataError("invalid stroke id " + std::to_string(id));
    rasterize_into(grid, sketch.strokes[static_cast<std::size_t>(id)]);
  }
  return grid;
}

// ---------------------------------------------------------------------------
// Coordinate channels

// x-channel value at column c is (2c - (r - 1)) / (r - 1), exactly antisymmetric
// about the center and exactly +-1 at the borders.
inline std::pair<ImageGrid, ImageGrid> coord_channels(int resolution) {
  if (resolution < 2) throw ConfigError("coord_channels needs resolution >= 2");
  ImageGrid xs(resolution, resolution), ys(resolution, resolution);
  const double denom = resolution - 1;
  for (int y = 0; y < resolution; ++y)
    for (int x = 0; x < resolution; ++x) {
      xs.at(x, y) = (2.0 * x - denom) / denom;
      ys.at(x, y) = (2.0 * y - denom) / denom;
    }
  return {std::move(xs), std::move(ys)};
}

// ---------------------------------------------------------------------------
// Distance field

struct Segment {
  Point2D a;
  Point2D b;
};

inline double point_segment_distance(const Point2D& p, const Segment& s) {
  const double vx = s.b.x - s.a.x;
  const double vy = s.b.y - s.a.y;
  const double wx = p.x - s.a.x;
  const double wy = p.y - s.a.y;
  const double len2 = vx * vx + vy * vy;
  if (len2 <= 0.0) return std::hypot(wx, wy);
  const double t = std::clamp((wx * vx + wy * vy) / len2, 0.0, 1.0);
  return std::hypot(wx - t * vx, wy - t * vy);
}

inline std::vector<Segment> stroke_segments(const Stroke& s) {
  std::vector<Segment> out;
  if (s.points.size() == 1) {
    out.push_back({s.points[0], s.points[0]});
    return out;
  }
  for (std::size_t i = 0; i + 1 < s.points.size(); ++i) out.push_back({s.points[i], s.points[i + 1]});
  return out;
}

inline double polyline_distance(const Point2D& p, const Stroke& s) {
  if (s.points.empty()) throw DataError("polyline_distance on an empty stroke");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& seg : stroke_segments(s)) best = std::min(best, point_segment_distance(p, seg));
  return best;
}

// 1 / (1 + k e^d); returns 0 when k e^d overflows.
inline double field_value(double distance, double k) {
  const double log_term = std::log(k) + distance;
  if (log_term > 700.0) return 0.0;
  return 1.0 / (1.0 + std::exp(log_term));
}

// Uniform bucket grid over segments, queried by expanding Chebyshev rings.
class SegmentGrid {
 public:
  static constexpr double kCellSize = 16.0;

  SegmentGrid(std::span<const Stroke> strokes, int resolution)
      : cells_per_side_(std::max(1, static_cast<int>(std::ceil(resolution / kCellSize)))) {
    buckets_.resize(static_cast<std::size_t>(cells_per_side_) * cells_per_side_);
    for (const auto& st : strokes)
      for (const auto& seg : stroke_segments(st)) {
        const std::size_t idx = segments_.size();
        segments_.push_back(seg);
        const int cx0 = cell(std::min(seg.a.x, seg.b.x)), cx1 = cell(std::max(seg.a.x, seg.b.x));
        const int cy0 = cell(std::min(seg.a.y, seg.b.y)), cy1 = cell(std::max(seg.a.y, seg.b.y));
        for (int cy = cy0; cy <= cy1; ++cy)
          for (int cx = cx0; cx <= cx1; ++cx) buckets_[bucket(cx, cy)].push_back(idx);
      }
  }

  bool empty() const noexcept { return segments_.empty(); }

  double nearest(const Point2D& p) const {
    const int qx = cell(p.x);
    const int qy = cell(p.y);
    double best = std::numeric_limits<double>::infinity();
    for (int r = 0; r < cells_per_side_; ++r) {
      for (int cy = qy - r; cy <= qy + r; ++cy) {
        if (cy < 0 || cy >= cells_per_side_) continue;
        const bool edge_row = cy == qy - r || cy == qy + r;
        for (int cx = qx - r; cx <= qx + r; cx += (edge_row ? 1 : 2 * r)) {
          if (cx >= 0 && cx < cells_per_side_)
            for (std::size_t idx : buckets_[bucket(cx, cy)])
              best = std::min(best, point_segment_distance(p, segments_[idx]));
          if (r == 0) break;
        }
      }
      // Anything in ring r+1 or beyond is at least r cells away.
      if (best <= r * kCellSize) break;
    }
    return best;
  }

 private:
  int cell(double v) const { return std::clamp(static_cast<int>(std::floor(v / kCellSize)), 0, cells_per_side_ - 1); }
  std::size_t bucket(int cx, int cy) const { return static_cast<std::size_t>(cy) * cells_per_side_ + cx; }

  int cells_per_side_;
  std::vector<Segment> segments_;
  std::vector<std::vector<std::size_t>> buckets_;
};

// Field over pixel centers using the minimum distance to any of `strokes`.
inline DistanceFieldMap distance_field(std::span<const Stroke> strokes, int resolution, double k = kDefaultFieldK) {
  if (!(k > 0.0)) throw ConfigError("distance field k must be > 0");
  if (strokes.empty()) throw DataError("distance field needs at least one stroke");
  SegmentGrid grid(strokes, resolution);
  DistanceFieldMap out{ImageGrid(resolution, resolution), k};
#pragma omp parallel for schedule(static)
  for (int y = 0; y < resolution; ++y)
    for (int x = 0; x < resolution; ++x)
      out.grid.at(x, y) = field_value(grid.nearest({static_cast<double>(x), static_cast<double>(y)}), k);
  return out;
}

inline DistanceFieldMap distance_field(const Stroke& stroke, int resolution, double k = kDefaultFieldK) {
  return distance_field(std::span<const Stroke>(&stroke, 1), resolution, k);
}

// Field target for a group of strokes; an empty group is not defined.
inline DistanceFieldMap group_distance_field(const Sketch& sketch, std::span<const int> member_ids, int resolution,
                                             double k = kDefaultFieldK) {
  std::vector<Stroke> members;
  for (int id : member_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= sketch.strokes.size())
      throw DataError("invalid stroke id " + std::to_string(id));
    members.push_back(sketch.strokes[static_cast<std::size_t>(id)]);
  }
  return distance_field(members, resolution, k);
}

// ---------------------------------------------------------------------------
// Debug dumps

// Binary PGM (P5); values are multiplied by `scale` and clamped to [0, 255].
inline void write_pgm(const std::string& path, const ImageGrid& grid, double scale = 255.0) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os << "P5\n" << grid.width << ' ' << grid.height << "\n255\n";
  for (double v : grid.values) {
    const double s = std::clamp(std::round(v * scale), 0.0, 255.0);
    os.put(static_cast<char>(static_cast<unsigned char>(s)));
  }
  if (!os) throw Error("failed writing '" + path + "'");
}

inline void write_field_pgm(const std::string& path, const DistanceFieldMap& field) {
  write_pgm(path, field.grid, 255.0 * (1.0 + field.k));
}

}  // namespace cseg
