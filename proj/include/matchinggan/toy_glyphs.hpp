#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <algorithm>
#include <vector>

#include "matchinggan/image_io.hpp"
#include "matchinggan/random.hpp"

// Procedural handwritten-character stand-in. Every category is a fixed set of
// cubic Bezier strokes; every sample redraws them under a random affine
// jitter, per-point noise and pen width.

namespace mgan::toy {

struct Point {
  double x = 0, y = 0;
};

using Stroke = std::array<Point, 4>;

struct GlyphPrototype {
  std::vector<Stroke> strokes;
};

struct GlyphStyle {
  double rotation = 0.18;     // radians, uniform +-
  double scale = 0.10;        // relative, uniform +-
  double shift = 0.05;        // fraction of the canvas, uniform +-
  double point_noise = 0.025;
  double min_width = 1.1;     // pen width in pixels at 32x32
  double max_width = 2.0;
};

inline GlyphPrototype random_prototype(Rng& rng) {
  GlyphPrototype g;
  const int n = 2 + static_cast<int>(uniform_index(rng, 3));
  Point prev{0.2 + 0.6 * uniform01(rng), 0.2 + 0.6 * uniform01(rng)};
  for (int s = 0; s < n; ++s) {
    Stroke st;
    // Strokes usually start where the previous one ended, like pen strokes.
    st[0] = (s > 0 && uniform01(rng) < 0.6) ? prev : Point{0.15 + 0.7 * uniform01(rng), 0.15 + 0.7 * uniform01(rng)};
    for (int i = 1; i < 4; ++i) st[i] = {0.12 + 0.76 * uniform01(rng), 0.12 + 0.76 * uniform01(rng)};
    prev = st[3];
    g.strokes.push_back(st);
  }
  return g;
}

inline Point bezier(const Stroke& s, double t) {
  const double u = 1 - t;
  const double a = u * u * u, b = 3 * u * u * t, c = 3 * u * t * t, d = t * t * t;
  return {a * s[0].x + b * s[1].x + c * s[2].x + d * s[3].x, a * s[0].y + b * s[1].y + c * s[2].y + d * s[3].y};
}

inline double segment_distance(Point p, Point a, Point b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

// White strokes on black, 8-bit gray, size x size.
inline RawImage render_sample(const GlyphPrototype& proto, int size, const GlyphStyle& style, Rng& rng) {
  const double angle = style.rotation * (2 * uniform01(rng) - 1);
  const double sc = 1 + style.scale * (2 * uniform01(rng) - 1);
  const double tx = style.shift * (2 * uniform01(rng) - 1), ty = style.shift * (2 * uniform01(rng) - 1);
  const double width = (style.min_width + (style.max_width - style.min_width) * uniform01(rng)) * size / 32.0;
  const double ca = std::cos(angle), sa = std::sin(angle);

  std::vector<std::vector<Point>> polylines;
  for (const auto& stroke : proto.strokes) {
    Stroke s = stroke;
    for (auto& p : s) {
      const double x = p.x - 0.5 + style.point_noise * standard_normal(rng);
      const double y = p.y - 0.5 + style.point_noise * standard_normal(rng);
      p = {0.5 + tx + sc * (ca * x - sa * y), 0.5 + ty + sc * (sa * x + ca * y)};
    }
    std::vector<Point> line;
    for (int i = 0; i <= 24; ++i) {
      const auto q = bezier(s, i / 24.0);
      line.push_back({q.x * size, q.y * size});
    }
    polylines.push_back(std::move(line));
  }

  RawImage img;
  img.width = img.height = size;
  img.channels = 1;
  img.pixels.assign(static_cast<std::size_t>(size) * size, 0);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const Point p{x + 0.5, y + 0.5};
      double d = 1e9;
      for (const auto& line : polylines)
        for (std::size_t i = 1; i < line.size(); ++i) d = std::min(d, segment_distance(p, line[i - 1], line[i]));
      const double ink = std::clamp(width / 2 + 0.5 - d, 0.0, 1.0);
      img.pixels[static_cast<std::size_t>(y) * size + x] = static_cast<std::uint8_t>(std::lround(255 * ink));
    }
  return img;
}

// Writes root/glyphNNNN/MMM.png for every category and sample.
inline void write_dataset(const std::filesystem::path& root, int categories, int per_category, int size,
                          std::uint64_t seed, const GlyphStyle& style = {}) {
  if (categories < 1 || per_category < 1) throw UsageError("toy dataset needs at least one category and sample");
  for (int c = 0; c < categories; ++c) {
    Rng proto_rng = derive_rng(seed, 2 * static_cast<std::uint64_t>(c));
    Rng sample_rng = derive_rng(seed, 2 * static_cast<std::uint64_t>(c) + 1);
    const auto proto = random_prototype(proto_rng);
    char dir[32];
    std::snprintf(dir, sizeof dir, "glyph%04d", c);
    for (int i = 0; i < per_category; ++i) {
      char file[32];
      std::snprintf(file, sizeof file, "%03d.png", i);
      write_png(root / dir / file, render_sample(proto, size, style, sample_rng));
    }
  }
}

}  // namespace mgan::toy
