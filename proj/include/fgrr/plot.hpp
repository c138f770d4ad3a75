#pragma once

// Minimal PNG line charts for the loss/mAP curves: white canvas, light
// grid, colored polylines, tick labels and a legend in a small 5x7 bitmap
// font (digits plus the letters the series names need).

#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "fgrr/png_io.hpp"
#include "fgrr/training.hpp"

namespace fgrr {

struct Series {
  std::string label;
  std::vector<double> values;
  std::array<unsigned char, 3> color{0, 0, 0};
};

namespace plot_detail {

// 5x7 glyphs, one byte per row, low 5 bits used.
inline const std::map<char, std::array<unsigned char, 7>>& font() {
  static const std::map<char, std::array<unsigned char, 7>> f = {
      {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
      {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
      {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
      {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
      {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
      {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
      {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
      {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
      {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
      {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
      {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
      {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}},
      {'e', {0x00, 0x00, 0x0E, 0x11, 0x1F, 0x10, 0x0E}},
      {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
      {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
      {'D', {0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E}},
      {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
      {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
      {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
      {'N', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
      {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
      {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
      {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
      {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
      {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
      {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
  };
  return f;
}

struct Canvas {
  ImageU8 img;

  Canvas(int w, int h) {
    img.width = w;
    img.height = h;
    img.rgb.assign(static_cast<std::size_t>(w) * h * 3, 255);
  }

  void set(int x, int y, std::array<unsigned char, 3> c) {
    if (x < 0 || x >= img.width || y < 0 || y >= img.height) return;
    const std::size_t i = (static_cast<std::size_t>(y) * img.width + x) * 3;
    img.rgb[i] = c[0];
    img.rgb[i + 1] = c[1];
    img.rgb[i + 2] = c[2];
  }

  void line(double x0, double y0, double x1, double y1, std::array<unsigned char, 3> c) {
    const int steps = static_cast<int>(std::max(std::abs(x1 - x0), std::abs(y1 - y0))) + 1;
    for (int s = 0; s <= steps; ++s) {
      const double f = static_cast<double>(s) / steps;
      const int x = static_cast<int>(std::lround(x0 + f * (x1 - x0)));
      const int y = static_cast<int>(std::lround(y0 + f * (y1 - y0)));
      set(x, y, c);
      set(x, y + 1, c);  // 2px thick for visibility
    }
  }

  void text(int x, int y, const std::string& s, std::array<unsigned char, 3> c) {
    int cx = x;
    for (char ch : s) {
      auto it = font().find(ch);
      if (it != font().end()) {
        for (int ry = 0; ry < 7; ++ry)
          for (int rx = 0; rx < 5; ++rx)
            if (it->second[static_cast<std::size_t>(ry)] & (1 << (4 - rx)))
              set(cx + rx, y + ry, c);
      }
      cx += 6;
    }
  }
};

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

}  // namespace plot_detail

inline void write_line_chart(const std::string& path, const std::vector<Series>& series,
                             int width = 640, int height = 400) {
  using plot_detail::Canvas;
  Canvas canvas(width, height);
  const int left = 56, right = width - 10, top = 14, bottom = height - 22;
  const std::array<unsigned char, 3> axis{60, 60, 60};
  const std::array<unsigned char, 3> grid{225, 225, 225};

  double lo = 0.0, hi = 1.0;
  bool any = false;
  std::size_t max_len = 0;
  for (const Series& s : series) {
    max_len = std::max(max_len, s.values.size());
    for (double v : s.values) {
      if (!any) {
        lo = hi = v;
        any = true;
      }
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!any || hi == lo) {
    hi = any ? hi + 1.0 : 1.0;
    lo = any ? lo - 1.0 : 0.0;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;

  auto ypix = [&](double v) {
    return bottom - (v - lo) / (hi - lo) * (bottom - top);
  };
  auto xpix = [&](std::size_t i) {
    const std::size_t n = std::max<std::size_t>(2, max_len);
    return left + static_cast<double>(i) / (n - 1) * (right - left);
  };

  for (int tick = 0; tick <= 4; ++tick) {
    const double v = lo + (hi - lo) * tick / 4.0;
    const int y = static_cast<int>(ypix(v));
    canvas.line(left, y, right, y, grid);
    canvas.text(4, y - 3, plot_detail::tick_label(v), axis);
  }
  canvas.line(left, top, left, bottom, axis);
  canvas.line(left, bottom, right, bottom, axis);

  int legend_y = top + 4;
  for (const Series& s : series) {
    for (std::size_t i = 0; i + 1 < s.values.size(); ++i)
      canvas.line(xpix(i), ypix(s.values[i]), xpix(i + 1), ypix(s.values[i + 1]), s.color);
    canvas.line(right - 70, legend_y + 3, right - 56, legend_y + 3, s.color);
    canvas.text(right - 52, legend_y, s.label, axis);
    legend_y += 11;
  }
  write_png(path, canvas.img);
}

// The two standard charts written next to metrics.csv.
inline void write_loss_chart(const std::string& path, const std::vector<EpochStats>& hist) {
  std::vector<Series> series(5);
  series[0] = {"DET", {}, {200, 60, 50}};
  series[1] = {"NC", {}, {50, 140, 60}};
  series[2] = {"CDA", {}, {60, 80, 200}};
  series[3] = {"IOR", {}, {190, 150, 40}};
  series[4] = {"TOTAL", {}, {30, 30, 30}};
  for (const EpochStats& e : hist) {
    series[0].values.push_back(e.losses.det);
    series[1].values.push_back(e.losses.nc);
    series[2].values.push_back(e.losses.cda);
    series[3].values.push_back(e.losses.ior);
    series[4].values.push_back(e.total);
  }
  write_line_chart(path, series);
}

inline void write_map_chart(const std::string& path, const std::vector<EpochStats>& hist) {
  Series s{"MAP", {}, {60, 80, 200}};
  for (const EpochStats& e : hist) s.values.push_back(e.target_map);
  write_line_chart(path, {s});
}

}  // namespace fgrr
