#pragma once

// Standalone SVG figures for heat maps and SNR sweep curves.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mrfinn/errors.hpp"
#include "mrfinn/evaluation.hpp"

namespace mrfinn::svg {

namespace detail {

inline std::string num(double v, int precision = 3) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
  return buf;
}

inline std::string rgb(double r, double g, double b) {
  auto c = [](double x) { return static_cast<int>(std::lround(255.0 * std::clamp(x, 0.0, 1.0))); };
  char buf[16];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", c(r), c(g), c(b));
  return buf;
}

/// Blue (negative) - white (zero) - red (positive), t in [-1, 1].
inline std::string diverging(double t) {
  t = std::clamp(t, -1.0, 1.0);
  if (t >= 0) return rgb(1.0, 1.0 - 0.8 * t, 1.0 - 0.85 * t);
  return rgb(1.0 + 0.85 * t, 1.0 + 0.6 * t, 1.0);
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << content;
}

}  // namespace detail

inline std::string heatmap(const HeatMap& hm, const std::string& title) {
  const int cell = 48, left = 90, top = 50, legend = 90;
  const auto rows = static_cast<int>(hm.ff_values.size());
  const auto cols = static_cast<int>(hm.t1_h2o_values.size());
  const int width = left + cols * cell + legend + 20;
  const int height = top + rows * cell + 70;
  double vmax = 0.0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      if (hm.counts(r, c) > 0) vmax = std::max(vmax, std::abs(hm.cells(r, c)));
  const double scale = vmax > 0.0 ? vmax : 1.0;

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  // FF increases upwards.
  for (int r = 0; r < rows; ++r) {
    const int y = top + (rows - 1 - r) * cell;
    s << "<text x=\"" << left - 6 << "\" y=\"" << y + cell / 2 + 4 << "\" text-anchor=\"end\">"
      << detail::num(hm.ff_values[static_cast<std::size_t>(r)]) << "</text>\n";
    for (int c = 0; c < cols; ++c) {
      const int x = left + c * cell;
      const bool filled = hm.counts(r, c) > 0;
      const double v = filled ? hm.cells(r, c) : 0.0;
      s << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\""
        << (filled ? detail::diverging(v / scale) : std::string("#dddddd")) << "\" stroke=\"#999999\"/>\n";
      if (filled)
        s << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4 << "\" text-anchor=\"middle\" font-size=\"9\">"
          << detail::num(v, 2) << "</text>\n";
    }
  }
  for (int c = 0; c < cols; ++c) {
    const int x = left + c * cell + cell / 2;
    const int y = top + rows * cell + 14;
    s << "<text x=\"" << x << "\" y=\"" << y << "\" text-anchor=\"middle\" font-size=\"9\">"
      << detail::num(hm.t1_h2o_values[static_cast<std::size_t>(c)], 4) << "</text>\n";
  }
  s << "<text x=\"" << left + cols * cell / 2 << "\" y=\"" << top + rows * cell + 34
    << "\" text-anchor=\"middle\">T1 H2O (ms)</text>\n";
  s << "<text x=\"20\" y=\"" << top + rows * cell / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 20 "
    << top + rows * cell / 2 << ")\">FF</text>\n";
  // Color bar.
  const int bx = left + cols * cell + 30, bh = rows * cell;
  for (int i = 0; i < 50; ++i) {
    const double t = 1.0 - 2.0 * i / 49.0;
    s << "<rect x=\"" << bx << "\" y=\"" << top + i * bh / 50 << "\" width=\"16\" height=\"" << bh / 50 + 1
      << "\" fill=\"" << detail::diverging(t) << "\"/>\n";
  }
  s << "<text x=\"" << bx + 20 << "\" y=\"" << top + 8 << "\">+" << detail::num(scale, 2) << "</text>\n";
  s << "<text x=\"" << bx + 20 << "\" y=\"" << top + bh / 2 + 4 << "\">0</text>\n";
  s << "<text x=\"" << bx + 20 << "\" y=\"" << top + bh << "\">-" << detail::num(scale, 2) << "</text>\n";
  s << "<text x=\"" << bx << "\" y=\"" << top + bh + 34 << "\" font-size=\"9\">diff (pp)</text>\n";
  s << "</svg>\n";
  return s.str();
}

/// MRE mean +- sd against SNR for one parameter, one polyline per model.
inline std::string sweep(const std::vector<SnrSweepResult>& sweeps, int parameter, const std::string& title) {
  static const std::array<const char*, 6> kColors = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"};
  const int width = 560, height = 380, left = 70, right = 130, top = 40, bottom = 50;
  const int pw = width - left - right, ph = height - top - bottom;

  double xmin = INFINITY, xmax = -INFINITY, ymax = 0.0;
  for (const auto& s : sweeps)
    for (const auto& l : s.levels) {
      if (!std::isfinite(l.snr_db)) continue;
      xmin = std::min(xmin, l.snr_db);
      xmax = std::max(xmax, l.snr_db);
      ymax = std::max(ymax, l.mre_mean[parameter] + l.mre_sd[parameter]);
    }
  if (!std::isfinite(xmin)) xmin = 0.0, xmax = 1.0;
  if (xmax == xmin) xmax = xmin + 1.0;
  if (!(ymax > 0.0)) ymax = 1.0;
  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return top + ph - std::max(0.0, y) / ymax * ph; };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << left + pw / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  for (int i = 0; i <= 5; ++i) {
    const double yv = ymax * i / 5.0;
    s << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << py(yv) << "\" y2=\"" << py(yv)
      << "\" stroke=\"#eeeeee\"/>\n";
    s << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << detail::num(yv) << "</text>\n";
  }
  if (!sweeps.empty())
    for (const auto& l : sweeps.front().levels) {
      if (!std::isfinite(l.snr_db)) continue;
      s << "<text x=\"" << px(l.snr_db) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">"
        << detail::num(l.snr_db) << "</text>\n";
    }
  s << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  s << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 12 << "\" text-anchor=\"middle\">SNR (dB)</text>\n";
  s << "<text x=\"18\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " << top + ph / 2
    << ")\">MRE " << kParamNames[parameter] << " (%)</text>\n";

  for (std::size_t k = 0; k < sweeps.size(); ++k) {
    const char* color = kColors[k % kColors.size()];
    std::string points;
    for (const auto& l : sweeps[k].levels) {
      if (!std::isfinite(l.snr_db)) continue;
      const double x = px(l.snr_db), m = l.mre_mean[parameter], sd = l.mre_sd[parameter];
      points += detail::num(x, 6) + "," + detail::num(py(m), 6) + " ";
      s << "<line x1=\"" << x << "\" x2=\"" << x << "\" y1=\"" << py(m - sd) << "\" y2=\"" << py(m + sd)
        << "\" stroke=\"" << color << "\"/>\n";
      s << "<line x1=\"" << x - 4 << "\" x2=\"" << x + 4 << "\" y1=\"" << py(m + sd) << "\" y2=\"" << py(m + sd)
        << "\" stroke=\"" << color << "\"/>\n";
      s << "<line x1=\"" << x - 4 << "\" x2=\"" << x + 4 << "\" y1=\"" << py(m - sd) << "\" y2=\"" << py(m - sd)
        << "\" stroke=\"" << color << "\"/>\n";
      s << "<circle cx=\"" << x << "\" cy=\"" << py(m) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"" << points << "\"/>\n";
    const int ly = top + 14 + static_cast<int>(k) * 18;
    s << "<line x1=\"" << left + pw + 12 << "\" x2=\"" << left + pw + 32 << "\" y1=\"" << ly << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << left + pw + 36 << "\" y=\"" << ly + 4 << "\">" << sweeps[k].model << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

inline void write_heatmap(const std::string& path, const HeatMap& hm, const std::string& title) {
  detail::write_file(path, heatmap(hm, title));
}

inline void write_sweep(const std::string& path, const std::vector<SnrSweepResult>& sweeps, int parameter,
                        const std::string& title) {
  detail::write_file(path, sweep(sweeps, parameter, title));
}

}  // namespace mrfinn::svg
