#include "crawlrl/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace crawlrl {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '&':
        out += "&amp;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

std::string f2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

// Round step (1, 2, 5 x 10^k) giving about n ticks over span.
double nice_step(double span, int n) {
  const double raw = span / n;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double r = raw / mag;
  return (r < 1.5 ? 1.0 : r < 3.5 ? 2.0 : r < 7.5 ? 5.0 : 10.0) * mag;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!std::isfinite(lo)) {
      lo = 0.0;
      hi = 1.0;
    }
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    }
  }
};

void render_panel(std::ostringstream& os, const Panel& p, double top, double width, double height) {
  const double ml = 70, mr = 150, mt = 30, mb = 45;
  const double x0 = ml, x1 = width - mr, y0 = top + mt, y1 = top + height - mb;
  Range rx, ry;
  for (const auto& s : p.series) {
    for (double v : s.x) rx.add(v);
    for (double v : s.y) ry.add(v);
    for (double v : s.lower) ry.add(v);
    for (double v : s.upper) ry.add(v);
  }
  rx.finish();
  ry.finish();
  auto px = [&](double v) { return x0 + (v - rx.lo) / (rx.hi - rx.lo) * (x1 - x0); };
  auto py = [&](double v) { return y1 - (v - ry.lo) / (ry.hi - ry.lo) * (y1 - y0); };

  os << "<text x=\"" << f2(width / 2) << "\" y=\"" << f2(top + 20)
     << "\" text-anchor=\"middle\" font-size=\"15\">" << escape(p.title) << "</text>\n";
  os << "<rect x=\"" << f2(x0) << "\" y=\"" << f2(y0) << "\" width=\"" << f2(x1 - x0) << "\" height=\""
     << f2(y1 - y0) << "\" fill=\"none\" stroke=\"#444\"/>\n";

  const double sx = nice_step(rx.hi - rx.lo, 6);
  for (double v = std::ceil(rx.lo / sx) * sx; v <= rx.hi + 1e-9 * sx; v += sx) {
    os << "<line x1=\"" << f2(px(v)) << "\" y1=\"" << f2(y1) << "\" x2=\"" << f2(px(v)) << "\" y2=\"" << f2(y1 + 5)
       << "\" stroke=\"#444\"/><text x=\"" << f2(px(v)) << "\" y=\"" << f2(y1 + 18)
       << "\" text-anchor=\"middle\" font-size=\"11\">" << tick_label(v) << "</text>\n";
  }
  const double sy = nice_step(ry.hi - ry.lo, 5);
  for (double v = std::ceil(ry.lo / sy) * sy; v <= ry.hi + 1e-9 * sy; v += sy) {
    os << "<line x1=\"" << f2(x0 - 5) << "\" y1=\"" << f2(py(v)) << "\" x2=\"" << f2(x1) << "\" y2=\"" << f2(py(v))
       << "\" stroke=\"#ddd\"/><text x=\"" << f2(x0 - 8) << "\" y=\"" << f2(py(v) + 4)
       << "\" text-anchor=\"end\" font-size=\"11\">" << tick_label(v) << "</text>\n";
  }
  os << "<text x=\"" << f2((x0 + x1) / 2) << "\" y=\"" << f2(y1 + 36) << "\" text-anchor=\"middle\" font-size=\"12\">"
     << escape(p.x_label) << "</text>\n";
  os << "<text transform=\"translate(" << f2(x0 - 52) << "," << f2((y0 + y1) / 2)
     << ") rotate(-90)\" text-anchor=\"middle\" font-size=\"12\">" << escape(p.y_label) << "</text>\n";

  for (size_t i = 0; i < p.series.size(); ++i) {
    const Series& s = p.series[i];
    const std::string color = s.color.empty() ? kPalette[i % std::size(kPalette)] : s.color;
    if (!s.lower.empty() && s.lower.size() == s.x.size() && s.upper.size() == s.x.size()) {
      os << "<polygon fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
      for (size_t j = 0; j < s.x.size(); ++j) os << f2(px(s.x[j])) << ',' << f2(py(s.upper[j])) << ' ';
      for (size_t j = s.x.size(); j-- > 0;) os << f2(px(s.x[j])) << ',' << f2(py(s.lower[j])) << ' ';
      os << "\"/>\n";
    }
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (size_t j = 0; j < std::min(s.x.size(), s.y.size()); ++j) {
      if (std::isfinite(s.y[j])) os << f2(px(s.x[j])) << ',' << f2(py(s.y[j])) << ' ';
    }
    os << "\"/>\n";
    const double ly = y0 + 14 + 18 * static_cast<double>(i);
    os << "<line x1=\"" << f2(x1 + 12) << "\" y1=\"" << f2(ly) << "\" x2=\"" << f2(x1 + 32) << "\" y2=\"" << f2(ly)
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/><text x=\"" << f2(x1 + 38) << "\" y=\"" << f2(ly + 4)
       << "\" font-size=\"12\">" << escape(s.label) << "</text>\n";
  }
}

}  // namespace

std::string render_svg(const std::vector<Panel>& panels, double width, double panel_height) {
  std::ostringstream os;
  const double height = panel_height * static_cast<double>(panels.size());
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f2(width) << "\" height=\"" << f2(height)
     << "\" viewBox=\"0 0 " << f2(width) << ' ' << f2(height) << "\" font-family=\"sans-serif\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (size_t i = 0; i < panels.size(); ++i) {
    render_panel(os, panels[i], panel_height * static_cast<double>(i), width, panel_height);
  }
  os << "</svg>\n";
  return os.str();
}

CurveStats learning_curve(const std::vector<std::vector<EpisodeSummary>>& runs, size_t window) {
  if (runs.empty()) throw std::invalid_argument("learning_curve: no runs");
  std::vector<std::vector<double>> smoothed;
  size_t n = std::numeric_limits<size_t>::max();
  for (const auto& run : runs) {
    std::vector<double> r;
    for (const auto& e : run) {
      if (e.iteration >= 1) r.push_back(e.total_return);
    }
    smoothed.push_back(moving_average(r, window));
    n = std::min(n, smoothed.back().size());
  }
  CurveStats out;
  const double k = static_cast<double>(runs.size());
  for (size_t i = 0; i < n; ++i) {
    double m = 0.0;
    for (const auto& s : smoothed) m += s[i] / k;
    out.episode.push_back(static_cast<double>(i + 1));
    out.mean.push_back(m);
    if (runs.size() > 1) {
      double v = 0.0;
      for (const auto& s : smoothed) v += (s[i] - m) * (s[i] - m) / k;
      out.stddev.push_back(std::sqrt(v));
    }
  }
  return out;
}

Panel learning_curve_panel(const CurveStats& stats) {
  Panel p{"Training return (20-episode moving average)", "episode", "return", {}};
  Series s{"mean", stats.episode, stats.mean, "#1f77b4", {}, {}};
  if (!stats.stddev.empty()) {
    s.label = "mean +/- 1 std";
    for (size_t i = 0; i < stats.mean.size(); ++i) {
      s.lower.push_back(stats.mean[i] - stats.stddev[i]);
      s.upper.push_back(stats.mean[i] + stats.stddev[i]);
    }
  }
  p.series.push_back(std::move(s));
  return p;
}

std::vector<Panel> trajectory_panels(const std::vector<TrajectoryRow>& rows) {
  std::vector<double> t, x1, x2, s1, a1, a2, d1, d2;
  for (const auto& r : rows) {
    t.push_back(r.t);
    x1.push_back(r.x1);
    x2.push_back(r.x2);
    s1.push_back(r.s1);
    a1.push_back(r.alpha1);
    a2.push_back(r.alpha2);
    d1.push_back(r.X1);
    d2.push_back(r.X2);
  }
  return {
      {"Positions", "t [s]", "position [m]",
       {{"tail x1", t, x1, "", {}, {}}, {"head x2", t, x2, "", {}, {}}, {"centre s1", t, s1, "", {}, {}}}},
      {"Accelerometers", "t [s]", "acceleration [m/s^2]",
       {{"alpha1", t, a1, "", {}, {}}, {"alpha2", t, a2, "", {}, {}}}},
      {"Range sensors", "t [s]", "distance [m]", {{"X1", t, d1, "", {}, {}}, {"X2", t, d2, "", {}, {}}}},
  };
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

}  // namespace crawlrl
