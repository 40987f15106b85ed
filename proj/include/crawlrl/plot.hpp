#pragma once

// Standalone SVG line charts.

#include "crawlrl/crawler.hpp"
#include "crawlrl/trainer.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace crawlrl {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::string color;
  // Optional band drawn as a filled polygon between lower and upper.
  std::vector<double> lower;
  std::vector<double> upper;
};

struct Panel {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
};

/// Vertically stacked panels sharing the page width.
std::string render_svg(const std::vector<Panel>& panels, double width = 800.0, double panel_height = 280.0);

struct CurveStats {
  std::vector<double> episode;  // 1-based training episode index
  std::vector<double> mean;
  std::vector<double> stddev;  // across runs; empty for a single run
};

/// Moving average of each run's training-episode returns, aligned by
/// episode index and truncated to the shortest run.
CurveStats learning_curve(const std::vector<std::vector<EpisodeSummary>>& runs, size_t window = 20);

Panel learning_curve_panel(const CurveStats& stats);
/// Positions (x1, x2, s1), IMU and range traces against time.
std::vector<Panel> trajectory_panels(const std::vector<TrajectoryRow>& rows);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace crawlrl
