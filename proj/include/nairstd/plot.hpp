#pragma once

// CSV -> PNG rendering: line plots (coverage vs K, size CDF) and patch-grid
// score heatmaps. Pure batch output, no display.

#include <cstdint>
#include <string>

namespace nairstd {

// Line plot of (column x_col, column y_col) from a headered CSV.
void plot_curve(const std::string& csv_path, const std::string& out_png,
                size_t x_col = 0, size_t y_col = 1);

// Matrix CSV (header row ignored, one CSV row per grid row) rendered as a
// colormapped grid, cell_px pixels per cell.
void plot_heatmap(const std::string& csv_path, const std::string& out_png,
                  int64_t cell_px = 16);

}  // namespace nairstd
