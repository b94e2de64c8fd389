#include "nairstd/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "nairstd/common.hpp"
#include "nairstd/csv.hpp"

namespace nairstd {

namespace {

double parse_num(const std::string& s, const std::string& path) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    NAIRSTD_CHECK_DATA(end != s.c_str() && *end == '\0', "%s: non-numeric cell '%s'",
                       path.c_str(), s.c_str());
    return v;
}

}  // namespace

void plot_curve(const std::string& csv_path, const std::string& out_png, size_t x_col,
                size_t y_col) {
    const auto rows = read_csv(csv_path);
    NAIRSTD_CHECK_DATA(rows.size() >= 2, "%s: no data rows to plot", csv_path.c_str());
    const auto& header = rows[0];
    NAIRSTD_CHECK_DATA(x_col < header.size() && y_col < header.size(),
                       "%s: plot columns out of range", csv_path.c_str());

    std::vector<double> xs, ys;
    for (size_t i = 1; i < rows.size(); ++i) {
        xs.push_back(parse_num(rows[i][x_col], csv_path));
        ys.push_back(parse_num(rows[i][y_col], csv_path));
    }
    double xmin = *std::min_element(xs.begin(), xs.end());
    double xmax = *std::max_element(xs.begin(), xs.end());
    double ymin = *std::min_element(ys.begin(), ys.end());
    double ymax = *std::max_element(ys.begin(), ys.end());
    if (xmax == xmin) xmax = xmin + 1.0;
    if (ymax == ymin) ymax = ymin + 1.0;

    const int w = 720, h = 540, ml = 70, mr = 25, mt = 25, mb = 55;
    cv::Mat canvas(h, w, CV_8UC3, cv::Scalar(255, 255, 255));
    const auto px = [&](double x) {
        return ml + int(std::lround((x - xmin) / (xmax - xmin) * (w - ml - mr)));
    };
    const auto py = [&](double y) {
        return h - mb - int(std::lround((y - ymin) / (ymax - ymin) * (h - mt - mb)));
    };

    const cv::Scalar axis(40, 40, 40), line(180, 90, 20);
    cv::line(canvas, {ml, mt}, {ml, h - mb}, axis, 1);
    cv::line(canvas, {ml, h - mb}, {w - mr, h - mb}, axis, 1);
    for (int t = 0; t <= 4; ++t) {
        const double fx = xmin + (xmax - xmin) * t / 4.0;
        const double fy = ymin + (ymax - ymin) * t / 4.0;
        cv::line(canvas, {px(fx), h - mb}, {px(fx), h - mb + 4}, axis, 1);
        cv::line(canvas, {ml - 4, py(fy)}, {ml, py(fy)}, axis, 1);
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3g", fx);
        cv::putText(canvas, buf, {px(fx) - 14, h - mb + 20}, cv::FONT_HERSHEY_SIMPLEX, 0.4,
                    axis, 1, cv::LINE_AA);
        std::snprintf(buf, sizeof buf, "%.3g", fy);
        cv::putText(canvas, buf, {8, py(fy) + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, axis, 1,
                    cv::LINE_AA);
    }
    cv::putText(canvas, header[x_col], {w / 2 - 20, h - 12}, cv::FONT_HERSHEY_SIMPLEX, 0.5,
                axis, 1, cv::LINE_AA);
    cv::putText(canvas, header[y_col], {8, 16}, cv::FONT_HERSHEY_SIMPLEX, 0.5, axis, 1,
                cv::LINE_AA);

    for (size_t i = 0; i + 1 < xs.size(); ++i)
        cv::line(canvas, {px(xs[i]), py(ys[i])}, {px(xs[i + 1]), py(ys[i + 1])}, line, 2,
                 cv::LINE_AA);
    for (size_t i = 0; i < xs.size(); ++i)
        cv::circle(canvas, {px(xs[i]), py(ys[i])}, 3, line, cv::FILLED, cv::LINE_AA);

    NAIRSTD_CHECK_DATA(cv::imwrite(out_png, canvas), "cannot write %s", out_png.c_str());
}

void plot_heatmap(const std::string& csv_path, const std::string& out_png, int64_t cell_px) {
    NAIRSTD_CHECK_CONFIG(cell_px >= 1, "heatmap: cell_px must be >= 1");
    const auto rows = read_csv(csv_path);
    NAIRSTD_CHECK_DATA(rows.size() >= 2, "%s: no data rows to plot", csv_path.c_str());
    const int gh = int(rows.size()) - 1, gw = int(rows[0].size());

    cv::Mat grid(gh, gw, CV_64F);
    for (int r = 0; r < gh; ++r) {
        NAIRSTD_CHECK_DATA(int(rows[r + 1].size()) == gw, "%s: ragged heatmap row %d",
                           csv_path.c_str(), r);
        for (int c = 0; c < gw; ++c)
            grid.at<double>(r, c) = parse_num(rows[r + 1][c], csv_path);
    }
    double lo, hi;
    cv::minMaxLoc(grid, &lo, &hi);
    if (hi == lo) hi = lo + 1.0;
    cv::Mat norm8;
    grid.convertTo(norm8, CV_8U, 255.0 / (hi - lo), -lo * 255.0 / (hi - lo));
    cv::Mat color;
    cv::applyColorMap(norm8, color, cv::COLORMAP_INFERNO);
    cv::Mat big;
    cv::resize(color, big, {}, double(cell_px), double(cell_px), cv::INTER_NEAREST);
    NAIRSTD_CHECK_DATA(cv::imwrite(out_png, big), "cannot write %s", out_png.c_str());
}

}  // namespace nairstd
