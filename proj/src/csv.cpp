#include "nairstd/csv.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "nairstd/common.hpp"

namespace nairstd {

std::string fmt_num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
    std::ofstream f(path, std::ios::trunc);
    NAIRSTD_CHECK_DATA(f.good(), "cannot open %s for writing", path.c_str());
    auto emit = [&f](const std::vector<std::string>& cells) {
        for (size_t i = 0; i < cells.size(); ++i) {
            if (i) f << ',';
            f << cells[i];
        }
        f << '\n';
    };
    emit(header);
    for (const auto& r : rows) {
        NAIRSTD_CHECK(r.size() == header.size(), "csv row width %lld != header %lld",
                      (long long)r.size(), (long long)header.size());
        emit(r);
    }
    f.flush();
    NAIRSTD_CHECK_DATA(f.good(), "write to %s failed", path.c_str());
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    std::ifstream f(path);
    NAIRSTD_CHECK_DATA(f.good(), "cannot open %s", path.c_str());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (line.back() == ',') cells.emplace_back();
        rows.push_back(std::move(cells));
    }
    NAIRSTD_CHECK_DATA(!rows.empty(), "%s is empty", path.c_str());
    return rows;
}

}  // namespace nairstd
