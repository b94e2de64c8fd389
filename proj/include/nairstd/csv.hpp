#pragma once

// Minimal CSV support for the artifact's logs, reports and plot inputs:
// comma-delimited, header row, UTF-8, no quoting (no emitter produces commas
// inside fields).

#include <string>
#include <vector>

namespace nairstd {

std::string fmt_num(double v);

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

// Returns all rows including the header. Empty file -> DataError.
std::vector<std::vector<std::string>> read_csv(const std::string& path);

}  // namespace nairstd
