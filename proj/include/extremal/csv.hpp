#pragma once

#include <fstream>
#include <string>
#include <vector>

namespace extremal {

/// Shortest decimal string that round-trips to the same double.
/// Infinities and NaN render as inf / -inf / nan.
std::string fmt_double(double v);

std::string join_csv(const std::vector<std::string>& cells);

/// Opens for writing, throws Error on failure.
std::ofstream open_output(const std::string& path);

/// Column names x1..xn style.
std::vector<std::string> indexed_names(const std::string& stem, int count);

} // namespace extremal
