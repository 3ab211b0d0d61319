#include "extremal/csv.hpp"

#include <charconv>
#include <cmath>

#include "extremal/types.hpp"

namespace extremal {

std::string fmt_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string join_csv(const std::vector<std::string>& cells) {
    std::string out;
    for (size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += cells[i];
    }
    return out;
}

std::ofstream open_output(const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open output file '" + path + "'");
    return f;
}

std::vector<std::string> indexed_names(const std::string& stem, int count) {
    std::vector<std::string> names;
    names.reserve(static_cast<size_t>(count));
    for (int i = 1; i <= count; ++i) names.push_back(stem + std::to_string(i));
    return names;
}

} // namespace extremal
