#include "orbitsplat/common.hpp"

#include <cstdio>
#include <cstdlib>

namespace osp {

std::string double_to_hex(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%a", v);
    return std::string(buf);
}

double double_from_hex(const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str()) throw invalid_input_error("not a hex-float literal: '" + s + "'");
    return v;
}

}  // namespace osp
