#include "riemdiff/common.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>

namespace riemdiff {

std::string double_to_hex(double v) {
    // %a prints the exact binary value; NaN/inf forms round-trip through strtod too.
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%a", v);
    return std::string(buf);
}

double double_from_hex(const std::string& s) {
    const char* begin = s.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end == begin || *end != '\0')
        throw IoError("not a parseable float literal: '" + s + "'");
    return v;
}

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

} // namespace riemdiff
