#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace patrolscope::csvutil {

// Splits one CSV line on commas. No quoting: all pipeline formats are
// controlled and field values never contain commas. Trailing \r stripped.
std::vector<std::string_view> split(std::string_view line, char delim = ',');

std::optional<double> parse_double(std::string_view s);
std::optional<std::int64_t> parse_int(std::string_view s);

// Shortest round-trip decimal form (std::to_chars), so artifact bytes are
// stable across runs and worker counts.
std::string fmt_double(double v);

}  // namespace patrolscope::csvutil
