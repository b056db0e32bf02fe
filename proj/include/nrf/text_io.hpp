#pragma once

#include <charconv>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace nrf {

/// Shortest decimal form that parses back to the identical double.
std::string format_double(double v);

/// Parses a whole token as a double; nullopt on any trailing garbage.
std::optional<double> parse_double(std::string_view token);
std::optional<long long> parse_int(std::string_view token);
std::optional<unsigned long long> parse_u64(std::string_view token);

std::string_view trim(std::string_view s);
std::vector<std::string_view> split(std::string_view s, char sep);

}  // namespace nrf
