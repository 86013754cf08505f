#pragma once

#include "scouter/tensor.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace scouter {

std::vector<std::string> split(std::string_view text, char sep);
std::string trim(std::string_view text);

Index parse_index(const std::string& text);
double parse_double(const std::string& text);
std::vector<Index> parse_index_list(const std::string& text);
std::vector<double> parse_double_list(const std::string& text);
std::string join_indices(const std::vector<Index>& values);

/// Shortest text that parses back to the same double.
std::string format_exact(double v);
/// Fixed notation with `digits` decimals.
std::string format_fixed(double v, int digits = 6);

}  // namespace scouter
