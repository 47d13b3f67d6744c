#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace ssrem {

// Shortest decimal text that parses back to the same double.
std::string format_double(double value);
double parse_double(std::string_view text);

std::string csv_escape(std::string_view field);
// Splits one CSV record; quoted fields may contain commas and doubled quotes.
std::vector<std::string> csv_split(std::string_view line);

}  // namespace ssrem
