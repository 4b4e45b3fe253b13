#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace laiml::io {

// Shortest decimal representation that parses back to the same double.
std::string format_double(double value);

// Strict decimal parse of the whole field. Rejects empty input, trailing
// garbage, and non-finite values ("nan", "inf").
std::optional<double> parse_double(std::string_view text);

std::string_view trim(std::string_view text);

std::vector<std::string> split(std::string_view line, char delimiter);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

std::uint32_t crc32(std::string_view bytes);
std::string hex32(std::uint32_t value);

// One parsed delimited-text table. `line_numbers[i]` is the 1-based source
// line of `rows[i]`; comment lines starting with '#' are collected verbatim.
struct DelimitedTable {
    std::vector<std::string> comments;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;
};

DelimitedTable parse_delimited(std::string_view contents, char delimiter = ',');

}  // namespace laiml::io
