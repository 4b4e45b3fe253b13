#include "laiml/text_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace laiml::io {

std::string format_double(double value) {
    std::array<char, 64> buffer{};
    const auto result = std::to_chars(buffer.data(), buffer.data() + buffer.size(), value);
    if (result.ec != std::errc{}) {
        throw std::runtime_error("failed to format number");
    }
    return std::string(buffer.data(), result.ptr);
}

std::optional<double> parse_double(std::string_view text) {
    text = trim(text);
    if (text.empty()) {
        return std::nullopt;
    }
    // from_chars rejects a leading '+', which some writers emit.
    if (text.front() == '+') {
        text.remove_prefix(1);
    }
    double value = 0.0;
    const auto* end = text.data() + text.size();
    const auto result = std::from_chars(text.data(), end, value);
    if (result.ec != std::errc{} || result.ptr != end || !std::isfinite(value)) {
        return std::nullopt;
    }
    return value;
}

std::string_view trim(std::string_view text) {
    constexpr std::string_view whitespace = " \t\r\n";
    const auto first = text.find_first_not_of(whitespace);
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = text.find_last_not_of(whitespace);
    return text.substr(first, last - first + 1);
}

std::vector<std::string> split(std::string_view line, char delimiter) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(delimiter, start);
        if (pos == std::string_view::npos) {
            fields.emplace_back(trim(line.substr(start)));
            break;
        }
        fields.emplace_back(trim(line.substr(start, pos - start)));
        start = pos + 1;
    }
    return fields;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) {
        throw std::runtime_error("write failed for " + path.string());
    }
}

std::uint32_t crc32(std::string_view bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; chunk to stay portable for large payloads.
    constexpr std::size_t chunk = 1u << 30;
    for (std::size_t offset = 0; offset < bytes.size(); offset += chunk) {
        const auto len = std::min(chunk, bytes.size() - offset);
        crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + offset), static_cast<uInt>(len));
    }
    return static_cast<std::uint32_t>(crc);
}

std::string hex32(std::uint32_t value) {
    std::array<char, 9> buffer{};
    const auto result = std::to_chars(buffer.data(), buffer.data() + 8, value, 16);
    std::string digits(buffer.data(), result.ptr);
    return std::string(8 - digits.size(), '0') + digits;
}

DelimitedTable parse_delimited(std::string_view contents, char delimiter) {
    DelimitedTable table;
    std::size_t line_no = 0;
    std::size_t start = 0;
    bool have_header = false;
    while (start <= contents.size()) {
        auto end = contents.find('\n', start);
        if (end == std::string_view::npos) {
            end = contents.size();
        }
        const auto line = contents.substr(start, end - start);
        ++line_no;
        start = end + 1;

        const auto stripped = trim(line);
        if (stripped.empty()) {
            if (end == contents.size()) {
                break;
            }
            continue;
        }
        if (stripped.front() == '#') {
            table.comments.emplace_back(stripped);
        } else if (!have_header) {
            table.header = split(stripped, delimiter);
            have_header = true;
        } else {
            table.rows.push_back(split(stripped, delimiter));
            table.line_numbers.push_back(line_no);
        }
        if (end == contents.size()) {
            break;
        }
    }
    return table;
}

}  // namespace laiml::io
