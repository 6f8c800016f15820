#pragma once

// Minimal CSV I/O for the experiment artifacts. Cells are plain numbers or
// short tokens (no quoting or escaping); doubles are written with enough
// digits to round-trip exactly, so re-reading a file reproduces the values
// bit for bit. Lines starting with '#' are metadata comments and are
// preserved by the reader.

#include <filesystem>
#include <string>
#include <vector>

namespace polsense {

// Exact round-trip text for a double ("%.17g").
std::string format_double(double value);

// Strict numeric parsing; throws std::invalid_argument on trailing junk.
double parse_double(const std::string& cell);
long long parse_int(const std::string& cell);
unsigned long long parse_uint(const std::string& cell);

struct CsvTable {
    std::vector<std::string> comments;            // '#'-lines, in file order
    std::vector<std::string> header;              // column names
    std::vector<std::vector<std::string>> rows;   // cell text per row

    // Index of a named column; throws std::invalid_argument if absent.
    std::size_t column(const std::string& name) const;
};

void write_csv(const std::filesystem::path& path, const CsvTable& table);
CsvTable read_csv(const std::filesystem::path& path);

}  // namespace polsense
