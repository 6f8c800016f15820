#include "polsense/csv.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <stdexcept>

namespace polsense {

std::string format_double(double value) {
    char buffer[40];
    std::snprintf(buffer, sizeof(buffer), "%.17g", value);
    return buffer;
}

double parse_double(const std::string& cell) {
    if (cell.empty()) throw std::invalid_argument("csv: empty numeric cell");
    errno = 0;
    char* end = nullptr;
    const double value = std::strtod(cell.c_str(), &end);
    if (end != cell.c_str() + cell.size() || errno == ERANGE)
        throw std::invalid_argument("csv: bad double cell '" + cell + "'");
    return value;
}

long long parse_int(const std::string& cell) {
    if (cell.empty()) throw std::invalid_argument("csv: empty numeric cell");
    errno = 0;
    char* end = nullptr;
    const long long value = std::strtoll(cell.c_str(), &end, 10);
    if (end != cell.c_str() + cell.size() || errno == ERANGE)
        throw std::invalid_argument("csv: bad integer cell '" + cell + "'");
    return value;
}

unsigned long long parse_uint(const std::string& cell) {
    if (cell.empty() || cell[0] == '-')
        throw std::invalid_argument("csv: bad unsigned cell '" + cell + "'");
    errno = 0;
    char* end = nullptr;
    const unsigned long long value = std::strtoull(cell.c_str(), &end, 10);
    if (end != cell.c_str() + cell.size() || errno == ERANGE)
        throw std::invalid_argument("csv: bad unsigned cell '" + cell + "'");
    return value;
}

std::size_t CsvTable::column(const std::string& name) const {
    for (std::size_t c = 0; c < header.size(); ++c)
        if (header[c] == name) return c;
    throw std::invalid_argument("csv: missing column '" + name + "'");
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            cells.push_back(line.substr(start));
            return cells;
        }
        cells.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

std::string join_line(const std::vector<std::string>& cells) {
    std::string line;
    for (std::size_t c = 0; c < cells.size(); ++c) {
        if (c > 0) line += ',';
        line += cells[c];
    }
    return line;
}

}  // namespace

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
    std::ofstream out(path, std::ios::binary);  // binary: stable bytes on any host
    if (!out) throw std::runtime_error("csv: cannot open for writing: " + path.string());
    for (const std::string& comment : table.comments) out << comment << '\n';
    out << join_line(table.header) << '\n';
    for (const auto& row : table.rows) {
        if (row.size() != table.header.size())
            throw std::invalid_argument("csv: row width does not match header");
        out << join_line(row) << '\n';
    }
    out.flush();
    if (!out) throw std::runtime_error("csv: write failed: " + path.string());
}

CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("csv: cannot open for reading: " + path.string());
    CsvTable table;
    std::string line;
    bool have_header = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            table.comments.push_back(line);
            continue;
        }
        if (!have_header) {
            table.header = split_line(line);
            have_header = true;
            continue;
        }
        std::vector<std::string> cells = split_line(line);
        if (cells.size() != table.header.size())
            throw std::runtime_error("csv: row width does not match header in " +
                                     path.string());
        table.rows.push_back(std::move(cells));
    }
    if (!have_header) throw std::runtime_error("csv: missing header in " + path.string());
    return table;
}

}  // namespace polsense
