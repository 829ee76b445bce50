#include "nnsd/csv.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "nnsd/types.hpp"

namespace nnsd {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

} // namespace

int Table::find(const std::string& name) const {
    for (std::size_t c = 0; c < header.size(); ++c)
        if (header[c] == name) return static_cast<int>(c);
    return -1;
}

int Table::require(const std::string& name) const {
    const int c = find(name);
    if (c < 0) throw InputError("missing column '" + name + "'");
    return c;
}

std::vector<std::string> split_line(const std::string& line, char delimiter) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (char ch : line) {
        if (ch == '"') {
            quoted = !quoted;
        } else if (ch == delimiter && !quoted) {
            out.push_back(trim(field));
            field.clear();
        } else {
            field.push_back(ch);
        }
    }
    out.push_back(trim(field));
    return out;
}

Table read_table(const std::string& path, char delimiter) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path + "'");
    Table table;
    std::string line;
    bool have_header = false;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto fields = split_line(line, delimiter);
        if (!have_header) {
            table.header = std::move(fields);
            have_header = true;
            continue;
        }
        if (fields.size() != table.header.size())
            throw InputError(path + ":" + std::to_string(line_no) + ": expected " +
                             std::to_string(table.header.size()) + " fields, found " +
                             std::to_string(fields.size()));
        table.rows.push_back(std::move(fields));
    }
    if (!have_header) throw InputError("'" + path + "' is empty");
    return table;
}

double parse_real(const std::string& field, const std::string& context) {
    if (field.empty()) throw InputError("empty numeric field (" + context + ")");
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(field.c_str(), &end);
    if (end != field.c_str() + field.size() || errno == ERANGE)
        throw InputError("not a decimal number: '" + field + "' (" + context + ")");
    return v;
}

std::string format_real(double value) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
}

} // namespace nnsd
