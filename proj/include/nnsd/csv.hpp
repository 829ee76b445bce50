#pragma once

#include <string>
#include <vector>

namespace nnsd {

/// Delimited text with a header row. Fields are trimmed; double quotes around a
/// field are stripped (embedded delimiters inside quotes are honoured).
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Column position, or -1 when absent.
    int find(const std::string& name) const;
    /// Column position; throws InputError naming the missing column.
    int require(const std::string& name) const;
};

Table read_table(const std::string& path, char delimiter = ',');
std::vector<std::string> split_line(const std::string& line, char delimiter);
double parse_real(const std::string& field, const std::string& context);

/// Shortest round-trip decimal form used in every output file (17 significant digits).
std::string format_real(double value);

} // namespace nnsd
