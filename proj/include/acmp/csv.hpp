#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "acmp/errors.hpp"

namespace acmp {

// Comma-separated, header row, '.' decimal; fields containing commas,
// quotes or newlines are quoted with doubled quotes.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

namespace detail {

inline std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n") == std::string::npos)
        return field;
    std::string out = "\"";
    for (const char c : field) {
        if (c == '"')
            out += '"';
        out += c;
    }
    out += '"';
    return out;
}

inline std::vector<std::string> csv_split(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

} // namespace detail

inline void write_csv(std::ostream& os, const CsvTable& table) {
    for (std::size_t i = 0; i < table.header.size(); ++i)
        os << (i ? "," : "") << detail::csv_escape(table.header[i]);
    os << "\n";
    for (const auto& row : table.rows) {
        for (std::size_t i = 0; i < row.size(); ++i)
            os << (i ? "," : "") << detail::csv_escape(row[i]);
        os << "\n";
    }
}

inline void write_csv(const std::string& path, const CsvTable& table) {
    std::ofstream os(path);
    if (!os)
        throw IoError("cannot write csv: " + path);
    write_csv(os, table);
}

inline CsvTable read_csv(std::istream& is) {
    CsvTable table;
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty() && is.peek() == std::char_traits<char>::eof())
            break;
        if (first) {
            table.header = detail::csv_split(line);
            first = false;
        } else {
            auto row = detail::csv_split(line);
            if (row.size() != table.header.size())
                throw IoError("csv row has " + std::to_string(row.size()) + " fields, header has " +
                              std::to_string(table.header.size()));
            table.rows.push_back(std::move(row));
        }
    }
    if (first)
        throw IoError("csv stream has no header row");
    return table;
}

inline CsvTable read_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is)
        throw IoError("cannot read csv: " + path);
    return read_csv(is);
}

inline std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

} // namespace acmp
