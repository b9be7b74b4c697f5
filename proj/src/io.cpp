#include "mrp/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <system_error>

#include "mrp/error.hpp"

namespace mrp::io {

std::string format_real(double value) {
    if (std::isnan(value)) return "nan";
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

double parse_real(const std::string& text, const std::string& what) {
    double value = 0.0;
    const char* first = text.data();
    const char* last = first + text.size();
    if (text == "inf") return INFINITY;
    const auto res = std::from_chars(first, last, value);
    if (res.ec != std::errc() || res.ptr != last) throw DataError(what + ": cannot parse '" + text + "' as a number");
    return value;
}

long long parse_integer(const std::string& text, const std::string& what) {
    long long value = 0;
    const char* first = text.data();
    const char* last = first + text.size();
    const auto res = std::from_chars(first, last, value);
    if (res.ec != std::errc() || res.ptr != last) throw DataError(what + ": cannot parse '" + text + "' as an integer");
    return value;
}

void write_atomic(const std::filesystem::path& path, const std::string& content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) throw DataError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw DataError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

CsvWriter::CsvWriter(std::vector<std::string> header) : columns_(header.size()) { row(header); }

void CsvWriter::row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_) throw DataError("CSV row has the wrong number of cells");
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (cells[i].find_first_of(",\n\r") != std::string::npos) {
            throw DataError("CSV cell '" + cells[i] + "' contains a separator");
        }
        if (i) text_ += ',';
        text_ += cells[i];
    }
    text_ += '\n';
}

std::size_t CsvTable::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) return i;
    }
    throw DataError("missing CSV column '" + name + "'");
}

namespace {

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

}  // namespace

CsvTable parse_csv(const std::string& text, const std::string& source) {
    CsvTable table;
    std::istringstream in(text);
    std::string line;
    int number = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split(line);
        if (!have_header) {
            table.header = std::move(cells);
            have_header = true;
            continue;
        }
        if (cells.size() != table.header.size()) {
            throw DataError(source + ":" + std::to_string(number) + ": expected " + std::to_string(table.header.size()) +
                            " fields, found " + std::to_string(cells.size()));
        }
        table.rows.push_back(std::move(cells));
        table.line.push_back(number);
    }
    if (!have_header) throw DataError(source + ": empty file");
    return table;
}

}  // namespace mrp::io
