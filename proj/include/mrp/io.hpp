#pragma once

// Text I/O shared by the CLI and the Monte Carlo reports: locale-free real
// formatting, atomic file replacement and a minimal CSV reader/writer.

#include <filesystem>
#include <string>
#include <vector>

namespace mrp::io {

// 17 significant digits, '.' separator, independent of the global locale.
// Round-trips every finite double exactly.
std::string format_real(double value);
// Strict parse of a real; throws DataError naming `what` on failure.
double parse_real(const std::string& text, const std::string& what);
long long parse_integer(const std::string& text, const std::string& what);

// Writes to a temporary file in the same directory, then renames it over
// `path`.
void write_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header);
    void row(const std::vector<std::string>& cells);
    const std::string& str() const { return text_; }
    std::size_t columns() const { return columns_; }

private:
    std::size_t columns_;
    std::string text_;
};

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<int> line;  // source line of each row

    // Index of a header column; throws DataError when missing.
    std::size_t column(const std::string& name) const;
};

// Comma separated, no quoting; blank lines skipped; every row must have the
// header's width (DataError with the line number otherwise).
CsvTable parse_csv(const std::string& text, const std::string& source);

}  // namespace mrp::io
