#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace trd {

/// Malformed input; `line()` is 1-based and 0 when not tied to a line.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line = 0);
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

class ValidationError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

class DomainError : public std::domain_error {
    using std::domain_error::domain_error;
};

class StructureError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Seconds since the Unix epoch, UTC.
using Timestamp = std::int64_t;

inline constexpr Timestamp kSecondsPerHour = 3600;

/// Accepts `YYYY-MM-DDTHH:MM[:SS][Z]` (a space may replace the `T`).
Timestamp parse_timestamp(std::string_view text);
std::string format_timestamp(Timestamp ts);

/// Shortest decimal string that parses back to exactly `value`.
std::string format_double(double value);

/// `%g`-style with at most `digits` significant digits; used for human tables.
std::string format_compact(double value, int digits = 6);

std::optional<double> parse_double(std::string_view text);

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

struct CsvRow {
    std::size_t line = 0;
    std::vector<std::string> fields;
};

/// RFC-4180 reader: quoted fields may contain separators, doubled quotes and newlines.
class CsvReader {
public:
    explicit CsvReader(std::istream& in);

    const std::vector<std::string>& header() const { return header_; }
    /// Column index by name; throws ParseError when absent.
    std::size_t column(std::string_view name) const;
    std::optional<std::size_t> find_column(std::string_view name) const;
    bool next(CsvRow& row);

private:
    bool read_record(std::vector<std::string>& fields);

    std::istream& in_;
    std::vector<std::string> header_;
    std::size_t line_ = 0;
    std::size_t record_start_ = 0;
};

std::string csv_escape(std::string_view field);
std::string csv_join(const std::vector<std::string>& fields);

std::string read_text_file(const std::filesystem::path& path);

/// Writes to a sibling temp file then renames, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

/// Deterministic per-stage seed derived from a root seed and a stage label.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stage);

/// Directory holding shipped data files (catalog, template, lexicon).
std::filesystem::path data_dir();
/// Score-table directory; `TRD_TABLES_DIR` overrides the shipped one.
std::filesystem::path tables_dir();

}  // namespace trd
