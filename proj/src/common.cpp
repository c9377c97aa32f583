#include "trd/common.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <random>
#include <sstream>

namespace trd {

ParseError::ParseError(const std::string& what, std::size_t line)
    : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

namespace {

int parse_fixed_int(std::string_view s, std::size_t pos, std::size_t len, std::string_view whole) {
    if (pos + len > s.size())
        throw ParseError("bad timestamp '" + std::string(whole) + "'");
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data() + pos, s.data() + pos + len, v);
    if (ec != std::errc() || ptr != s.data() + pos + len)
        throw ParseError("bad timestamp '" + std::string(whole) + "'");
    return v;
}

}  // namespace

Timestamp parse_timestamp(std::string_view text) {
    std::string_view s = text;
    while (!s.empty() && (s.back() == 'Z' || s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
    if (s.size() < 16 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') || s[13] != ':')
        throw ParseError("bad timestamp '" + std::string(text) + "'");
    const int y = parse_fixed_int(s, 0, 4, text);
    const int mo = parse_fixed_int(s, 5, 2, text);
    const int d = parse_fixed_int(s, 8, 2, text);
    const int h = parse_fixed_int(s, 11, 2, text);
    const int mi = parse_fixed_int(s, 14, 2, text);
    int sec = 0;
    if (s.size() > 16) {
        if (s.size() != 19 || s[16] != ':') throw ParseError("bad timestamp '" + std::string(text) + "'");
        sec = parse_fixed_int(s, 17, 2, text);
    }
    using namespace std::chrono;
    const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok() || h > 23 || mi > 59 || sec > 60)
        throw ParseError("bad timestamp '" + std::string(text) + "'");
    const auto days = sys_days{ymd}.time_since_epoch().count();
    return static_cast<Timestamp>(days) * 86400 + h * 3600 + mi * 60 + sec;
}

std::string format_timestamp(Timestamp ts) {
    using namespace std::chrono;
    Timestamp days = ts / 86400;
    Timestamp rem = ts % 86400;
    if (rem < 0) {
        rem += 86400;
        --days;
    }
    const year_month_day ymd{sys_days{std::chrono::days{days}}};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<int>(rem / 3600), static_cast<int>(rem % 3600 / 60), static_cast<int>(rem % 60));
    return buf;
}

std::string format_double(double value) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, ptr);
}

std::string format_compact(double value, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, value);
    return buf;
}

std::optional<double> parse_double(std::string_view text) {
    const std::string t = trim(text);
    if (t.empty()) return std::nullopt;
    double v = 0;
    const char* first = t.data();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size()) return std::nullopt;
    return v;
}

std::string to_lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            out.emplace_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

CsvReader::CsvReader(std::istream& in) : in_(in) {
    if (!read_record(header_)) throw ParseError("empty CSV input", 1);
    for (auto& h : header_) h = trim(h);
}

std::size_t CsvReader::column(std::string_view name) const {
    if (auto c = find_column(name)) return *c;
    throw ParseError("missing column '" + std::string(name) + "'", 1);
}

std::optional<std::size_t> CsvReader::find_column(std::string_view name) const {
    for (std::size_t i = 0; i < header_.size(); ++i)
        if (header_[i] == name) return i;
    return std::nullopt;
}

bool CsvReader::next(CsvRow& row) {
    while (read_record(row.fields)) {
        row.line = record_start_;
        if (row.fields.size() == 1 && trim(row.fields[0]).empty()) continue;
        return true;
    }
    return false;
}

bool CsvReader::read_record(std::vector<std::string>& fields) {
    fields.clear();
    std::string field;
    bool in_quotes = false;
    bool any = false;
    record_start_ = line_ + 1;
    int ch;
    while ((ch = in_.get()) != EOF) {
        any = true;
        const char c = static_cast<char>(ch);
        if (in_quotes) {
            if (c == '"') {
                if (in_.peek() == '"') {
                    field.push_back('"');
                    in_.get();
                } else {
                    in_quotes = false;
                }
            } else {
                if (c == '\n') ++line_;
                field.push_back(c);
            }
            continue;
        }
        if (c == '"') {
            in_quotes = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (c == '\n') {
            ++line_;
            fields.push_back(std::move(field));
            return true;
        } else if (c != '\r') {
            field.push_back(c);
        }
    }
    if (in_quotes) throw ParseError("unterminated quoted field", record_start_);
    if (!any) return false;
    ++line_;
    fields.push_back(std::move(field));
    return true;
}

std::string csv_escape(std::string_view field) {
    if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

std::string csv_join(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out.push_back(',');
        out += csv_escape(fields[i]);
    }
    return out;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) {
            std::filesystem::remove(tmp);
            throw std::runtime_error("write failed for '" + path.string() + "'");
        }
    }
    std::filesystem::rename(tmp, path);
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view stage) {
    std::uint32_t h = 2166136261u;
    for (char c : stage) {
        h ^= static_cast<unsigned char>(c);
        h *= 16777619u;
    }
    std::seed_seq seq{static_cast<std::uint32_t>(root), static_cast<std::uint32_t>(root >> 32), h};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::filesystem::path data_dir() { return std::filesystem::path(TRD_SOURCE_DIR) / "data"; }

std::filesystem::path tables_dir() {
    if (const char* env = std::getenv("TRD_TABLES_DIR"); env && *env) return env;
    return std::filesystem::path(TRD_SOURCE_DIR) / "tables";
}

}  // namespace trd
