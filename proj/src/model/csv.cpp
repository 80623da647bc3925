#include "cardiotel/csv.h"

#include <charconv>
#include <cmath>
#include <system_error>

#include "cardiotel/error.h"

namespace cardiotel::csv {

std::string escape(std::string_view field) {
    if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::string join(const std::vector<std::string>& fields) {
    std::string line;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) line += ',';
        line += escape(fields[i]);
    }
    return line;
}

std::optional<std::vector<std::string>> read_record(std::istream& in) {
    if (in.peek() == std::char_traits<char>::eof()) return std::nullopt;
    std::vector<std::string> fields(1);
    bool quoted = false;
    char c;
    while (in.get(c)) {
        if (quoted) {
            if (c == '"') {
                if (in.peek() == '"') {
                    in.get();
                    fields.back() += '"';
                } else {
                    quoted = false;
                }
            } else {
                fields.back() += c;
            }
            continue;
        }
        if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.emplace_back();
        } else if (c == '\n') {
            break;
        } else if (c == '\r' && in.peek() == '\n') {
            continue;
        } else {
            fields.back() += c;
        }
    }
    if (quoted) fail(ErrorCode::parse, "unterminated quoted field");
    return fields;
}

std::string format_number(double value) {
    if (std::isfinite(value) && value == std::trunc(value) && std::fabs(value) < 1e15) {
        return std::to_string(static_cast<long long>(value));
    }
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::fixed);
    if (res.ec != std::errc{}) fail(ErrorCode::validation, "unformattable number");
    return std::string(buf, res.ptr);
}

} // namespace cardiotel::csv
