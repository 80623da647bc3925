#pragma once

// Minimal RFC 4180 helpers shared by the recorder, the alert log export and
// the validation reports.

#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cardiotel::csv {

// Quotes a field only when it contains a comma, quote, CR or LF.
std::string escape(std::string_view field);

std::string join(const std::vector<std::string>& fields);

// Reads one record, honouring quoted fields that span lines. Returns nullopt
// at end of input. A trailing CR before LF is stripped.
std::optional<std::vector<std::string>> read_record(std::istream& in);

// Shortest decimal form that round-trips, never in exponent notation for
// values of realistic magnitude.
std::string format_number(double value);

} // namespace cardiotel::csv
