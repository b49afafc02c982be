#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sigmus {

using Timestamp = std::chrono::sys_seconds;
using Duration = std::chrono::seconds;

// Base for every hard failure raised by the library. Recoverable conditions
// (invalid rows, unknown codes, invariant violations) are reported as values.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Accepts "YYYY-MM-DD", "YYYY-MM-DDTHH:MM:SS[Z]", "YYYY-MM-DD HH:MM:SS",
// "YYYYMMDD", "YYYYMMDDHHMMSS" and "MM/DD/YYYY HH:MM:SS". Always UTC.
std::optional<Timestamp> parse_timestamp(std::string_view text);
std::string format_timestamp(Timestamp t);  // 2025-01-07T18:30:00Z

// "15m", "1h", "1d", "1w", "90s" or a bare number of seconds.
std::optional<Duration> parse_duration(std::string_view text);
std::string format_duration(Duration d);

std::string to_lower_ascii(std::string_view s);
std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char delim);
bool contains_ci(std::string_view haystack, std::string_view needle);

// Lowercased alphanumeric runs; bytes >= 0x80 count as word characters so
// UTF-8 names survive tokenization.
std::vector<std::string> tokenize_words(std::string_view text);

// Replaces every invalid UTF-8 sequence (and NUL) with U+FFFD.
std::string sanitize_utf8(std::string_view s);

std::uint64_t fnv1a64(std::string_view bytes);
std::string sha256_hex(std::string_view bytes);

// Deterministic id of the form "<prefix>-<16 hex chars>" derived from parts.
std::string derive_id(std::string_view prefix, std::initializer_list<std::string_view> parts);

// printf-style double formatting helpers used by every text output.
std::string fixed(double v, int decimals);
std::string round_trip_double(double v);

}  // namespace sigmus
