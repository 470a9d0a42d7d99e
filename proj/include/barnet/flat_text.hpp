#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "barnet/errors.hpp"

namespace barnet {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Parses `key = value` lines. Blank lines and lines starting with '#' are
/// skipped; duplicate keys are an error.
KeyValues parse_key_values(const std::string& text);

std::string trim(const std::string& s);

bool parse_bool(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);
std::int64_t parse_int(const std::string& key, const std::string& value);
std::uint64_t parse_u64(const std::string& key, const std::string& value);

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace barnet
