#pragma once

#include <charconv>
#include <string>
#include <system_error>

#include "error.hpp"

namespace unbiased {

/// Locale-independent decimal rendering with 17 significant digits.
inline std::string format_real(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

inline double parse_real(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) text.remove_suffix(1);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw FormatError("not a real number: '" + std::string(text) + "'");
  return value;
}

} // namespace unbiased
