#pragma once

#include <charconv>
#include <cstddef>
#include <fstream>
#include <string>
#include <system_error>
#include <vector>

#include "foura/errors.hpp"

namespace foura {

// Locale-independent decimal formatting with 17 significant digits, enough to
// round-trip any f64.
inline std::string format_real(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v,
                                       std::chars_format::general, 17);
  if (ec != std::errc{}) throw InvalidInput("format_real: conversion failed");
  return std::string(buf, ptr);
}

// Minimal deterministic CSV emitter: header row then data rows, comma
// separated, LF line endings.
class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw InvalidInput("cannot open '" + path + "' for writing");
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

  static std::string cell(double v) { return format_real(v); }
  static std::string cell(std::size_t v) { return std::to_string(v); }
  static std::string cell(int v) { return std::to_string(v); }

 private:
  std::ofstream out_;
};

}  // namespace foura
