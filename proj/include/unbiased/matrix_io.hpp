#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "format.hpp"

// Shared matrix persistence.
//
// CSV: first line holds the dimensions "rows,cols", then one line per row,
// comma separated, 17 significant digits.
// Binary: 16-byte header of two little-endian uint64 (rows, cols) followed by
// rows*cols little-endian IEEE-754 doubles in row-major order.

namespace unbiased::io {

inline void write_csv(const std::filesystem::path &path, const Eigen::MatrixXd &mat) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << mat.rows() << ',' << mat.cols() << '\n';
  for (Eigen::Index i = 0; i < mat.rows(); ++i) {
    for (Eigen::Index j = 0; j < mat.cols(); ++j) {
      if (j) out << ',';
      out << format_real(mat(i, j));
    }
    out << '\n';
  }
}

inline std::vector<std::string> split(const std::string &line, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, sep)) parts.push_back(cur);
  if (!line.empty() && line.back() == sep) parts.emplace_back();
  return parts;
}

inline Eigen::MatrixXd read_csv(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": missing header");
  const auto header = split(line, ',');
  if (header.size() != 2) throw FormatError(path.string() + ": header must be 'rows,cols'");
  const double r = parse_real(header[0]);
  const double c = parse_real(header[1]);
  if (r < 0 || c < 0 || r != static_cast<Eigen::Index>(r) || c != static_cast<Eigen::Index>(c))
    throw FormatError(path.string() + ": bad dimensions");
  Eigen::MatrixXd mat(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  for (Eigen::Index i = 0; i < mat.rows(); ++i) {
    if (!std::getline(in, line)) throw FormatError(path.string() + ": truncated at row " + std::to_string(i));
    const auto cells = split(line, ',');
    if (static_cast<Eigen::Index>(cells.size()) != mat.cols())
      throw FormatError(path.string() + ": row " + std::to_string(i) + " has wrong column count");
    for (Eigen::Index j = 0; j < mat.cols(); ++j) mat(i, j) = parse_real(cells[j]);
  }
  return mat;
}

namespace detail {
inline void put_u64(std::ostream &out, std::uint64_t v) {
  std::array<char, 8> bytes{};
  for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((v >> (8 * b)) & 0xffu);
  out.write(bytes.data(), 8);
}

inline std::uint64_t get_u64(std::istream &in) {
  std::array<unsigned char, 8> bytes{};
  if (!in.read(reinterpret_cast<char *>(bytes.data()), 8)) throw FormatError("binary matrix truncated");
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
  return v;
}
} // namespace detail

inline void write_binary(const std::filesystem::path &path, const Eigen::MatrixXd &mat) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  detail::put_u64(out, static_cast<std::uint64_t>(mat.rows()));
  detail::put_u64(out, static_cast<std::uint64_t>(mat.cols()));
  for (Eigen::Index i = 0; i < mat.rows(); ++i)
    for (Eigen::Index j = 0; j < mat.cols(); ++j) detail::put_u64(out, std::bit_cast<std::uint64_t>(mat(i, j)));
}

inline Eigen::MatrixXd read_binary(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  const auto rows = detail::get_u64(in);
  const auto cols = detail::get_u64(in);
  if (rows > (1ull << 31) || cols > (1ull << 31)) throw FormatError(path.string() + ": implausible dimensions");
  Eigen::MatrixXd mat(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < mat.rows(); ++i)
    for (Eigen::Index j = 0; j < mat.cols(); ++j) mat(i, j) = std::bit_cast<double>(detail::get_u64(in));
  return mat;
}

/// Picks the format from the extension: ".csv" is text, anything else binary.
inline Eigen::MatrixXd read_matrix(const std::filesystem::path &path) {
  return path.extension() == ".csv" ? read_csv(path) : read_binary(path);
}

inline void write_matrix(const std::filesystem::path &path, const Eigen::MatrixXd &mat) {
  if (path.extension() == ".csv")
    write_csv(path, mat);
  else
    write_binary(path, mat);
}

} // namespace unbiased::io
