#pragma once

// Token-level helpers for the versioned text snapshots (worlds, checkpoints).

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "cycas/matrix.hpp"

namespace cycas::text_io {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string hex_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline std::string next_token(std::istream& in) {
  std::string tok;
  if (!(in >> tok)) throw FormatError("unexpected end of input");
  return tok;
}

inline void expect(std::istream& in, const std::string& want) {
  const std::string got = next_token(in);
  if (got != want) throw FormatError("expected '" + want + "', found '" + got + "'");
}

inline double read_real(std::istream& in) {
  const std::string tok = next_token(in);
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(tok.c_str(), &end);
  if (end != tok.c_str() + tok.size() || errno == ERANGE) throw FormatError("malformed real '" + tok + "'");
  return v;
}

inline unsigned long long read_count(std::istream& in) {
  const std::string tok = next_token(in);
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(tok.c_str(), &end, 10);
  if (tok.empty() || tok[0] == '-' || end != tok.c_str() + tok.size() || errno == ERANGE) {
    throw FormatError("malformed count '" + tok + "'");
  }
  return v;
}

inline void write_matrix(std::ostream& out, const Matrix& m) {
  out << m.rows() << ' ' << m.cols() << '\n';
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out << (c ? " " : "") << hex_real(m(r, c));
    out << '\n';
  }
}

inline Matrix read_matrix(std::istream& in, std::size_t max_elems = 1u << 26) {
  const auto rows = read_count(in);
  const auto cols = read_count(in);
  if (rows == 0 || cols == 0 || rows * cols > max_elems) throw FormatError("implausible matrix shape");
  Matrix m(rows, cols);
  for (auto& v : m.data()) v = read_real(in);
  return m;
}

}  // namespace cycas::text_io
