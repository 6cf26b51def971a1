#pragma once

// "SPF1" feature archive: magic, u32 rows, u32 cols, rows*cols float32,
// all little-endian, row-major. Also used for conditioning vectors (cols = 1)
// and embeddings.

#include "vfrpool/binary_io.hpp"
#include "vfrpool/core.hpp"

#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace vfrpool {

inline void write_spf(std::ostream& os, const MatrixXd& m) {
  os.write("SPF1", 4);
  io::put_u32(os, static_cast<std::uint32_t>(m.rows()));
  io::put_u32(os, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) io::put_f32(os, static_cast<float>(m(r, c)));
  }
}

inline void write_spf(const std::string& path, const MatrixXd& m) {
  auto os = io::open_out(path);
  write_spf(os, m);
  if (!os) throw Error(ErrorKind::IoError, "write failed for '" + path + "'");
}

inline MatrixXd read_spf(std::istream& is) {
  constexpr auto bad = ErrorKind::MalformedHeader;
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::string(magic, 4) != "SPF1") throw Error(bad, "missing SPF1 magic");
  const std::uint32_t rows = io::get_u32(is, bad);
  const std::uint32_t cols = io::get_u32(is, bad);
  MatrixXd m(rows, cols);
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = io::get_f32(is, bad);
  }
  return m;
}

inline MatrixXd read_spf(const std::string& path) {
  auto is = io::open_in(path);
  return read_spf(is);
}

/// Debug CSV: header row, then one row per matrix row prefixed by its index.
inline void write_matrix_csv(const std::string& path, const MatrixXd& m, const std::string& index_name = "frame") {
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::IoError, "cannot open '" + path + "' for writing");
  os << index_name;
  for (Eigen::Index c = 0; c < m.cols(); ++c) os << ",c" << c;
  os << '\n' << std::setprecision(std::numeric_limits<float>::max_digits10);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    os << r;
    for (Eigen::Index c = 0; c < m.cols(); ++c) os << ',' << m(r, c);
    os << '\n';
  }
}

/// Two-column CSV with a header, e.g. "time_ms,H" or "frame,c".
template <typename X, typename Y>
void write_pairs_csv(const std::string& path, const std::string& x_name, const std::string& y_name,
                     const std::vector<X>& xs, const std::vector<Y>& ys) {
  if (xs.size() != ys.size()) throw Error(ErrorKind::LengthMismatch, "csv columns differ in length");
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::IoError, "cannot open '" + path + "' for writing");
  os << x_name << ',' << y_name << '\n' << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t i = 0; i < xs.size(); ++i) os << xs[i] << ',' << ys[i] << '\n';
}

}  // namespace vfrpool
