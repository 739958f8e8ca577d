#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "gncde/types.hpp"

#include "json.hpp"

namespace gncde {

/// Little-endian double payload I/O shared by the dataset and checkpoint
/// containers.

inline void write_doubles_le(std::ostream& out, const double* data, std::size_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 8));
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      std::uint64_t bits;
      std::memcpy(&bits, &data[i], 8);
      char buf[8];
      for (int b = 0; b < 8; ++b) buf[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
      out.write(buf, 8);
    }
  }
}

inline void read_doubles_le(std::istream& in, double* data, std::size_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * 8));
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      char buf[8];
      in.read(buf, 8);
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[b])) << (8 * b);
      }
      std::memcpy(&data[i], &bits, 8);
    }
  }
  if (!in) throw ValidationError("payload truncated");
}

/// Row-major matrix payload (Eigen stores column-major, so go row by row).
inline void write_matrix_le(std::ostream& out, const Matrix& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      write_doubles_le(out, &v, 1);
    }
  }
}

inline Matrix read_matrix_le(std::istream& in, Index rows, Index cols) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      double v;
      read_doubles_le(in, &v, 1);
      m(i, j) = v;
    }
  }
  return m;
}

/// Dense matrix as a JSON array of row arrays.
inline nlohmann::json matrix_to_json(const Matrix& m) {
  auto rows = nlohmann::json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    auto row = nlohmann::json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) {
    throw ValidationError(what + " must be an array of row arrays");
  }
  const auto rows = static_cast<Index>(j.size());
  const auto cols = static_cast<Index>(j[0].size());
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    if (!j[i].is_array() || static_cast<Index>(j[i].size()) != cols) {
      throw ValidationError(what + " has ragged rows");
    }
    for (Index k = 0; k < cols; ++k) {
      if (!j[i][k].is_number()) throw ValidationError(what + " entries must be numbers");
      m(i, k) = j[i][k].get<double>();
    }
  }
  return m;
}

/// Container framing: magic line, then the header byte count on its own
/// line, then the header itself.
inline void write_framed_header(std::ostream& out, const std::string& magic,
                                const std::string& header) {
  out << magic << "\n" << header.size() << "\n" << header;
}

inline std::string read_framed_header(std::istream& in, const std::string& magic,
                                      const std::string& what) {
  std::string line;
  if (!std::getline(in, line) || line != magic) {
    throw ValidationError(what + ": bad magic, expected " + magic);
  }
  if (!std::getline(in, line)) throw ValidationError(what + ": missing header length");
  std::size_t len = 0;
  try {
    len = std::stoul(line);
  } catch (...) {
    throw ValidationError(what + ": malformed header length '" + line + "'");
  }
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) throw ValidationError(what + ": truncated header");
  return header;
}

}  // namespace gncde
