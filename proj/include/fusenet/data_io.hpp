#pragma once

// CSV and IDX ingestion. Loaders put every record in the training split;
// callers apply their own train/test split.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "fusenet/network.hpp"
#include "fusenet/numerics.hpp"

namespace fusenet {

/// Shortest text that parses back to exactly the same double.
inline std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    cells.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

inline std::optional<double> parse_double(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace detail

/// Rectangular numeric CSV. A first row with any non-numeric cell is a header.
/// With label_column set, that column holds integer class labels and the
/// remaining columns are features.
inline Dataset load_csv(const std::string& path, std::optional<std::size_t> label_column = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  Dataset ds;
  ds.name = path;
  Vector feats;
  std::vector<int> labels;
  std::size_t width = 0, rows = 0, line_no = 0;
  std::string line;
  auto fail = [&](const std::string& what) {
    throw ConfigError(path + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_commas(line);
    std::vector<std::optional<double>> values;
    bool numeric = true;
    for (auto c : cells) {
      values.push_back(detail::parse_double(c));
      numeric = numeric && values.back().has_value();
    }
    if (rows == 0 && width == 0 && !numeric) {  // header
      width = cells.size();
      continue;
    }
    if (width == 0) width = cells.size();
    if (cells.size() != width)
      fail("expected " + std::to_string(width) + " columns, found " + std::to_string(cells.size()));
    if (label_column && *label_column >= width)
      fail("label column " + std::to_string(*label_column) + " missing (only " + std::to_string(width) +
           " columns)");
    for (std::size_t k = 0; k < cells.size(); ++k) {
      if (!values[k]) fail("non-numeric cell '" + std::string(cells[k]) + "' in column " + std::to_string(k));
      if (!std::isfinite(*values[k])) fail("non-finite value in column " + std::to_string(k));
      if (label_column && k == *label_column) {
        const double y = *values[k];
        if (y != static_cast<double>(static_cast<int>(y))) fail("label '" + std::string(cells[k]) + "' is not an integer");
        labels.push_back(static_cast<int>(y));
      } else {
        feats.push_back(*values[k]);
      }
    }
    ++rows;
  }
  if (rows == 0) throw ConfigError(path + ": no records");
  const std::size_t d = width - (label_column ? 1 : 0);
  if (d == 0) throw ConfigError(path + ": no feature columns");
  ds.features = Matrix(rows, d, std::move(feats));
  if (label_column) ds.labels = std::move(labels);
  ds.train = all_records(ds);
  return ds;
}

/// Writes features (and labels at label_column) with round-trip number formatting.
inline void write_csv(const std::string& path, const Dataset& ds, std::optional<std::size_t> label_column = std::nullopt,
                      const std::vector<std::string>& header = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  const std::size_t d = ds.features.cols();
  const std::size_t width = d + (label_column ? 1 : 0);
  if (label_column && (!ds.labels || *label_column >= width)) throw ConfigError("write_csv: bad label column");
  if (!header.empty()) {
    if (header.size() != width) throw ConfigError("write_csv: header width mismatch");
    for (std::size_t k = 0; k < width; ++k) out << (k ? "," : "") << header[k];
    out << '\n';
  }
  for (std::size_t r = 0; r < ds.records(); ++r) {
    std::size_t f = 0;
    for (std::size_t k = 0; k < width; ++k) {
      if (k) out << ',';
      if (label_column && k == *label_column)
        out << (*ds.labels)[r];
      else
        out << format_number(ds.features(r, f++));
    }
    out << '\n';
  }
  if (!out) throw ConfigError("write_csv: write to '" + path + "' failed");
}

namespace detail {

struct IdxFile {
  std::vector<std::uint32_t> dims;
  std::vector<unsigned char> payload;
};

inline IdxFile read_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 4 || bytes[0] != 0 || bytes[1] != 0)
    throw ConfigError(path + ": bad IDX magic");
  if (bytes[2] != 0x08)
    throw ConfigError(path + ": unsupported IDX dtype 0x" + [&] {
      std::ostringstream os;
      os << std::hex << static_cast<int>(bytes[2]);
      return os.str();
    }() + " (only unsigned byte is supported)");
  const std::size_t ndim = bytes[3];
  if (ndim == 0) throw ConfigError(path + ": IDX file has no dimensions");
  if (bytes.size() < 4 + 4 * ndim) throw ConfigError(path + ": truncated IDX header");
  IdxFile f;
  std::size_t count = 1;
  for (std::size_t k = 0; k < ndim; ++k) {
    const unsigned char* p = bytes.data() + 4 + 4 * k;
    const std::uint32_t v = (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) | p[3];
    f.dims.push_back(v);
    count *= v;
  }
  const std::size_t offset = 4 + 4 * ndim;
  if (bytes.size() - offset < count)
    throw ConfigError(path + ": truncated IDX payload (expected " + std::to_string(count) + " bytes, found " +
                      std::to_string(bytes.size() - offset) + ")");
  if (bytes.size() - offset > count) throw ConfigError(path + ": trailing bytes after IDX payload");
  f.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
  return f;
}

inline void write_idx(const std::string& path, const std::vector<std::uint32_t>& dims,
                      const std::vector<unsigned char>& payload) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out.put(0).put(0).put(0x08).put(static_cast<char>(dims.size()));
  for (auto v : dims)
    for (int s = 24; s >= 0; s -= 8) out.put(static_cast<char>((v >> s) & 0xff));
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!out) throw ConfigError("write_idx: write to '" + path + "' failed");
}

}  // namespace detail

/// Unsigned-byte IDX images (first dimension = count, the rest flattened),
/// scaled to [0, 1], with optional IDX labels.
inline Dataset load_idx(const std::string& images_path, const std::optional<std::string>& labels_path = std::nullopt) {
  const auto img = detail::read_idx(images_path);
  const std::size_t n = img.dims[0];
  if (n == 0) throw ConfigError(images_path + ": no records");
  const std::size_t d = n ? img.payload.size() / n : 0;
  Dataset ds;
  ds.name = images_path;
  ds.features = Matrix(n, d);
  for (std::size_t k = 0; k < img.payload.size(); ++k) ds.features.data()[k] = img.payload[k] / 255.0;
  if (labels_path) {
    const auto lab = detail::read_idx(*labels_path);
    if (lab.dims.size() != 1) throw ConfigError(*labels_path + ": label file must be one-dimensional");
    if (lab.dims[0] != n)
      throw ConfigError(*labels_path + ": " + std::to_string(lab.dims[0]) + " labels for " + std::to_string(n) +
                        " images");
    ds.labels = std::vector<int>(lab.payload.begin(), lab.payload.end());
  }
  ds.train = all_records(ds);
  return ds;
}

/// Writes images (values in [0, 1], rounded to bytes) with the given per-image shape.
inline void write_idx_images(const std::string& path, const Matrix& images, const std::vector<std::uint32_t>& shape) {
  std::size_t per = 1;
  for (auto s : shape) per *= s;
  if (per != images.cols()) throw ConfigError("write_idx_images: shape does not match record width");
  std::vector<std::uint32_t> dims{static_cast<std::uint32_t>(images.rows())};
  dims.insert(dims.end(), shape.begin(), shape.end());
  std::vector<unsigned char> payload;
  for (double v : images.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("write_idx_images: value outside [0, 1]");
    payload.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
  }
  detail::write_idx(path, dims, payload);
}

inline void write_idx_labels(const std::string& path, const std::vector<int>& labels) {
  std::vector<unsigned char> payload;
  for (int y : labels) {
    if (y < 0 || y > 255) throw ConfigError("write_idx_labels: label outside [0, 255]");
    payload.push_back(static_cast<unsigned char>(y));
  }
  detail::write_idx(path, {static_cast<std::uint32_t>(labels.size())}, payload);
}

}  // namespace fusenet
