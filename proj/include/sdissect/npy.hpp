#pragma once

// Reader/writer for the NumPy ".npy" binary layout (versions 1.0 and 2.0 read, 1.0 written).
// Only little-endian float32/float64 C-order arrays of rank 2 or 3 are accepted.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "sdissect/error.hpp"
#include "sdissect/types.hpp"

namespace sdissect {

static_assert(std::endian::native == std::endian::little, "npy codec assumes a little-endian host");

using Tensor = std::variant<DenseMap, ActivationStack>;

struct RawTensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;  // C-order
};

namespace npy_detail {

inline constexpr char kMagic[] = "\x93NUMPY";

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Extracts the value text following 'key': in the header dict.
inline std::string dict_value(const std::string& header, const std::string& key) {
  const std::string needle = "'" + key + "'";
  auto pos = header.find(needle);
  if (pos == std::string::npos) throw FormatError("malformed header: missing " + needle);
  pos = header.find(':', pos + needle.size());
  if (pos == std::string::npos) throw FormatError("malformed header: no value for " + needle);
  ++pos;
  while (pos < header.size() && header[pos] == ' ') ++pos;
  if (pos >= header.size()) throw FormatError("malformed header: truncated");
  std::size_t end = pos;
  if (header[pos] == '\'') {
    end = header.find('\'', pos + 1);
    if (end == std::string::npos) throw FormatError("malformed header: unterminated string");
    return header.substr(pos + 1, end - pos - 1);
  }
  if (header[pos] == '(') {
    end = header.find(')', pos);
    if (end == std::string::npos) throw FormatError("malformed header: unterminated shape");
    return header.substr(pos, end - pos + 1);
  }
  while (end < header.size() && header[end] != ',' && header[end] != '}') ++end;
  return header.substr(pos, end - pos);
}

inline std::vector<std::size_t> parse_shape(const std::string& text) {
  std::vector<std::size_t> shape;
  std::string inner = text.substr(1, text.size() - 2);
  std::stringstream ss(inner);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto first = item.find_first_not_of(' ');
    if (first == std::string::npos) continue;
    auto last = item.find_last_not_of(' ');
    item = item.substr(first, last - first + 1);
    std::size_t consumed = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &consumed);
    } catch (const std::exception&) {
      throw FormatError("malformed header: bad shape entry '" + item + "'");
    }
    if (consumed != item.size()) throw FormatError("malformed header: bad shape entry '" + item + "'");
    shape.push_back(static_cast<std::size_t>(v));
  }
  return shape;
}

}  // namespace npy_detail

inline RawTensor read_npy(const std::filesystem::path& path) {
  const std::string bytes = npy_detail::read_file(path);
  if (bytes.size() < 10 || bytes.compare(0, 6, npy_detail::kMagic, 6) != 0) {
    throw FormatError(path.string() + ": malformed header (bad magic)");
  }
  const auto major = static_cast<unsigned char>(bytes[6]);
  std::size_t header_len = 0;
  std::size_t offset = 0;
  if (major == 1) {
    header_len = static_cast<unsigned char>(bytes[8]) |
                 (static_cast<std::size_t>(static_cast<unsigned char>(bytes[9])) << 8);
    offset = 10;
  } else if (major == 2 || major == 3) {
    if (bytes.size() < 12) throw FormatError(path.string() + ": malformed header (truncated)");
    for (int i = 0; i < 4; ++i) {
      header_len |= static_cast<std::size_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
    }
    offset = 12;
  } else {
    throw FormatError(path.string() + ": malformed header (unsupported version " +
                      std::to_string(major) + ")");
  }
  if (offset + header_len > bytes.size()) {
    throw FormatError(path.string() + ": malformed header (truncated)");
  }
  const std::string header = bytes.substr(offset, header_len);
  offset += header_len;

  const std::string descr = npy_detail::dict_value(header, "descr");
  std::size_t item_size = 0;
  if (descr == "<f4") {
    item_size = 4;
  } else if (descr == "<f8") {
    item_size = 8;
  } else {
    throw FormatError(path.string() + ": unsupported dtype '" + descr +
                      "' (expected little-endian float32 or float64)");
  }
  if (npy_detail::dict_value(header, "fortran_order") != "False") {
    throw FormatError(path.string() + ": Fortran-order arrays are not supported");
  }
  RawTensor out;
  out.shape = npy_detail::parse_shape(npy_detail::dict_value(header, "shape"));
  if (out.shape.size() != 2 && out.shape.size() != 3) {
    throw FormatError(path.string() + ": shape rank " + std::to_string(out.shape.size()) +
                      " not in {2,3}");
  }
  std::size_t count = 1;
  for (auto d : out.shape) {
    if (d == 0) throw FormatError(path.string() + ": zero-sized dimension");
    count *= d;
  }
  if (bytes.size() - offset != count * item_size) {
    throw FormatError(path.string() + ": payload holds " + std::to_string(bytes.size() - offset) +
                      " bytes, header implies " + std::to_string(count * item_size));
  }
  out.values.resize(count);
  const char* data = bytes.data() + offset;
  for (std::size_t i = 0; i < count; ++i) {
    double v;
    if (item_size == 4) {
      float f;
      std::memcpy(&f, data + 4 * i, 4);
      v = f;
    } else {
      std::memcpy(&v, data + 8 * i, 8);
    }
    if (!std::isfinite(v)) throw FormatError(path.string() + ": non-finite values");
    out.values[i] = v;
  }
  return out;
}

// Writes float32 values in npy 1.0 layout. The header is padded so the payload starts on a
// 64-byte boundary, as current NumPy does.
inline void write_npy(const std::filesystem::path& path, const std::vector<std::size_t>& shape,
                      std::span<const double> values) {
  std::string dict = "{'descr': '<f4', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    dict += std::to_string(shape[i]);
    dict += (shape.size() == 1 || i + 1 < shape.size()) ? "," : "";
    if (i + 1 < shape.size()) dict += " ";
  }
  dict += "), }";
  std::size_t total = 10 + dict.size() + 1;
  std::size_t padded = (total + 63) / 64 * 64;
  dict.append(padded - total, ' ');
  dict.push_back('\n');

  std::string bytes(npy_detail::kMagic, 6);
  bytes.push_back('\x01');
  bytes.push_back('\x00');
  bytes.push_back(static_cast<char>(dict.size() & 0xff));
  bytes.push_back(static_cast<char>((dict.size() >> 8) & 0xff));
  bytes += dict;
  const std::size_t base = bytes.size();
  bytes.resize(base + 4 * values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    float f = static_cast<float>(values[i]);
    std::memcpy(bytes.data() + base + 4 * i, &f, 4);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

inline Tensor load_tensor(const std::filesystem::path& path) {
  RawTensor raw = read_npy(path);
  if (raw.shape.size() == 2) {
    return DenseMap(Size{raw.shape[0], raw.shape[1]}, std::move(raw.values));
  }
  ActivationStack stack;
  const Size s{raw.shape[1], raw.shape[2]};
  stack.channels.reserve(raw.shape[0]);
  for (std::size_t c = 0; c < raw.shape[0]; ++c) {
    auto first = raw.values.begin() + static_cast<std::ptrdiff_t>(c * s.area());
    stack.channels.emplace_back(s, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(s.area())));
  }
  return stack;
}

inline DenseMap load_map(const std::filesystem::path& path) {
  Tensor t = load_tensor(path);
  if (auto* m = std::get_if<DenseMap>(&t)) return std::move(*m);
  auto& stack = std::get<ActivationStack>(t);
  if (stack.channels.size() == 1) return std::move(stack.channels.front());
  throw FormatError(path.string() + ": expected a rank-2 map, found " +
                    std::to_string(stack.channels.size()) + " channels");
}

inline ActivationStack load_stack(const std::filesystem::path& path, std::string image_id = {},
                                  std::string layer = {}) {
  Tensor t = load_tensor(path);
  ActivationStack stack;
  if (auto* m = std::get_if<DenseMap>(&t)) {
    stack.channels.push_back(std::move(*m));
  } else {
    stack = std::move(std::get<ActivationStack>(t));
  }
  stack.image_id = std::move(image_id);
  stack.layer = std::move(layer);
  return stack;
}

inline void save_tensor(const DenseMap& map, const std::filesystem::path& path) {
  write_npy(path, {map.height(), map.width()}, map.values());
}

inline void save_tensor(const ActivationStack& stack, const std::filesystem::path& path) {
  stack.validate();
  const Size s = stack.native_size();
  std::vector<double> flat;
  flat.reserve(stack.channels.size() * s.area());
  for (const auto& ch : stack.channels) flat.insert(flat.end(), ch.values().begin(), ch.values().end());
  write_npy(path, {stack.channels.size(), s.height, s.width}, flat);
}

}  // namespace sdissect
