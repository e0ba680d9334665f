#pragma once

// Binary tensor format:
//
//   4 bytes   magic "EVT1"
//   8 bytes   header length L, unsigned little-endian
//   L bytes   JSON header
//   payload   element data, little-endian IEEE-754, row-major
//
// A single tensor carries {"dtype": "f32"|"f64", "shape": [...]}. A checkpoint
// carries {"kind": "checkpoint", "tensors": [{name, dtype, shape, offset}]}
// with offsets in bytes from the start of the payload.

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "evit/param_store.hpp"
#include "evit/tensor.hpp"

namespace evit::io {

using nlohmann::json;

inline constexpr std::array<char, 4> kMagic{'E', 'V', 'T', '1'};

namespace detail {

template <class U>
void append_le(std::string& out, U v) {
  std::array<char, sizeof(U)> b;
  std::memcpy(b.data(), &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
  out.append(b.data(), b.size());
}

template <class U>
U read_le(const char* p) {
  std::array<char, sizeof(U)> b;
  std::memcpy(b.data(), p, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
  U v;
  std::memcpy(&v, b.data(), sizeof(U));
  return v;
}

inline DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  throw DataError("unsupported dtype '" + s + "'");
}

inline std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

template <class T>
void append_payload(std::string& out, const Tensor<T>& t) {
  for (T v : t.data()) append_le<T>(out, v);
}

template <class T>
Tensor<T> decode_payload(const char* p, std::size_t avail, DType dt, const Shape& shape) {
  const std::size_t n = shape_numel(shape);
  if (avail < n * dtype_size(dt)) throw DataError("tensor payload truncated");
  std::vector<T> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    data[i] = dt == DType::f32 ? static_cast<T>(read_le<float>(p + 4 * i)) : static_cast<T>(read_le<double>(p + 8 * i));
  }
  return Tensor<T>(shape, std::move(data));
}

inline std::string frame(const json& header, const std::string& payload) {
  const std::string h = header.dump();
  std::string out(kMagic.begin(), kMagic.end());
  append_le<std::uint64_t>(out, h.size());
  out += h;
  out += payload;
  return out;
}

struct Framed {
  json header;
  std::size_t payload_offset;
};

inline Framed unframe(const std::string& bytes) {
  if (bytes.size() < 12 || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw DataError("not an EVT1 tensor file");
  }
  const auto len = read_le<std::uint64_t>(bytes.data() + 4);
  if (bytes.size() < 12 + len) throw DataError("tensor header truncated");
  Framed f;
  try {
    f.header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(len));
  } catch (const json::exception& e) {
    throw DataError(std::string("bad tensor header: ") + e.what());
  }
  f.payload_offset = 12 + len;
  return f;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Shape parse_shape(const json& j) {
  Shape s;
  for (const auto& v : j) s.push_back(v.get<std::size_t>());
  return s;
}

}  // namespace detail

template <class T>
std::string encode_tensor(const Tensor<T>& t) {
  json h{{"dtype", std::string(dtype_name(dtype_of<T>()))}, {"shape", t.shape()}};
  std::string payload;
  detail::append_payload(payload, t);
  return detail::frame(h, payload);
}

/// Decode into element type T, converting from the stored dtype if needed.
template <class T>
Tensor<T> decode_tensor(const std::string& bytes) {
  const auto f = detail::unframe(bytes);
  try {
    const DType dt = detail::parse_dtype(f.header.at("dtype").get<std::string>());
    const Shape shape = detail::parse_shape(f.header.at("shape"));
    return detail::decode_payload<T>(bytes.data() + f.payload_offset, bytes.size() - f.payload_offset, dt, shape);
  } catch (const json::exception& e) {
    throw DataError(std::string("bad tensor header: ") + e.what());
  } catch (const ShapeError& e) {
    throw DataError(std::string("bad tensor shape: ") + e.what());
  }
}

/// Header of a tensor file without decoding the payload.
inline json read_tensor_header(const std::string& path) { return detail::unframe(detail::read_file(path)).header; }

template <class T>
void save_tensor(const Tensor<T>& t, const std::string& path) {
  detail::write_file(path, encode_tensor(t));
}

template <class T>
Tensor<T> load_tensor(const std::string& path) {
  return decode_tensor<T>(detail::read_file(path));
}

template <class T>
std::string encode_checkpoint(const ParamStore<T>& store) {
  json entries = json::array();
  std::string payload;
  for (const auto& e : store.entries()) {
    entries.push_back({{"name", e.name},
                       {"dtype", std::string(dtype_name(dtype_of<T>()))},
                       {"shape", e.value.shape()},
                       {"offset", payload.size()}});
    detail::append_payload(payload, e.value);
  }
  return detail::frame(json{{"kind", "checkpoint"}, {"tensors", entries}}, payload);
}

template <class T>
ParamStore<T> decode_checkpoint(const std::string& bytes) {
  const auto f = detail::unframe(bytes);
  ParamStore<T> store;
  try {
    if (f.header.value("kind", "") != "checkpoint") throw DataError("file is not a checkpoint");
    const char* base = bytes.data() + f.payload_offset;
    const std::size_t avail = bytes.size() - f.payload_offset;
    for (const auto& e : f.header.at("tensors")) {
      const auto off = e.at("offset").get<std::size_t>();
      if (off > avail) throw DataError("checkpoint offset out of range");
      const DType dt = detail::parse_dtype(e.at("dtype").get<std::string>());
      store.add(e.at("name").get<std::string>(),
                detail::decode_payload<T>(base + off, avail - off, dt, detail::parse_shape(e.at("shape"))));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("bad checkpoint manifest: ") + e.what());
  } catch (const ShapeError& e) {
    throw DataError(std::string("bad checkpoint shape: ") + e.what());
  }
  return store;
}

template <class T>
void save_checkpoint(const ParamStore<T>& store, const std::string& path) {
  detail::write_file(path, encode_checkpoint(store));
}

template <class T>
ParamStore<T> load_checkpoint(const std::string& path) {
  return decode_checkpoint<T>(detail::read_file(path));
}

}  // namespace evit::io
