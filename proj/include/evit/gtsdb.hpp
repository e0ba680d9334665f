#pragma once

// GTSDB ground truth (gt.txt), P6 PPM images, split statistics and the
// fine-class -> superclass table.

#include <array>
#include <charconv>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "evit/detect_eval.hpp"
#include "evit/tensor.hpp"

namespace evit::gtsdb {

inline constexpr int kNumClasses = 43;

// Reference counts for the full annotation file and the train/test subsets.
inline constexpr std::size_t kReferenceSigns = 1206;
inline constexpr std::size_t kReferenceTrainImages = 631;
inline constexpr std::size_t kReferenceTrainSigns = 856;
inline constexpr std::size_t kReferenceTestImages = 323;
inline constexpr std::size_t kReferenceTestSigns = 370;

/// One gt.txt line: `NAME;left;top;right;bottom;classId`.
struct GtRecord {
  std::string filename;
  int left = 0, top = 0, right = 0, bottom = 0;
  int class_id = 0;

  eval::BBox box() const { return {double(left), double(top), double(right), double(bottom)}; }
  friend bool operator==(const GtRecord&, const GtRecord&) = default;
};

namespace detail {
inline int to_int(std::string_view s, std::size_t line, const char* what) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError("gt line " + std::to_string(line) + ": bad " + what + " '" + std::string(s) + "'");
  }
  return v;
}
}  // namespace detail

inline std::vector<GtRecord> parse_gt(std::string_view text) {
  std::vector<GtRecord> out;
  std::size_t lineno = 0, start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find('\n', start), text.size());
    const std::string_view line = eval::detail::trim(text.substr(start, end - start));
    ++lineno;
    start = end + 1;
    if (line.empty()) continue;
    const auto f = eval::detail::split(line, ';');
    if (f.size() != 6) {
      throw DataError("gt line " + std::to_string(lineno) + ": expected 6 ';'-separated fields, got " +
                      std::to_string(f.size()));
    }
    if (f[0].empty()) throw DataError("gt line " + std::to_string(lineno) + ": empty filename");
    GtRecord r{f[0],
               detail::to_int(f[1], lineno, "left"),
               detail::to_int(f[2], lineno, "top"),
               detail::to_int(f[3], lineno, "right"),
               detail::to_int(f[4], lineno, "bottom"),
               detail::to_int(f[5], lineno, "class id")};
    if (r.class_id < 0 || r.class_id >= kNumClasses) {
      throw DataError("gt line " + std::to_string(lineno) + ": class id " + std::to_string(r.class_id) +
                      " outside [0, 42]");
    }
    if (r.right <= r.left || r.bottom <= r.top) {
      throw DataError("gt line " + std::to_string(lineno) + ": degenerate box (right <= left or bottom <= top)");
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string serialize_gt(const std::vector<GtRecord>& recs) {
  std::ostringstream os;
  for (const auto& r : recs)
    os << r.filename << ';' << r.left << ';' << r.top << ';' << r.right << ';' << r.bottom << ';' << r.class_id << '\n';
  return os.str();
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline std::vector<GtRecord> load_gt(const std::string& path) {
  try {
    return parse_gt(read_text(path));
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

inline std::vector<eval::GroundTruthBox> to_ground_truth(const std::vector<GtRecord>& recs) {
  std::vector<eval::GroundTruthBox> out;
  out.reserve(recs.size());
  for (const auto& r : recs) out.push_back({r.filename, r.box(), r.class_id});
  return out;
}

// ---------------------------------------------------------------------------
// PPM (binary P6, maxval <= 255)

/// Decode to [3, H, W] with values v / maxval.
template <class T = float>
Tensor<T> decode_ppm(const std::string& bytes) {
  std::size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&](const char* what) {
    skip_ws();
    std::size_t v = 0, digits = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos++] - '0');
      if (++digits > 9) throw DataError(std::string("ppm: ") + what + " too large");
    }
    if (digits == 0) throw DataError(std::string("ppm: truncated or malformed header (") + what + ")");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw DataError("ppm: unsupported magic (only binary P6 is supported)");
  }
  pos = 2;
  const std::size_t w = read_uint("width");
  const std::size_t h = read_uint("height");
  const std::size_t maxval = read_uint("maxval");
  if (w == 0 || h == 0) throw DataError("ppm: zero image dimension");
  if (maxval == 0 || maxval > 255) throw DataError("ppm: only 8-bit images are supported (maxval " + std::to_string(maxval) + ")");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) throw DataError("ppm: truncated file");
  ++pos;
  if (bytes.size() - pos < w * h * 3) throw DataError("ppm: truncated pixel data");
  Tensor<T> img(Shape{3, h, w});
  const T inv = static_cast<T>(maxval);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const auto v = static_cast<unsigned char>(bytes[pos + (y * w + x) * 3 + c]);
        img[(c * h + y) * w + x] = static_cast<T>(v) / inv;
      }
  return img;
}

template <class T = float>
Tensor<T> load_ppm(const std::string& path) {
  try {
    return decode_ppm<T>(read_text(path));
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

/// Encode [3, H, W] values in [0, 1] (clamped, rounded to 8 bits).
template <class T>
std::string encode_ppm(const Tensor<T>& img) {
  if (img.rank() != 3 || img.dim(0) != 3) throw ShapeError("ppm: image must be [3, H, W]");
  const std::size_t h = img.dim(1), w = img.dim(2);
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + w * h * 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp<double>(img[(c * h + y) * w + x], 0.0, 1.0);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      }
  return out;
}

template <class T>
void save_ppm(const Tensor<T>& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  const std::string b = encode_ppm(img);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

// ---------------------------------------------------------------------------
// splits and statistics

enum class Split { train, test, all };

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  if (s == "all") return Split::all;
  throw ConfigError("unknown split '" + std::string(s) + "'");
}

/// Filenames per split. Text form: a `[train]` line, then one filename per
/// line, then a `[test]` line and its filenames.
struct SplitManifest {
  std::set<std::string> train;
  std::set<std::string> test;

  static SplitManifest parse(std::string_view text) {
    SplitManifest m;
    std::set<std::string>* cur = nullptr;
    std::size_t lineno = 0, start = 0;
    while (start <= text.size()) {
      const std::size_t end = std::min(text.find('\n', start), text.size());
      const std::string_view line = eval::detail::trim(text.substr(start, end - start));
      ++lineno;
      start = end + 1;
      if (line.empty()) continue;
      if (line == "[train]") {
        cur = &m.train;
      } else if (line == "[test]") {
        cur = &m.test;
      } else if (!cur) {
        throw DataError("split manifest line " + std::to_string(lineno) + ": filename before [train]/[test] header");
      } else {
        cur->insert(std::string(line));
      }
    }
    for (const auto& f : m.train)
      if (m.test.count(f)) throw DataError("split manifest: '" + f + "' listed in both splits");
    return m;
  }
};

/// Without a manifest: images numbered below 600 are train, the rest test.
inline bool in_split(const std::string& filename, Split split, const std::optional<SplitManifest>& manifest) {
  if (split == Split::all) return true;
  if (manifest) return split == Split::train ? manifest->train.count(filename) != 0 : manifest->test.count(filename) != 0;
  long idx = -1;
  const auto dot = filename.find('.');
  const std::string stem = filename.substr(0, dot);
  const auto [ptr, ec] = std::from_chars(stem.data(), stem.data() + stem.size(), idx);
  if (ec != std::errc() || ptr != stem.data() + stem.size()) {
    throw DataError("cannot infer split for '" + filename + "' (non-numeric name); supply a split manifest");
  }
  return split == Split::train ? idx < 600 : idx >= 600;
}

struct SplitStats {
  std::size_t n_images_with_signs = 0;
  std::size_t n_signs = 0;
  std::array<std::size_t, kNumClasses> per_class{};
};

inline SplitStats split_stats(const std::vector<GtRecord>& recs, Split split,
                              const std::optional<SplitManifest>& manifest = std::nullopt) {
  SplitStats s;
  std::set<std::string> images;
  for (const auto& r : recs) {
    if (!in_split(r.filename, split, manifest)) continue;
    images.insert(r.filename);
    ++s.n_signs;
    ++s.per_class[static_cast<std::size_t>(r.class_id)];
  }
  s.n_images_with_signs = images.size();
  return s;
}

inline nlohmann::json to_json(const SplitStats& s) {
  return {{"n_images_with_signs", s.n_images_with_signs}, {"n_signs", s.n_signs}, {"per_class", s.per_class}};
}

// ---------------------------------------------------------------------------
// superclasses

enum class Superclass { danger = 0, prohibitory = 1, mandatory = 2, other = 3 };

inline std::string_view superclass_name(Superclass s) {
  switch (s) {
    case Superclass::danger: return "danger";
    case Superclass::prohibitory: return "prohibitory";
    case Superclass::mandatory: return "mandatory";
    case Superclass::other: return "other";
  }
  return "other";
}

inline Superclass parse_superclass(std::string_view s) {
  if (s == "danger") return Superclass::danger;
  if (s == "prohibitory") return Superclass::prohibitory;
  if (s == "mandatory") return Superclass::mandatory;
  if (s == "other") return Superclass::other;
  throw ConfigError("unknown superclass '" + std::string(s) + "'");
}

/// Total map from the 43 fine class ids to the four superclasses.
class SuperclassMap {
 public:
  explicit SuperclassMap(const std::array<Superclass, kNumClasses>& table) : table_(table) {}

  /// JSON object with one entry per class id "0".."42"; keys starting with
  /// '_' are comments. Missing or extra ids are rejected.
  static SuperclassMap from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("superclass map: document must be a JSON object");
    std::array<std::optional<Superclass>, kNumClasses> seen{};
    for (const auto& [key, val] : j.items()) {
      if (!key.empty() && key[0] == '_') continue;
      int id = -1;
      const auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), id);
      if (ec != std::errc() || ptr != key.data() + key.size() || id < 0 || id >= kNumClasses) {
        throw ConfigError("superclass map: key '" + key + "' is not a class id in [0, 42]");
      }
      if (!val.is_string()) throw ConfigError("superclass map: value for " + key + " must be a string");
      seen[static_cast<std::size_t>(id)] = parse_superclass(val.get<std::string>());
    }
    std::array<Superclass, kNumClasses> t{};
    for (int i = 0; i < kNumClasses; ++i) {
      if (!seen[static_cast<std::size_t>(i)]) throw ConfigError("superclass map: class " + std::to_string(i) + " is missing");
      t[static_cast<std::size_t>(i)] = *seen[static_cast<std::size_t>(i)];
    }
    return SuperclassMap(t);
  }

  static SuperclassMap load(const std::string& path) {
    try {
      return from_json(nlohmann::json::parse(read_text(path)));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }

  /// Grouping from the public GTSDB competition documentation.
  static SuperclassMap gtsdb_default() {
    std::array<Superclass, kNumClasses> t{};
    t.fill(Superclass::other);
    for (int c : {0, 1, 2, 3, 4, 5, 7, 8, 9, 10, 15, 16}) t[static_cast<std::size_t>(c)] = Superclass::prohibitory;
    for (int c = 18; c <= 31; ++c) t[static_cast<std::size_t>(c)] = Superclass::danger;
    t[11] = Superclass::danger;
    for (int c = 33; c <= 40; ++c) t[static_cast<std::size_t>(c)] = Superclass::mandatory;
    return SuperclassMap(t);
  }

  Superclass operator()(int class_id) const {
    if (class_id < 0 || class_id >= kNumClasses) {
      throw DataError("class id " + std::to_string(class_id) + " outside [0, 42]");
    }
    return table_[static_cast<std::size_t>(class_id)];
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (int i = 0; i < kNumClasses; ++i) j[std::to_string(i)] = std::string(superclass_name(table_[static_cast<std::size_t>(i)]));
    return j;
  }

 private:
  std::array<Superclass, kNumClasses> table_;
};

inline Superclass superclass_of(int class_id, const SuperclassMap& map) { return map(class_id); }

/// Replace fine class ids with superclass ids (0..3).
template <class Box>
std::vector<Box> relabel(std::vector<Box> items, const SuperclassMap& map) {
  for (auto& b : items) b.class_id = static_cast<int>(map(b.class_id));
  return items;
}

}  // namespace evit::gtsdb
