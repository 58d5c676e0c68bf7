#pragma once

// OCCK v1 container and detection-box IO.
//
// Container layout (all fields little-endian):
//
//   offset  size  field
//        0     4  magic "OCCK"
//        4     1  version (1)
//        5     1  payload kind (see PayloadKind)
//        6     2  reserved, zero
//        8    16  u32 nx, ny, nz, num_classes
//       24    32  f64 voxel_size, x0, y0, z0
//       56     -  payload
//
// Grid payloads follow the canonical voxel order. The parameter archive
// (kind 4) stores its tensor count in nx and zeros in the remaining header
// fields; the image set (kind 5) stores n, h, w, ch in nx, ny, nz,
// num_classes with u8 pixels.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <unistd.h>

#include "json.hpp"
#include "occkit/augment.hpp"
#include "occkit/det2occ.hpp"
#include "occkit/error.hpp"
#include "occkit/grid.hpp"
#include "occkit/head/params.hpp"
#include "occkit/metrics.hpp"

namespace occkit::io {

inline constexpr std::uint8_t kFormatVersion = 1;
inline constexpr std::size_t kHeaderSize = 56;

enum class PayloadKind : std::uint8_t {
  kLabels = 1,
  kProbs = 2,
  kMask = 3,
  kTensorArchive = 4,
  kImageSet = 5,
};

using Bytes = std::vector<std::uint8_t>;
using AnyGrid = std::variant<LabelGrid, ProbGrid, VoxelMask>;

namespace detail {

class ByteWriter {
 public:
  void reserve(std::size_t n) { out_.reserve(n); }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  Bytes take() { return std::move(out_); }

 private:
  Bytes out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return in_.size() - pos_; }

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(take(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(take(4)); }
  double f64() { return std::bit_cast<double>(take(8)); }

  std::span<const std::uint8_t> raw(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n) const {
    if (remaining() < n) {
      throw LengthError("truncated OCCK data: need " + std::to_string(n) + " bytes at offset " +
                        std::to_string(pos_) + ", " + std::to_string(remaining()) + " left");
    }
  }

 private:
  std::uint64_t take(std::size_t n) {
    need(n);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) v |= std::uint64_t{in_[pos_ + i]} << (8 * i);
    pos_ += n;
    return v;
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

struct Header {
  PayloadKind kind{};
  std::array<std::uint32_t, 4> counts{};  // nx, ny, nz, num_classes
  std::array<double, 4> geometry{};       // voxel_size, x0, y0, z0
};

inline void write_header(ByteWriter& w, const Header& h) {
  w.raw(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("OCCK"), 4));
  w.u8(kFormatVersion);
  w.u8(static_cast<std::uint8_t>(h.kind));
  w.u16(0);
  for (auto c : h.counts) w.u32(c);
  for (auto g : h.geometry) w.f64(g);
}

inline Header read_header(ByteReader& r) {
  r.need(4);
  const auto magic = r.raw(4);
  if (!std::equal(magic.begin(), magic.end(), "OCCK")) {
    throw FormatError("bad magic, expected \"OCCK\"", 0);
  }
  r.need(4);
  const std::uint8_t version = r.u8();
  if (version != kFormatVersion) {
    throw FormatError("unsupported OCCK version " + std::to_string(version), 4);
  }
  const std::uint8_t kind = r.u8();
  if (kind < 1 || kind > 5) throw FormatError("unknown payload kind " + std::to_string(kind), 5);
  if (r.u16() != 0) throw FormatError("reserved bytes must be zero", 6);
  Header h;
  h.kind = static_cast<PayloadKind>(kind);
  for (auto& c : h.counts) c = r.u32();
  for (auto& g : h.geometry) g = r.f64();
  return h;
}

inline Header grid_header(PayloadKind kind, const GridSpec& s) {
  return {kind,
          {s.dims[0], s.dims[1], s.dims[2], s.num_classes},
          {s.voxel_size, s.origin[0], s.origin[1], s.origin[2]}};
}

inline GridSpec spec_from_header(const Header& h) {
  GridSpec s;
  s.dims = {h.counts[0], h.counts[1], h.counts[2]};
  s.num_classes = h.counts[3];
  s.voxel_size = h.geometry[0];
  s.origin = {h.geometry[1], h.geometry[2], h.geometry[3]};
  try {
    s.validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("invalid grid header: ") + e.what(), 8);
  }
  return s;
}

inline void expect_payload(const ByteReader& r, std::uint64_t bytes) {
  if (r.remaining() < bytes) {
    throw LengthError("truncated payload: header announces " + std::to_string(bytes) +
                      " bytes, file holds " + std::to_string(r.remaining()));
  }
  if (r.remaining() > bytes) {
    throw LengthError("trailing data: " + std::to_string(r.remaining() - bytes) +
                      " bytes after payload");
  }
}

inline std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
  if (a != 0 && b > UINT64_MAX / a) throw LengthError("payload size overflows");
  return a * b;
}

}  // namespace detail

inline Bytes encode(const LabelGrid& g) {
  detail::ByteWriter w;
  w.reserve(kHeaderSize + g.size());
  detail::write_header(w, detail::grid_header(PayloadKind::kLabels, g.spec()));
  w.raw(g.labels());
  return w.take();
}

inline Bytes encode(const VoxelMask& m) {
  detail::ByteWriter w;
  w.reserve(kHeaderSize + m.size());
  detail::write_header(w, detail::grid_header(PayloadKind::kMask, m.spec()));
  w.raw(m.bits());
  return w.take();
}

inline Bytes encode(const ProbGrid& p) {
  detail::ByteWriter w;
  w.reserve(kHeaderSize + p.probs().size() * 8);
  detail::write_header(w, detail::grid_header(PayloadKind::kProbs, p.spec()));
  for (double v : p.probs()) w.f64(v);
  return w.take();
}

inline Bytes encode(const AnyGrid& g) {
  return std::visit([](const auto& x) { return encode(x); }, g);
}

/// Decodes a grid container. Probability grids are validated with the
/// 1e-6 sum tolerance and then renormalized.
inline AnyGrid decode_grid(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  const detail::Header h = detail::read_header(r);
  if (h.kind != PayloadKind::kLabels && h.kind != PayloadKind::kProbs &&
      h.kind != PayloadKind::kMask) {
    throw FormatError("payload kind " + std::to_string(static_cast<int>(h.kind)) +
                          " is not a grid",
                      5);
  }
  const GridSpec spec = detail::spec_from_header(h);
  const std::uint64_t voxels = spec.num_voxels();
  switch (h.kind) {
    case PayloadKind::kLabels: {
      detail::expect_payload(r, voxels);
      const auto raw = r.raw(voxels);
      return LabelGrid(spec, std::vector<Label>(raw.begin(), raw.end()));
    }
    case PayloadKind::kMask: {
      detail::expect_payload(r, voxels);
      const auto raw = r.raw(voxels);
      return VoxelMask(spec, std::vector<std::uint8_t>(raw.begin(), raw.end()));
    }
    default: {
      const std::uint64_t n = detail::checked_mul(voxels, spec.num_classes);
      detail::expect_payload(r, detail::checked_mul(n, 8));
      std::vector<double> probs(n);
      for (auto& p : probs) p = r.f64();
      return ProbGrid::renormalized(spec, std::move(probs));
    }
  }
}

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  Bytes data(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(size))) {
    throw IoError("failed reading '" + path.string() + "'");
  }
  return data;
}

/// Writes through a temporary sibling file and renames it into place, so
/// `path` never holds partial output.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw IoError("failed writing '" + path.string() + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move output into '" + path.string() + "'");
  }
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span<const std::uint8_t>(
                              reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

template <typename Grid>
void write_grid(const std::filesystem::path& path, const Grid& grid) {
  write_file_atomic(path, encode(grid));
}

inline AnyGrid read_grid(const std::filesystem::path& path) {
  return decode_grid(read_file(path));
}

template <typename Grid>
Grid read_grid_as(const std::filesystem::path& path, const char* what) {
  AnyGrid g = read_grid(path);
  if (auto* typed = std::get_if<Grid>(&g)) return std::move(*typed);
  throw FormatError("'" + path.string() + "' does not hold a " + what, 5);
}

inline LabelGrid read_labels(const std::filesystem::path& p) { return read_grid_as<LabelGrid>(p, "label grid"); }
inline ProbGrid read_probs(const std::filesystem::path& p) { return read_grid_as<ProbGrid>(p, "probability grid"); }
inline VoxelMask read_mask(const std::filesystem::path& p) { return read_grid_as<VoxelMask>(p, "mask"); }

// ---------------------------------------------------------------------------
// Named-tensor archive (payload kind 4).

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<double> data;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

inline Bytes encode_archive(const std::vector<NamedTensor>& tensors) {
  detail::ByteWriter w;
  detail::write_header(w, {PayloadKind::kTensorArchive,
                           {static_cast<std::uint32_t>(tensors.size()), 0, 0, 0},
                           {0.0, 0.0, 0.0, 0.0}});
  for (const auto& t : tensors) {
    if (t.name.size() > UINT16_MAX) throw ValidationError("tensor name too long");
    std::uint64_t n = 1;
    for (auto d : t.dims) n *= d;
    if (n != t.data.size()) throw ShapeError("tensor '" + t.name + "' dims do not match data");
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.raw(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(t.name.data()),
                                        t.name.size()));
    w.u32(static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) w.u32(d);
    for (double v : t.data) w.f64(v);
  }
  return w.take();
}

inline std::vector<NamedTensor> decode_archive(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  const detail::Header h = detail::read_header(r);
  if (h.kind != PayloadKind::kTensorArchive) throw FormatError("not a tensor archive", 5);
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < h.counts[0]; ++i) {
    NamedTensor t;
    const std::uint16_t len = r.u16();
    const auto name = r.raw(len);
    t.name.assign(name.begin(), name.end());
    const std::uint32_t rank = r.u32();
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      t.dims.push_back(r.u32());
      n = detail::checked_mul(n, t.dims.back());
    }
    r.need(detail::checked_mul(n, 8));
    t.data.resize(n);
    for (auto& v : t.data) v = r.f64();
    out.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw LengthError("trailing data after tensor archive");
  return out;
}

/// Every trainable tensor plus "loss.weights" = [lambda_ce, lambda_dice].
inline std::vector<NamedTensor> params_to_archive(const head::HeadParams& p) {
  std::vector<NamedTensor> out;
  p.for_each_tensor([&](const std::string& name, const std::vector<double>& v,
                        const std::vector<std::size_t>& shape) {
    out.push_back({name, std::vector<std::uint32_t>(shape.begin(), shape.end()), v});
  });
  out.push_back({"loss.weights", {2}, {p.loss_weights.ce, p.loss_weights.dice}});
  return out;
}

inline head::HeadParams params_from_archive(const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  auto get = [&](const std::string& name) -> const NamedTensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ValidationError("archive lacks tensor '" + name + "'");
    return *it->second;
  };
  auto dim = [&](const std::string& name, std::size_t axis) -> std::size_t {
    const auto& t = get(name);
    if (axis >= t.dims.size()) throw ShapeError("tensor '" + name + "' has too few dims");
    return t.dims[axis];
  };

  head::HeadConfig cfg;
  cfg.bev_channels = dim("mlp.fc1.weight", 1);
  cfg.mlp_hidden = dim("mlp.fc1.weight", 0);
  cfg.voxel_channels = dim("unet.enc1.weight", 1);
  const std::size_t decoded = dim("mlp.fc2.weight", 0);
  if (cfg.voxel_channels == 0 || decoded % cfg.voxel_channels != 0) {
    throw ShapeError("mlp output width is not a multiple of voxel channels");
  }
  cfg.depth = decoded / cfg.voxel_channels;
  cfg.unet_widths = {dim("unet.enc1.weight", 0), dim("unet.enc2.weight", 0),
                     dim("unet.enc3.weight", 0), dim("unet.bottleneck.weight", 0)};
  cfg.out_channels = dim("unet.dec1.weight", 0);
  cfg.num_classes = dim("cls.weight", 0);

  head::HeadParams p = head::HeadParams::zeros(cfg);
  p.for_each_tensor([&](const std::string& name, std::vector<double>& v,
                        const std::vector<std::size_t>& shape) {
    const auto& t = get(name);
    if (!std::equal(shape.begin(), shape.end(), t.dims.begin(), t.dims.end())) {
      throw ShapeError("tensor '" + name + "' has unexpected shape");
    }
    v = t.data;
  });
  const auto& lw = get("loss.weights");
  if (lw.data.size() != 2) throw ShapeError("loss.weights must hold 2 values");
  p.loss_weights = {lw.data[0], lw.data[1]};
  p.validate();
  return p;
}

inline void write_params(const std::filesystem::path& path, const head::HeadParams& p) {
  write_file_atomic(path, encode_archive(params_to_archive(p)));
}

inline head::HeadParams read_params(const std::filesystem::path& path) {
  return params_from_archive(decode_archive(read_file(path)));
}

// ---------------------------------------------------------------------------
// Image sets (payload kind 5, u8 pixels).

inline Bytes encode_images(const ImageSet<std::uint8_t>& imgs) {
  detail::ByteWriter w;
  w.reserve(kHeaderSize + imgs.data.size());
  detail::write_header(w, {PayloadKind::kImageSet,
                           {static_cast<std::uint32_t>(imgs.n), static_cast<std::uint32_t>(imgs.h),
                            static_cast<std::uint32_t>(imgs.w), static_cast<std::uint32_t>(imgs.ch)},
                           {0.0, 0.0, 0.0, 0.0}});
  w.raw(imgs.data);
  return w.take();
}

inline ImageSet<std::uint8_t> decode_images(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  const detail::Header h = detail::read_header(r);
  if (h.kind != PayloadKind::kImageSet) throw FormatError("not an image set", 5);
  for (auto c : h.counts) {
    if (c == 0) throw FormatError("image set dims must be >= 1", 8);
  }
  std::uint64_t n = 1;
  for (auto c : h.counts) n = detail::checked_mul(n, c);
  detail::expect_payload(r, n);
  const auto raw = r.raw(n);
  return ImageSet<std::uint8_t>(h.counts[0], h.counts[1], h.counts[2], h.counts[3],
                                std::vector<std::uint8_t>(raw.begin(), raw.end()));
}

inline void write_images(const std::filesystem::path& path, const ImageSet<std::uint8_t>& imgs) {
  write_file_atomic(path, encode_images(imgs));
}

inline ImageSet<std::uint8_t> read_images(const std::filesystem::path& path) {
  return decode_images(read_file(path));
}

// ---------------------------------------------------------------------------
// Detection boxes, one JSON object per line.

/// Parses boxes from JSON lines. Errors name the 1-based line number.
inline std::vector<DetectionBox> parse_boxes(std::istream& in, std::uint32_t num_classes = 18) {
  std::vector<DetectionBox> boxes;
  std::string line;
  std::size_t line_no = 0;
  auto vec3 = [](const nlohmann::json& j, const char* key) {
    const auto& a = j.at(key);
    if (!a.is_array() || a.size() != 3) throw ValidationError(std::string(key) + " must be a 3-array");
    return Vec3{a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      DetectionBox b;
      b.center = vec3(j, "center");
      b.size = vec3(j, "size");
      b.yaw = j.at("yaw").get<double>();
      const auto cls = j.at("class_id").get<std::int64_t>();
      if (cls < 0) throw ValidationError("class_id must be >= 0");
      b.class_id = static_cast<std::uint32_t>(cls);
      b.score = j.at("score").get<double>();
      validate_box(b, num_classes);
      boxes.push_back(b);
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": malformed box: " + e.what());
    }
  }
  return boxes;
}

inline std::vector<DetectionBox> read_boxes(const std::filesystem::path& path,
                                            std::uint32_t num_classes = 18) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return parse_boxes(in, num_classes);
}

inline std::string format_boxes(const std::vector<DetectionBox>& boxes) {
  std::string out;
  for (const auto& b : boxes) {
    nlohmann::json j;
    j["center"] = b.center;
    j["size"] = b.size;
    j["yaw"] = b.yaw;
    j["class_id"] = b.class_id;
    j["score"] = b.score;
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline void write_boxes(const std::filesystem::path& path, const std::vector<DetectionBox>& boxes) {
  write_text_atomic(path, format_boxes(boxes));
}

// ---------------------------------------------------------------------------
// IoU report serialization.

/// {"miou": x|null, "per_class": {name: iou|null}, "counts": {name: {...}}}
inline nlohmann::json report_to_json(const IoUReport& r, const ClassTable& table) {
  nlohmann::json per_class = nlohmann::json::object();
  nlohmann::json counts = nlohmann::json::object();
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const std::string& name = table.name(c);
    per_class[name] = r.per_class[c] ? nlohmann::json(*r.per_class[c]) : nlohmann::json(nullptr);
    counts[name] = {{"intersection", r.counts[c].intersection}, {"union", r.counts[c].union_}};
  }
  nlohmann::json j;
  j["miou"] = r.miou ? nlohmann::json(*r.miou) : nlohmann::json(nullptr);
  j["per_class"] = std::move(per_class);
  j["counts"] = std::move(counts);
  return j;
}

}  // namespace occkit::io
