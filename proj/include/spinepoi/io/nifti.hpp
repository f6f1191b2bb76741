// Copyright The spinepoi Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "spinepoi/errors.hpp"
#include "spinepoi/grid.hpp"

namespace spinepoi::io {

// NIfTI-1 single-file layout; offsets in bytes.
namespace nifti {
constexpr std::size_t kHeaderSize = 348;
constexpr std::size_t kDim = 40;
constexpr std::size_t kDatatype = 70;
constexpr std::size_t kBitpix = 72;
constexpr std::size_t kPixdim = 76;
constexpr std::size_t kVoxOffset = 108;
constexpr std::size_t kSclSlope = 112;
constexpr std::size_t kSclInter = 116;
constexpr std::size_t kXyztUnits = 123;
constexpr std::size_t kQformCode = 252;
constexpr std::size_t kSformCode = 254;
constexpr std::size_t kQuatern = 256;  // b, c, d, then qoffset x, y, z
constexpr std::size_t kSrow = 280;     // x, y, z rows of four floats
constexpr std::size_t kMagic = 344;

enum Datatype : std::int16_t {
  kUInt8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
  kInt8 = 256,
  kUInt16 = 512,
  kUInt32 = 768,
  kInt64 = 1024,
  kUInt64 = 1280,
};

inline int bytes_per_voxel(std::int16_t datatype) {
  switch (datatype) {
    case kUInt8:
    case kInt8: return 1;
    case kInt16:
    case kUInt16: return 2;
    case kInt32:
    case kUInt32:
    case kFloat32: return 4;
    case kFloat64:
    case kInt64:
    case kUInt64: return 8;
    default: return 0;
  }
}
}  // namespace nifti

namespace detail {

class ByteReader {
 public:
  ByteReader(const std::vector<unsigned char>& buf, bool swap) : buf_(buf), swap_(swap) {}

  template <typename T>
  T get(std::size_t offset) const {
    if (offset + sizeof(T) > buf_.size()) {
      fail(ErrorCode::ParseError, "truncated header at byte " + std::to_string(offset));
    }
    std::array<unsigned char, sizeof(T)> raw{};
    std::memcpy(raw.data(), buf_.data() + offset, sizeof(T));
    if (swap_) std::reverse(raw.begin(), raw.end());
    T v;
    std::memcpy(&v, raw.data(), sizeof(T));
    return v;
  }

 private:
  const std::vector<unsigned char>& buf_;
  bool swap_;
};

struct GzFile {
  gzFile f = nullptr;
  explicit GzFile(gzFile file) : f(file) {}
  GzFile(const GzFile&) = delete;
  GzFile& operator=(const GzFile&) = delete;
  ~GzFile() {
    if (f) gzclose(f);
  }
};

inline std::vector<unsigned char> read_all(const std::string& path) {
  GzFile in(gzopen(path.c_str(), "rb"));
  if (!in.f) fail(ErrorCode::IoError, "cannot open " + path);
  std::vector<unsigned char> out;
  std::array<unsigned char, 1 << 16> chunk{};
  for (;;) {
    const int n = gzread(in.f, chunk.data(), static_cast<unsigned>(chunk.size()));
    if (n < 0) fail(ErrorCode::ParseError, "corrupt compressed stream at byte " + std::to_string(out.size()));
    if (n == 0) break;
    out.insert(out.end(), chunk.begin(), chunk.begin() + n);
  }
  return out;
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Rotation matrix from the NIfTI quaternion (b, c, d); a is implied.
inline Mat3 quaternion_matrix(double b, double c, double d) {
  double a = 1.0 - (b * b + c * c + d * d);
  if (a < 1e-7) {
    const double n = std::sqrt(b * b + c * c + d * d);
    b /= n;
    c /= n;
    d /= n;
    a = 0.0;
  } else {
    a = std::sqrt(a);
  }
  Mat3 r;
  r << a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c),  //
      2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b),    //
      2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b;
  return r;
}

}  // namespace detail

/// Reads a NIfTI-1 label map (.nii or .nii.gz). The affine is the sform when
/// sform_code > 0, else the qform when qform_code > 0, else the pixdim
/// diagonal; the world is RAS.
inline LabelVolume read_label_volume(const std::string& path) {
  const std::vector<unsigned char> buf = detail::read_all(path);
  if (buf.size() < nifti::kHeaderSize) {
    fail(ErrorCode::ParseError, "file shorter than the 348-byte header (" + std::to_string(buf.size()) + " bytes)");
  }
  std::int32_t sizeof_hdr = 0;
  std::memcpy(&sizeof_hdr, buf.data(), 4);
  bool swap = false;
  if (sizeof_hdr != 348) {
    swap = true;
    if (detail::ByteReader(buf, true).get<std::int32_t>(0) != 348) {
      fail(ErrorCode::ParseError, "sizeof_hdr at byte 0 is not 348");
    }
  }
  const detail::ByteReader h(buf, swap);
  if (std::memcmp(buf.data() + nifti::kMagic, "n+1\0", 4) != 0) {
    fail(ErrorCode::ParseError, "magic at byte 344 is not \"n+1\" (only single-file NIfTI-1 is supported)");
  }

  const auto ndim = h.get<std::int16_t>(nifti::kDim);
  if (ndim < 1 || ndim > 7) fail(ErrorCode::ParseError, "dim[0] at byte 40 out of range");
  Dims dims{1, 1, 1};
  for (int a = 0; a < 3; ++a) {
    const auto d = a < ndim ? h.get<std::int16_t>(nifti::kDim + 2 * static_cast<std::size_t>(a + 1)) : 1;
    if (d < 1) fail(ErrorCode::ParseError, "dim[" + std::to_string(a + 1) + "] at byte " +
                                               std::to_string(nifti::kDim + 2 * (a + 1)) + " is not positive");
    dims[static_cast<std::size_t>(a)] = d;
  }
  for (int a = 3; a < ndim; ++a) {
    const std::size_t off = nifti::kDim + 2 * static_cast<std::size_t>(a + 1);
    if (h.get<std::int16_t>(off) > 1) {
      fail(ErrorCode::ParseError, "dim[" + std::to_string(a + 1) + "] at byte " + std::to_string(off) +
                                      " > 1; label maps must be 3-D");
    }
  }

  const auto datatype = h.get<std::int16_t>(nifti::kDatatype);
  const int bpv = nifti::bytes_per_voxel(datatype);
  if (bpv == 0) fail(ErrorCode::ParseError, "unsupported datatype " + std::to_string(datatype) + " at byte 70");
  const auto vox_offset = static_cast<double>(h.get<float>(nifti::kVoxOffset));
  if (!(vox_offset >= 348.0) || vox_offset != std::floor(vox_offset)) {
    fail(ErrorCode::ParseError, "vox_offset at byte 108 is invalid");
  }
  const auto count = static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
                     static_cast<std::size_t>(dims[2]);
  const auto data_start = static_cast<std::size_t>(vox_offset);
  if (data_start + count * static_cast<std::size_t>(bpv) > buf.size()) {
    fail(ErrorCode::ParseError, "voxel data truncated at byte " + std::to_string(buf.size()));
  }

  double slope = h.get<float>(nifti::kSclSlope);
  double inter = h.get<float>(nifti::kSclInter);
  if (slope == 0.0 || !std::isfinite(slope)) {
    slope = 1.0;
    inter = 0.0;
  }
  if (!std::isfinite(inter)) inter = 0.0;

  const detail::ByteReader data(buf, swap);
  std::vector<Label> labels(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t off = data_start + i * static_cast<std::size_t>(bpv);
    double v = 0.0;
    switch (datatype) {
      case nifti::kUInt8: v = data.get<std::uint8_t>(off); break;
      case nifti::kInt8: v = data.get<std::int8_t>(off); break;
      case nifti::kInt16: v = data.get<std::int16_t>(off); break;
      case nifti::kUInt16: v = data.get<std::uint16_t>(off); break;
      case nifti::kInt32: v = data.get<std::int32_t>(off); break;
      case nifti::kUInt32: v = data.get<std::uint32_t>(off); break;
      case nifti::kInt64: v = static_cast<double>(data.get<std::int64_t>(off)); break;
      case nifti::kUInt64: v = static_cast<double>(data.get<std::uint64_t>(off)); break;
      case nifti::kFloat32: v = data.get<float>(off); break;
      case nifti::kFloat64: v = data.get<double>(off); break;
      default: break;
    }
    v = v * slope + inter;
    if (!std::isfinite(v) || v != std::round(v)) {
      fail(ErrorCode::NotALabelMap, "voxel " + std::to_string(i) + " holds non-integral value " + std::to_string(v));
    }
    if (v < 0.0 || v > static_cast<double>(std::numeric_limits<Label>::max())) {
      fail(ErrorCode::NotALabelMap, "voxel " + std::to_string(i) + " holds out-of-range label " + std::to_string(v));
    }
    labels[i] = static_cast<Label>(v);
  }

  Vec3 pixdim;
  for (int a = 0; a < 3; ++a) {
    const double p = std::abs(h.get<float>(nifti::kPixdim + 4 * static_cast<std::size_t>(a + 1)));
    pixdim[a] = p > 0.0 ? p : 1.0;
  }
  Mat4 m = Mat4::Identity();
  const auto qform_code = h.get<std::int16_t>(nifti::kQformCode);
  const auto sform_code = h.get<std::int16_t>(nifti::kSformCode);
  if (sform_code > 0) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) {
        m(r, c) = h.get<float>(nifti::kSrow + 16 * static_cast<std::size_t>(r) + 4 * static_cast<std::size_t>(c));
      }
    }
  } else if (qform_code > 0) {
    const double b = h.get<float>(nifti::kQuatern);
    const double c = h.get<float>(nifti::kQuatern + 4);
    const double d = h.get<float>(nifti::kQuatern + 8);
    const double qfac = h.get<float>(nifti::kPixdim) < 0.0f ? -1.0 : 1.0;
    const Mat3 r = detail::quaternion_matrix(b, c, d);
    m.topLeftCorner<3, 3>() = r * Vec3(pixdim.x(), pixdim.y(), qfac * pixdim.z()).asDiagonal();
    m(0, 3) = h.get<float>(nifti::kQuatern + 12);
    m(1, 3) = h.get<float>(nifti::kQuatern + 16);
    m(2, 3) = h.get<float>(nifti::kQuatern + 20);
  } else {
    m.topLeftCorner<3, 3>() = pixdim.asDiagonal();
  }
  try {
    return LabelVolume(dims, std::move(labels), AffineFrame(m, WorldConvention::RAS));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InvalidFrame) {
      fail(ErrorCode::ParseError, std::string("affine at byte ") + (sform_code > 0 ? "280" : "252") + ": " + e.what());
    }
    throw;
  }
}

/// Writes a NIfTI-1 file (gzip-compressed when the path ends in .gz). The
/// affine goes to the sform; the qform carries its rigid part when it has
/// one. Output bytes depend only on the volume.
inline void write_label_volume(const LabelVolume& vol, const std::string& path) {
  const AffineFrame frame = vol.frame().in_convention(WorldConvention::RAS);
  const Mat4& m = frame.matrix();
  Label max_label = 0;
  for (Label l : vol.labels()) max_label = std::max(max_label, l);
  const bool narrow = max_label <= std::numeric_limits<std::uint16_t>::max();
  const std::int16_t datatype = narrow ? nifti::kUInt16 : nifti::kUInt32;
  const int bpv = narrow ? 2 : 4;

  std::vector<unsigned char> out(352, 0);
  auto put = [&out](std::size_t off, const auto& v) { std::memcpy(out.data() + off, &v, sizeof(v)); };
  put(0, std::int32_t{348});
  put(nifti::kDim, std::int16_t{3});
  for (int a = 0; a < 3; ++a) put(nifti::kDim + 2 * static_cast<std::size_t>(a + 1), static_cast<std::int16_t>(vol.dims()[static_cast<std::size_t>(a)]));
  for (int a = 4; a < 8; ++a) put(nifti::kDim + 2 * static_cast<std::size_t>(a), std::int16_t{1});
  put(nifti::kDatatype, datatype);
  put(nifti::kBitpix, static_cast<std::int16_t>(8 * bpv));
  const Vec3 spacing = frame.spacing();
  const double det = frame.linear().determinant();
  put(nifti::kPixdim, det < 0 ? -1.0f : 1.0f);
  for (int a = 0; a < 3; ++a) put(nifti::kPixdim + 4 * static_cast<std::size_t>(a + 1), static_cast<float>(spacing[a]));
  put(nifti::kVoxOffset, 352.0f);
  put(nifti::kSclSlope, 1.0f);
  put(nifti::kSclInter, 0.0f);
  out[nifti::kXyztUnits] = 2;  // millimeters

  // qform: rotation part of the affine (columns normalized), handedness in qfac.
  Mat3 r = frame.linear();
  for (int c = 0; c < 3; ++c) r.col(c) /= spacing[c];
  if (det < 0) r.col(2) *= -1.0;
  const bool orthonormal = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-5;
  if (orthonormal) {
    Eigen::Quaterniond q(r);
    if (q.w() < 0) q.coeffs() *= -1.0;
    put(nifti::kQformCode, std::int16_t{1});
    put(nifti::kQuatern, static_cast<float>(q.x()));
    put(nifti::kQuatern + 4, static_cast<float>(q.y()));
    put(nifti::kQuatern + 8, static_cast<float>(q.z()));
    for (int a = 0; a < 3; ++a) put(nifti::kQuatern + 12 + 4 * static_cast<std::size_t>(a), static_cast<float>(m(a, 3)));
  }
  put(nifti::kSformCode, std::int16_t{1});
  for (int row = 0; row < 3; ++row) {
    for (int c = 0; c < 4; ++c) {
      put(nifti::kSrow + 16 * static_cast<std::size_t>(row) + 4 * static_cast<std::size_t>(c), static_cast<float>(m(row, c)));
    }
  }
  std::memcpy(out.data() + nifti::kMagic, "n+1\0", 4);

  const std::size_t header = out.size();
  out.resize(header + vol.voxel_count() * static_cast<std::size_t>(bpv));
  std::size_t off = header;
  for (Label l : vol.labels()) {
    if (narrow) {
      put(off, static_cast<std::uint16_t>(l));
    } else {
      put(off, static_cast<std::uint32_t>(l));
    }
    off += static_cast<std::size_t>(bpv);
  }

  if (detail::ends_with(path, ".gz")) {
    detail::GzFile f(gzopen(path.c_str(), "wb6"));
    if (!f.f) fail(ErrorCode::IoError, "cannot write " + path);
    std::size_t done = 0;
    while (done < out.size()) {
      const auto chunk = static_cast<unsigned>(std::min<std::size_t>(out.size() - done, 1u << 20));
      if (gzwrite(f.f, out.data() + done, chunk) != static_cast<int>(chunk)) fail(ErrorCode::IoError, "write failed: " + path);
      done += chunk;
    }
  } else {
    std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!f) fail(ErrorCode::IoError, "cannot write " + path);
    if (std::fwrite(out.data(), 1, out.size(), f.get()) != out.size()) fail(ErrorCode::IoError, "write failed: " + path);
  }
}

}  // namespace spinepoi::io
