#include "pvs/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>

namespace pvs::nifti {
namespace {

constexpr std::size_t kHeaderSize = 348;
constexpr std::size_t kDataOffset = 352;

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  // gzread passes uncompressed files through untouched, so both .nii and
  // .nii.gz go through the same reader.
  gzFile f = gzopen(path.c_str(), "rb");
  if (f == nullptr) {
    throw std::runtime_error("cannot open " + path.string());
  }
  std::unique_ptr<gzFile_s, decltype(&gzclose)> guard(f, &gzclose);
  std::vector<std::uint8_t> buf;
  std::array<std::uint8_t, 1 << 16> chunk{};
  while (true) {
    int n = gzread(f, chunk.data(), static_cast<unsigned>(chunk.size()));
    if (n < 0) {
      throw FormatError("read error (corrupt gzip stream?) in " +
                        path.string());
    }
    if (n == 0) break;
    buf.insert(buf.end(), chunk.begin(), chunk.begin() + n);
  }
  return buf;
}

template <typename T>
T load(const std::uint8_t* p, bool swapped) {
  std::array<std::uint8_t, sizeof(T)> b{};
  std::memcpy(b.data(), p, sizeof(T));
  if (swapped) std::reverse(b.begin(), b.end());
  return std::bit_cast<T>(b);
}

template <typename T>
void store(std::uint8_t* p, T v) {
  std::memcpy(p, &v, sizeof(T));
}

std::size_t bytes_per_voxel(DataType t) {
  switch (t) {
    case DataType::kUint8:
      return 1;
    case DataType::kInt16:
      return 2;
    case DataType::kInt32:
    case DataType::kFloat32:
      return 4;
    case DataType::kFloat64:
      return 8;
  }
  return 0;
}

bool is_integer(DataType t) {
  return t == DataType::kUint8 || t == DataType::kInt16 ||
         t == DataType::kInt32;
}

Header parse_header(const std::vector<std::uint8_t>& buf,
                    const std::string& name) {
  if (buf.size() < kHeaderSize) {
    throw FormatError(name + ": file shorter than a NIfTI-1 header");
  }
  const std::uint8_t* h = buf.data();
  Header hdr;
  std::int32_t sizeof_hdr = load<std::int32_t>(h, false);
  if (sizeof_hdr != 348) {
    if (load<std::int32_t>(h, true) == 348) {
      hdr.swapped = true;
    } else {
      throw FormatError(name + ": sizeof_hdr is not 348");
    }
  }
  if (std::memcmp(h + 344, "n+1\0", 4) != 0) {
    throw FormatError(name + ": bad magic (expected single-file \"n+1\")");
  }
  const bool sw = hdr.swapped;

  std::array<std::int16_t, 8> dim{};
  for (int i = 0; i < 8; ++i) dim[i] = load<std::int16_t>(h + 40 + 2 * i, sw);
  if (dim[0] < 1 || dim[0] > 7) {
    throw FormatError(name + ": dim[0] out of range");
  }
  for (int i = 4; i <= dim[0]; ++i) {
    if (dim[i] > 1) {
      throw FormatError(name + ": only 3D images are supported");
    }
  }
  for (int a = 0; a < 3; ++a) {
    std::int16_t d = (a + 1 <= dim[0]) ? dim[a + 1] : 1;
    if (d < 1) throw FormatError(name + ": non-positive dimension");
    hdr.grid.dims[a] = d;
    double px = load<float>(h + 76 + 4 * (a + 1), sw);
    if (!(px > 0.0) || !std::isfinite(px)) {
      throw FormatError(name + ": non-positive pixdim");
    }
    hdr.grid.spacing[a] = px;
  }

  std::int16_t dt = load<std::int16_t>(h + 70, sw);
  switch (dt) {
    case 2:
    case 4:
    case 8:
    case 16:
    case 64:
      hdr.datatype = static_cast<DataType>(dt);
      break;
    default:
      throw FormatError(name + ": unsupported datatype " + std::to_string(dt));
  }
  hdr.bitpix = load<std::int16_t>(h + 72, sw);
  if (static_cast<std::size_t>(hdr.bitpix) !=
      8 * bytes_per_voxel(hdr.datatype)) {
    throw FormatError(name + ": bitpix inconsistent with datatype");
  }
  hdr.vox_offset = load<float>(h + 108, sw);
  hdr.scl_slope = load<float>(h + 112, sw);
  hdr.scl_inter = load<float>(h + 116, sw);
  if (!std::isfinite(hdr.scl_slope)) hdr.scl_slope = 0.0;
  if (!std::isfinite(hdr.scl_inter)) hdr.scl_inter = 0.0;

  std::int16_t sform_code = load<std::int16_t>(h + 254, sw);
  if (sform_code > 0) {
    Affine a{};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) {
        a[4 * r + c] = load<float>(h + 280 + 16 * r + 4 * c, sw);
      }
    }
    a[15] = 1.0;
    hdr.grid.affine = a;
  } else {
    hdr.grid.affine = Grid::diagonal_affine(hdr.grid.spacing);
  }
  return hdr;
}

struct Raw {
  Header header;
  std::vector<std::uint8_t> bytes;
};

Raw read_raw(const std::filesystem::path& path) {
  Raw raw;
  raw.bytes = slurp(path);
  raw.header = parse_header(raw.bytes, path.string());
  const auto& hdr = raw.header;
  if (hdr.vox_offset < kHeaderSize) {
    throw FormatError(path.string() + ": vox_offset inside the header");
  }
  std::size_t need = static_cast<std::size_t>(hdr.vox_offset) +
                     hdr.grid.voxels() * bytes_per_voxel(hdr.datatype);
  if (raw.bytes.size() < need) {
    throw FormatError(path.string() +
                      ": voxel payload shorter than dim implies");
  }
  return raw;
}

template <typename Fn>
void for_each_raw(const Raw& raw, Fn&& fn) {
  const auto& hdr = raw.header;
  const std::uint8_t* p =
      raw.bytes.data() + static_cast<std::size_t>(hdr.vox_offset);
  const std::size_t n = hdr.grid.voxels();
  const bool sw = hdr.swapped;
  for (std::size_t i = 0; i < n; ++i) {
    double v = 0.0;
    switch (hdr.datatype) {
      case DataType::kUint8:
        v = p[i];
        break;
      case DataType::kInt16:
        v = load<std::int16_t>(p + 2 * i, sw);
        break;
      case DataType::kInt32:
        v = load<std::int32_t>(p + 4 * i, sw);
        break;
      case DataType::kFloat32:
        v = load<float>(p + 4 * i, sw);
        break;
      case DataType::kFloat64:
        v = load<double>(p + 8 * i, sw);
        break;
    }
    fn(i, v);
  }
}

bool scaled(const Header& hdr) {
  return hdr.scl_slope != 0.0 &&
         !(hdr.scl_slope == 1.0 && hdr.scl_inter == 0.0);
}

Volume to_volume(const Raw& raw) {
  Volume vol;
  vol.grid = raw.header.grid;
  vol.data.resize(vol.grid.voxels());
  const double slope = raw.header.scl_slope;
  const double inter = raw.header.scl_inter;
  const bool apply = slope != 0.0;
  for_each_raw(raw, [&](std::size_t i, double v) {
    vol.data[i] = static_cast<float>(apply ? v * slope + inter : v);
  });
  validate_volume(vol);
  return vol;
}

template <typename T>
Image<T> to_integer_image(const Raw& raw, const std::string& name) {
  if (!is_integer(raw.header.datatype) || scaled(raw.header)) {
    throw FormatError(name + ": expected an unscaled integer datatype");
  }
  Image<T> img;
  img.grid = raw.header.grid;
  img.data.resize(img.grid.voxels());
  for_each_raw(raw, [&](std::size_t i, double v) {
    img.data[i] = static_cast<T>(v);
  });
  return img;
}

std::vector<std::uint8_t> make_header(const Grid& grid, DataType dt) {
  std::vector<std::uint8_t> h(kDataOffset, 0);
  store<std::int32_t>(h.data(), 348);
  std::array<std::int16_t, 8> dim{3, static_cast<std::int16_t>(grid.dims[0]),
                                  static_cast<std::int16_t>(grid.dims[1]),
                                  static_cast<std::int16_t>(grid.dims[2]),
                                  1, 1, 1, 1};
  for (int a = 0; a < 3; ++a) {
    if (grid.dims[a] > 32767) {
      throw std::invalid_argument("dimension too large for NIfTI-1");
    }
  }
  for (int i = 0; i < 8; ++i) store<std::int16_t>(h.data() + 40 + 2 * i, dim[i]);
  store<std::int16_t>(h.data() + 70, static_cast<std::int16_t>(dt));
  store<std::int16_t>(h.data() + 72,
                      static_cast<std::int16_t>(8 * bytes_per_voxel(dt)));
  std::array<float, 8> pixdim{1.0f,
                              static_cast<float>(grid.spacing[0]),
                              static_cast<float>(grid.spacing[1]),
                              static_cast<float>(grid.spacing[2]),
                              1.0f, 1.0f, 1.0f, 1.0f};
  for (int i = 0; i < 8; ++i) store<float>(h.data() + 76 + 4 * i, pixdim[i]);
  store<float>(h.data() + 108, static_cast<float>(kDataOffset));
  store<float>(h.data() + 112, 1.0f);
  store<float>(h.data() + 116, 0.0f);
  h[123] = 2;  // xyzt_units: millimetres
  store<std::int16_t>(h.data() + 252, 0);
  store<std::int16_t>(h.data() + 254, 1);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) {
      store<float>(h.data() + 280 + 16 * r + 4 * c,
                   static_cast<float>(grid.affine[4 * r + c]));
    }
  }
  std::memcpy(h.data() + 344, "n+1\0", 4);
  return h;
}

bool wants_gzip(const std::filesystem::path& path) {
  return path.extension() == ".gz";
}

void dump(const std::filesystem::path& path,
          const std::vector<std::uint8_t>& header, const void* payload,
          std::size_t payload_bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  if (wants_gzip(path)) {
    gzFile f = gzopen(path.c_str(), "wb6");
    if (f == nullptr) throw std::runtime_error("cannot write " + path.string());
    std::unique_ptr<gzFile_s, decltype(&gzclose)> guard(f, &gzclose);
    bool ok = gzwrite(f, header.data(), static_cast<unsigned>(header.size())) ==
              static_cast<int>(header.size());
    const auto* bytes = static_cast<const std::uint8_t*>(payload);
    std::size_t done = 0;
    while (ok && done < payload_bytes) {
      auto chunk = static_cast<unsigned>(
          std::min<std::size_t>(payload_bytes - done, 1u << 26));
      ok = gzwrite(f, bytes + done, chunk) == static_cast<int>(chunk);
      done += chunk;
    }
    if (!ok) throw std::runtime_error("write failed for " + path.string());
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(header.data()),
            static_cast<std::streamsize>(header.size()));
  out.write(static_cast<const char*>(payload),
            static_cast<std::streamsize>(payload_bytes));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace

Header read_header(const std::filesystem::path& path) {
  return read_raw(path).header;
}

AnyImage read(const std::filesystem::path& path) {
  Raw raw = read_raw(path);
  if (raw.header.datatype == DataType::kUint8 && !scaled(raw.header)) {
    LabelMap labels = to_integer_image<std::uint8_t>(raw, path.string());
    if (std::all_of(labels.data.begin(), labels.data.end(), label::is_valid)) {
      return labels;
    }
  }
  return to_volume(raw);
}

Volume read_volume(const std::filesystem::path& path) {
  return to_volume(read_raw(path));
}

LabelMap read_labels(const std::filesystem::path& path) {
  Raw raw = read_raw(path);
  auto wide = to_integer_image<std::int32_t>(raw, path.string());
  LabelMap labels;
  labels.grid = wide.grid;
  labels.data.resize(wide.data.size());
  for (std::size_t i = 0; i < wide.data.size(); ++i) {
    std::int32_t v = wide.data[i];
    if (v < 0 || v > 255 || !label::is_valid(static_cast<std::uint8_t>(v))) {
      throw FormatError(path.string() + ": invalid label value " +
                        std::to_string(v));
    }
    labels.data[i] = static_cast<std::uint8_t>(v);
  }
  return labels;
}

Parcellation read_parcellation(const std::filesystem::path& path) {
  return to_integer_image<std::int32_t>(read_raw(path), path.string());
}

void write(const Volume& vol, const std::filesystem::path& path) {
  validate_volume(vol);
  static_assert(std::endian::native == std::endian::little);
  dump(path, make_header(vol.grid, DataType::kFloat32), vol.data.data(),
       vol.data.size() * sizeof(float));
}

void write(const LabelMap& labels, const std::filesystem::path& path) {
  validate_labels(labels);
  dump(path, make_header(labels.grid, DataType::kUint8), labels.data.data(),
       labels.data.size());
}

void write(const Parcellation& parc, const std::filesystem::path& path) {
  dump(path, make_header(parc.grid, DataType::kInt32), parc.data.data(),
       parc.data.size() * sizeof(std::int32_t));
}

}  // namespace pvs::nifti
