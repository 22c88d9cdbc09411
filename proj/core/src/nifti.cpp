#include "dcseg/nifti.hpp"

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <vector>

#include "dcseg/common.hpp"

namespace dcseg {
namespace {

// NIfTI-1 datatype codes.
constexpr int16_t kDtUint8 = 2;
constexpr int16_t kDtInt16 = 4;
constexpr int16_t kDtInt32 = 8;
constexpr int16_t kDtFloat32 = 16;
constexpr int16_t kDtFloat64 = 64;
constexpr int16_t kDtUint16 = 512;

#pragma pack(push, 1)
struct NiftiHeader {
  int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  int32_t extents;
  int16_t session_error;
  char regular;
  char dim_info;
  int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  int16_t intent_code;
  int16_t datatype;
  int16_t bitpix;
  int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(NiftiHeader) == 348, "NIfTI-1 header must be 348 bytes");

// gzFile handles plain files transparently on read.
struct GzReader {
  gzFile f = nullptr;
  explicit GzReader(const std::filesystem::path& path) {
    f = gzopen(path.string().c_str(), "rb");
    DCSEG_CHECK_IO(f != nullptr, "cannot open ", path.string());
  }
  ~GzReader() {
    if (f) gzclose(f);
  }
  void read(void* dst, size_t n, const std::filesystem::path& path) {
    int got = gzread(f, dst, static_cast<unsigned>(n));
    DCSEG_CHECK_IO(got == static_cast<int>(n), "truncated NIfTI file: ", path.string());
  }
};

template <typename T>
torch::Tensor raw_to_tensor(const std::vector<char>& raw, int64_t nvox, torch::Dtype out_dtype) {
  const T* src = reinterpret_cast<const T*>(raw.data());
  torch::Tensor t = torch::empty({nvox}, out_dtype);
  if (out_dtype == torch::kFloat32) {
    float* dst = t.data_ptr<float>();
    for (int64_t i = 0; i < nvox; ++i) dst[i] = static_cast<float>(src[i]);
  } else {
    int64_t* dst = t.data_ptr<int64_t>();
    for (int64_t i = 0; i < nvox; ++i) dst[i] = static_cast<int64_t>(src[i]);
  }
  return t;
}

}  // namespace

torch::Tensor read_nifti(const std::filesystem::path& path) {
  GzReader in(path);
  NiftiHeader hdr{};
  in.read(&hdr, sizeof(hdr), path);

  DCSEG_CHECK_IO(hdr.sizeof_hdr == 348,
                 "not a little-endian NIfTI-1 file (sizeof_hdr=", hdr.sizeof_hdr, "): ",
                 path.string());
  DCSEG_CHECK_IO(std::memcmp(hdr.magic, "n+1", 3) == 0,
                 "unsupported NIfTI magic (need single-file n+1): ", path.string());

  int ndim = hdr.dim[0];
  DCSEG_CHECK_IO(ndim >= 3 && ndim <= 4, "expected a 3D volume, got dim[0]=", ndim, ": ",
                 path.string());
  if (ndim == 4) {
    DCSEG_CHECK_IO(hdr.dim[4] <= 1, "multi-frame NIfTI not supported: ", path.string());
  }
  const int64_t nx = hdr.dim[1], ny = hdr.dim[2], nz = hdr.dim[3];
  DCSEG_CHECK_IO(nx >= 1 && ny >= 1 && nz >= 1, "degenerate dims in ", path.string());
  const int64_t nvox = nx * ny * nz;

  // Skip to the data offset.
  int64_t offset = static_cast<int64_t>(hdr.vox_offset);
  DCSEG_CHECK_IO(offset >= 348, "bad vox_offset ", offset, " in ", path.string());
  std::vector<char> skip(static_cast<size_t>(offset - 348));
  if (!skip.empty()) in.read(skip.data(), skip.size(), path);

  const int64_t elem_size = hdr.bitpix / 8;
  std::vector<char> raw(static_cast<size_t>(nvox * elem_size));
  in.read(raw.data(), raw.size(), path);

  torch::Tensor flat;
  switch (hdr.datatype) {
    case kDtUint8:
      flat = raw_to_tensor<uint8_t>(raw, nvox, torch::kInt64);
      break;
    case kDtInt16:
      flat = raw_to_tensor<int16_t>(raw, nvox, torch::kInt64);
      break;
    case kDtUint16:
      flat = raw_to_tensor<uint16_t>(raw, nvox, torch::kInt64);
      break;
    case kDtInt32:
      flat = raw_to_tensor<int32_t>(raw, nvox, torch::kInt64);
      break;
    case kDtFloat32:
      flat = raw_to_tensor<float>(raw, nvox, torch::kFloat32);
      break;
    case kDtFloat64:
      flat = raw_to_tensor<double>(raw, nvox, torch::kFloat32);
      break;
    default:
      throw IoError(detail::format_msg("unsupported NIfTI datatype ", hdr.datatype, ": ",
                                       path.string()));
  }

  // File order is x-fastest; expose as (z,y,x).
  torch::Tensor vol = flat.view({nz, ny, nx});

  const bool scaled = hdr.scl_slope != 0.f && (hdr.scl_slope != 1.f || hdr.scl_inter != 0.f);
  if (scaled) {
    vol = vol.to(torch::kFloat32) * hdr.scl_slope + hdr.scl_inter;
  }
  return vol;
}

void write_nifti(const std::filesystem::path& path, const torch::Tensor& volume) {
  DCSEG_CHECK(volume.dim() == 3, "write_nifti expects a (D,H,W) tensor, got dim=", volume.dim());

  const bool is_float = volume.is_floating_point();
  torch::Tensor data = is_float ? volume.to(torch::kFloat32).contiguous()
                                : volume.to(torch::kInt16).contiguous();

  NiftiHeader hdr{};
  hdr.sizeof_hdr = 348;
  hdr.regular = 'r';
  hdr.dim[0] = 3;
  hdr.dim[1] = static_cast<int16_t>(volume.size(2));  // x fastest
  hdr.dim[2] = static_cast<int16_t>(volume.size(1));
  hdr.dim[3] = static_cast<int16_t>(volume.size(0));
  for (int i = 4; i < 8; ++i) hdr.dim[i] = 1;
  hdr.datatype = is_float ? kDtFloat32 : kDtInt16;
  hdr.bitpix = is_float ? 32 : 16;
  for (int i = 0; i < 8; ++i) hdr.pixdim[i] = 1.f;
  hdr.vox_offset = 352.f;
  hdr.scl_slope = 1.f;
  hdr.scl_inter = 0.f;
  hdr.xyzt_units = 2;  // mm
  hdr.sform_code = 1;
  hdr.srow_x[0] = 1.f;
  hdr.srow_y[1] = 1.f;
  hdr.srow_z[2] = 1.f;
  std::memcpy(hdr.magic, "n+1", 4);

  const char ext[4] = {0, 0, 0, 0};
  const int64_t nbytes = data.numel() * (is_float ? 4 : 2);

  if (path.extension() == ".gz") {
    gzFile f = gzopen(path.string().c_str(), "wb");
    DCSEG_CHECK_IO(f != nullptr, "cannot open for writing: ", path.string());
    bool ok = gzwrite(f, &hdr, sizeof(hdr)) == static_cast<int>(sizeof(hdr)) &&
              gzwrite(f, ext, sizeof(ext)) == static_cast<int>(sizeof(ext)) &&
              gzwrite(f, data.data_ptr(), static_cast<unsigned>(nbytes)) ==
                  static_cast<int>(nbytes);
    ok = gzclose(f) == Z_OK && ok;
    DCSEG_CHECK_IO(ok, "failed writing ", path.string());
  } else {
    FILE* f = std::fopen(path.string().c_str(), "wb");
    DCSEG_CHECK_IO(f != nullptr, "cannot open for writing: ", path.string());
    bool ok = std::fwrite(&hdr, sizeof(hdr), 1, f) == 1 &&
              std::fwrite(ext, sizeof(ext), 1, f) == 1 &&
              std::fwrite(data.data_ptr(), 1, static_cast<size_t>(nbytes), f) ==
                  static_cast<size_t>(nbytes);
    ok = std::fclose(f) == 0 && ok;
    DCSEG_CHECK_IO(ok, "failed writing ", path.string());
  }
}

}  // namespace dcseg
