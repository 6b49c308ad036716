#include "blindsr/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "blindsr/common.hpp"

namespace blindsr {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

Tensor load_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  BSR_CHECK(fp != nullptr, "cannot open: " << path);
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  BSR_CHECK(png != nullptr, "libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png read error: " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  std::vector<png_byte> rowbuf(static_cast<size_t>(w) * 3);
  std::vector<double> data(static_cast<size_t>(3) * h * w);
  for (png_uint_32 i = 0; i < h; ++i) {
    png_read_row(png, rowbuf.data(), nullptr);
    for (png_uint_32 j = 0; j < w; ++j)
      for (int c = 0; c < 3; ++c)
        data[(static_cast<size_t>(c) * h + i) * w + j] =
            rowbuf[static_cast<size_t>(j) * 3 + c] / 255.0;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return Tensor::from_data({3, static_cast<int64_t>(h), static_cast<int64_t>(w)},
                           std::move(data));
}

void save_png(const std::string& path, const Tensor& img) {
  BSR_CHECK(img.rank() == 3 && img.extent(0) == 3,
            "save_png: image must be [3,h,w], got " << shape_str(img.shape()));
  int64_t h = img.extent(1), w = img.extent(2);
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  BSR_CHECK(fp != nullptr, "cannot open for writing: " << path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  BSR_CHECK(png != nullptr, "libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png write error: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h),
               8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  const double* d = img.data();
  std::vector<png_byte> row(static_cast<size_t>(w) * 3);
  for (int64_t i = 0; i < h; ++i) {
    for (int64_t j = 0; j < w; ++j)
      for (int c = 0; c < 3; ++c) {
        double v = d[(c * h + i) * w + j];
        v = std::clamp(v, 0.0, 1.0);
        row[static_cast<size_t>(j * 3 + c)] =
            static_cast<png_byte>(std::lround(v * 255.0));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream is(path);
  BSR_CHECK(is.is_open(), "cannot open manifest: " << path);
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    ManifestEntry e;
    std::string scale_s, sigma_s;
    BSR_CHECK(std::getline(ls, e.hr_path, '\t') &&
                  std::getline(ls, e.kernel_path, '\t') &&
                  std::getline(ls, scale_s, '\t') && std::getline(ls, sigma_s),
              "manifest " << path << ": malformed line " << lineno);
    e.scale = std::stoi(scale_s);
    e.noise_sigma = std::stod(sigma_s);
    out.push_back(std::move(e));
  }
  return out;
}

void write_manifest(const std::string& path,
                    const std::vector<ManifestEntry>& entries) {
  std::ofstream os(path, std::ios::trunc);
  BSR_CHECK(os.is_open(), "cannot open for writing: " << path);
  os.precision(17);
  for (const auto& e : entries)
    os << e.hr_path << '\t' << e.kernel_path << '\t' << e.scale << '\t'
       << e.noise_sigma << '\n';
}

}  // namespace blindsr
