#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <memory>
#include <vector>

#include "segdiff/datagen.hpp"
#include "segdiff/errors.hpp"

namespace segdiff {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

// libpng reports errors through longjmp, so nothing with a destructor may be
// created between setjmp and the last libpng call in these two functions.
bool write_rows(std::FILE* fp, int width, int height, int color_type, int bit_depth,
                png_bytep* rows) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

struct Decoded {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<unsigned char> bytes;
  std::vector<png_bytep> rows;
};

enum class Target { Labels, Rgb8 };

bool read_rows(std::FILE* fp, Target target, Decoded* out) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  if (target == Target::Rgb8) {
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_set_strip_16(png);
  } else {
    if (color != PNG_COLOR_TYPE_GRAY) png_error(png, "label maps must be single-channel gray");
    png_set_expand_gray_1_2_4_to_8(png);
  }
  png_read_update_info(png, info);
  out->width = static_cast<int>(png_get_image_width(png, info));
  out->height = static_cast<int>(png_get_image_height(png, info));
  out->channels = png_get_channels(png, info);
  out->bit_depth = png_get_bit_depth(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  out->bytes.resize(stride * static_cast<std::size_t>(out->height));
  out->rows.resize(static_cast<std::size_t>(out->height));
  for (int r = 0; r < out->height; ++r) out->rows[static_cast<std::size_t>(r)] = out->bytes.data() + stride * r;
  png_read_image(png, out->rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

File open(const std::filesystem::path& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

}  // namespace

void save_labelmap(const std::filesystem::path& path, const LabelMap& labels) {
  const int h = labels.height(), w = labels.width();
  std::vector<unsigned char> bytes(static_cast<std::size_t>(h) * w * 2);
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const std::int32_t v = labels[k];
    if (v < 0 || v > 65535) {
      throw ValidationError("label " + std::to_string(v) + " does not fit a 16-bit PNG");
    }
    bytes[2 * k] = static_cast<unsigned char>(v >> 8);
    bytes[2 * k + 1] = static_cast<unsigned char>(v & 0xff);
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int r = 0; r < h; ++r) rows[static_cast<std::size_t>(r)] = bytes.data() + static_cast<std::size_t>(r) * w * 2;
  File f = open(path, "wb");
  if (!write_rows(f.get(), w, h, PNG_COLOR_TYPE_GRAY, 16, rows.data())) {
    throw IoError("failed to encode " + path.string());
  }
  if (std::fflush(f.get()) != 0) throw IoError("failed to write " + path.string());
}

LabelMap load_labelmap(const std::filesystem::path& path) {
  File f = open(path, "rb");
  Decoded d;
  if (!read_rows(f.get(), Target::Labels, &d)) throw IoError("failed to decode label map " + path.string());
  LabelMap out(d.height, d.width);
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k] = d.bit_depth == 16 ? (d.bytes[2 * k] << 8) | d.bytes[2 * k + 1] : d.bytes[k];
  }
  return out;
}

void save_image(const std::filesystem::path& path, const Tensor<float>& image, int index) {
  if (image.channels() != 3) throw ValidationError("save_image expects 3 channels");
  if (index < 0 || index >= image.n()) throw ValidationError("save_image index out of range");
  const int h = image.height(), w = image.width();
  std::vector<unsigned char> bytes(static_cast<std::size_t>(h) * w * 3);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      for (int ch = 0; ch < 3; ++ch) {
        bytes[(static_cast<std::size_t>(r) * w + c) * 3 + ch] = to_byte(image.at(index, ch, r, c));
      }
    }
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int r = 0; r < h; ++r) rows[static_cast<std::size_t>(r)] = bytes.data() + static_cast<std::size_t>(r) * w * 3;
  File f = open(path, "wb");
  if (!write_rows(f.get(), w, h, PNG_COLOR_TYPE_RGB, 8, rows.data())) {
    throw IoError("failed to encode " + path.string());
  }
  if (std::fflush(f.get()) != 0) throw IoError("failed to write " + path.string());
}

Tensor<float> load_image(const std::filesystem::path& path) {
  File f = open(path, "rb");
  Decoded d;
  if (!read_rows(f.get(), Target::Rgb8, &d)) throw IoError("failed to decode image " + path.string());
  Tensor<float> out(1, 3, d.height, d.width);
  for (int r = 0; r < d.height; ++r) {
    for (int c = 0; c < d.width; ++c) {
      for (int ch = 0; ch < 3; ++ch) {
        out.at(0, ch, r, c) = from_byte(d.bytes[(static_cast<std::size_t>(r) * d.width + c) * 3 + ch]);
      }
    }
  }
  return out;
}

}  // namespace segdiff
