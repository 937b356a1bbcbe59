#include "echoslice/image_io.hpp"

#include <csetjmp>
#include <cstring>

#include <openssl/evp.h>
#include <png.h>

#include "echoslice/error.hpp"

namespace echoslice {
namespace {

// libpng reports errors by longjmp; the message is parked here and turned
// into an exception once control is back in C++ frames.
thread_local std::string g_png_error;

[[noreturn]] void png_fail(png_structp png, png_const_charp message) {
  g_png_error = message ? message : "unknown";
  std::longjmp(png_jmpbuf(png), 1);
}

void png_warn(png_structp, png_const_charp) {}

void append_bytes(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void flush_nothing(png_structp) {}

struct ReadCursor {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
};

void read_bytes(png_structp png, png_bytep data, png_size_t length) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (length > cur->bytes.size() - cur->pos) png_error(png, "truncated PNG");
  std::memcpy(data, cur->bytes.data() + cur->pos, length);
  cur->pos += length;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image8& image) {
  if (image.width == 0 || image.height == 0) throw input_error("cannot encode an empty image");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error(ErrorKind::internal, "libpng allocation failed");
  }
  std::vector<std::uint8_t> out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw input_error("PNG error: " + g_png_error);
  }
  {
    png_set_write_fn(png, &out, append_bytes, flush_nothing);
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
                 static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t r = 0; r < image.height; ++r) {
      png_write_row(png, const_cast<png_bytep>(image.pixels.data() + r * image.width));
    }
    png_write_end(png, nullptr);
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

Image8 decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw input_error("not a PNG image");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error(ErrorKind::internal, "libpng allocation failed");
  }
  ReadCursor cursor{bytes, 0};
  Image8 image;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw input_error("PNG error: " + g_png_error);
  }
  {
    png_set_read_fn(png, &cursor, read_bytes);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_packing(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_palette_to_rgb(png);
    const auto color = png_get_color_type(png, info);
    if (color & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    png_read_update_info(png, info);
    const auto width = png_get_image_width(png, info);
    const auto height = png_get_image_height(png, info);
    if (png_get_rowbytes(png, info) != width) png_error(png, "unexpected PNG row layout");
    if (static_cast<std::uint64_t>(width) * height > (std::uint64_t{1} << 28)) {
      png_error(png, "PNG too large");
    }
    image = Image8(width, height);
    for (std::size_t r = 0; r < image.height; ++r) {
      png_read_row(png, image.pixels.data() + r * image.width, nullptr);
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  std::string clean;
  clean.reserve(text.size());
  for (char ch : text) {
    if (ch != '\n' && ch != '\r') clean.push_back(ch);
  }
  if (clean.size() % 4 != 0) throw input_error("invalid base64 input");
  std::vector<std::uint8_t> out(clean.size() / 4 * 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(clean.data()),
                                static_cast<int>(clean.size()));
  if (n < 0) throw input_error("invalid base64 input");
  // EVP_DecodeBlock keeps the zero bytes that padding stands for.
  std::size_t pad = 0;
  if (!clean.empty() && clean.back() == '=') ++pad;
  if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

}  // namespace echoslice
