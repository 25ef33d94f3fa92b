#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ccl/data.hpp"

namespace ccl {

namespace {

struct ReadCursor {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
};

void png_read_span(png_structp png, png_bytep out, png_size_t n) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + n > cur->bytes.size()) png_error(png, "truncated PNG stream");
  std::memcpy(out, cur->bytes.data() + cur->pos, n);
  cur->pos += n;
}

void png_write_string(png_structp png, png_bytep data, png_size_t n) {
  static_cast<std::string*>(png_get_io_ptr(png))->append(reinterpret_cast<const char*>(data), n);
}

void png_flush_noop(png_structp) {}

[[noreturn]] void png_throw(png_structp png, png_const_charp msg) {
  *static_cast<std::string*>(png_get_error_ptr(png)) = msg;
  png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

Image8 decode_png(std::span<const std::uint8_t> bytes) {
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_throw, png_warn);
  if (!png) throw FormatError("cannot allocate PNG decoder");
  png_infop info = png_create_info_struct(png);
  ReadCursor cur{bytes};
  Image8 img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("PNG decode failed: " + err);
  }
  png_set_read_fn(png, &cur, png_read_span);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_packing(png);
  png_set_expand(png);
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  png_read_update_info(png, info);
  img.w = png_get_image_width(png, info);
  img.h = png_get_image_height(png, info);
  img.c = png_get_channels(png, info);
  if (img.c != 1 && img.c != 3) png_error(png, "unsupported channel layout");
  img.pixels.resize(img.h * img.w * img.c);
  rows.resize(img.h);
  for (std::size_t y = 0; y < img.h; ++y) rows[y] = img.pixels.data() + y * img.w * img.c;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

// Binary P5/P6 with maxval 255; '#' comments allowed in the header.
Image8 decode_pnm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 2;
  auto next_int = [&]() -> std::size_t {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw FormatError("malformed PNM header");
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) v = v * 10 + (bytes[pos++] - '0');
    return v;
  };
  Image8 img;
  img.c = bytes[1] == '6' ? 3 : 1;
  img.w = next_int();
  img.h = next_int();
  if (next_int() != 255) throw FormatError("only 8-bit PNM (maxval 255) is supported");
  ++pos;
  const std::size_t n = img.h * img.w * img.c;
  if (img.w == 0 || img.h == 0 || pos + n > bytes.size()) throw FormatError("truncated PNM data");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return img;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

void check_image(const Image8& img) {
  if ((img.c != 1 && img.c != 3) || img.pixels.size() != img.h * img.w * img.c || img.h == 0 || img.w == 0) {
    throw InvalidArgument("image buffer does not match its " + std::to_string(img.h) + "x" +
                          std::to_string(img.w) + "x" + std::to_string(img.c) + " geometry");
  }
}

}  // namespace

Image8 decode_image(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::equal(kPngSig, kPngSig + 8, bytes.begin())) return decode_png(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6')) return decode_pnm(bytes);
  throw FormatError("unrecognized image codec");
}

Image8 read_image(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  try {
    return decode_image(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_png(const std::filesystem::path& path, const Image8& img) {
  check_image(img);
  std::string err, buf;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_throw, png_warn);
  if (!png) throw IoError("cannot allocate PNG encoder");
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows(img.h);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encode failed: " + err);
  }
  png_set_write_fn(png, &buf, png_write_string, png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
               img.c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < img.h; ++y) {
    rows[y] = const_cast<png_bytep>(img.pixels.data() + y * img.w * img.c);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  write_bytes(path, buf);
}

void write_pnm(const std::filesystem::path& path, const Image8& img) {
  check_image(img);
  std::string buf = (img.c == 3 ? "P6\n" : "P5\n") + std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n";
  buf.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  write_bytes(path, buf);
}

void write_image(const std::filesystem::path& path, const Image8& img) {
  const auto ext = path.extension().string();
  if (ext == ".png") {
    write_png(path, img);
  } else if (ext == ".ppm" || ext == ".pgm") {
    Image8 out = img;
    if (ext == ".pgm" && img.c == 3) {
      out.c = 1;
      out.pixels.resize(img.h * img.w);
      for (std::size_t i = 0; i < out.pixels.size(); ++i) {
        const int sum = img.pixels[3 * i] + img.pixels[3 * i + 1] + img.pixels[3 * i + 2];
        out.pixels[i] = static_cast<std::uint8_t>((sum + 1) / 3);
      }
    }
    write_pnm(path, out);
  } else {
    throw InvalidArgument("unsupported image extension '" + ext + "'");
  }
}

Image8 resize_bilinear(const Image8& img, std::size_t h, std::size_t w) {
  check_image(img);
  if (h == 0 || w == 0) throw InvalidArgument("resize target has zero extent");
  if (img.h == h && img.w == w) return img;
  Image8 out{h, w, img.c, std::vector<std::uint8_t>(h * w * img.c)};
  auto coord = [](std::size_t dst, std::size_t n_src, std::size_t n_dst, std::size_t& i0, std::size_t& i1,
                  double& f) {
    double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(n_src) / static_cast<double>(n_dst) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(n_src - 1));
    i0 = static_cast<std::size_t>(s);
    i1 = std::min(i0 + 1, n_src - 1);
    f = s - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < h; ++y) {
    std::size_t y0, y1;
    double fy;
    coord(y, img.h, h, y0, y1, fy);
    for (std::size_t x = 0; x < w; ++x) {
      std::size_t x0, x1;
      double fx;
      coord(x, img.w, w, x0, x1, fx);
      for (std::size_t c = 0; c < img.c; ++c) {
        const double top = img.at(y0, x0, c) * (1 - fx) + img.at(y0, x1, c) * fx;
        const double bot = img.at(y1, x0, c) * (1 - fx) + img.at(y1, x1, c) * fx;
        out.pixels[(y * w + x) * img.c + c] = static_cast<std::uint8_t>(std::lround(top * (1 - fy) + bot * fy));
      }
    }
  }
  return out;
}

Tensor normalize(const Image8& img) {
  check_image(img);
  Tensor t({img.h, img.w, 3});
  for (std::size_t p = 0; p < img.h * img.w; ++p) {
    for (std::size_t c = 0; c < 3; ++c) t[p * 3 + c] = normalize_pixel(img.pixels[p * img.c + (img.c == 3 ? c : 0)]);
  }
  return t;
}

Image8 to_image8(const Tensor& image) {
  if (image.rank() != 3) throw ShapeError("expected an H x W x C image, got " + shape_string(image.shape()));
  Image8 img{image.dim(0), image.dim(1), image.dim(2), std::vector<std::uint8_t>(image.size())};
  for (std::size_t i = 0; i < image.size(); ++i) img.pixels[i] = denormalize_pixel(image[i]);
  return img;
}

}  // namespace ccl
