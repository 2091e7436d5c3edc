#include "scriptid/image.hpp"

#include <png.h>

#include <cctype>
#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include "scriptid/error.hpp"

namespace scriptid {

RawImage::RawImage(int h, int w, int c, std::uint8_t fill)
    : height(h), width(w), channels(c), data(static_cast<size_t>(h) * w * c, fill) {}

bool RawImage::valid() const {
  return height >= 1 && width >= 1 && channels >= 1 &&
         data.size() == static_cast<size_t>(height) * width * channels;
}

RawImage convert_channels(const RawImage& img, int channels) {
  if (channels != 1 && channels != 3) throw InvalidInput("channels must be 1 or 3");
  if (img.channels == channels) return img;
  RawImage out(img.height, img.width, channels);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (channels == 3) {
        const auto v = img.at(y, x, 0);
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = v;
      } else {
        const double luma = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
        out.at(y, x, 0) = static_cast<std::uint8_t>(std::lround(luma));
      }
    }
  }
  return out;
}

namespace {

std::string lower_ext(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return ext;
}

RawImage load_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  RawImage out(static_cast<int>(image.height), static_cast<int>(image.width), 3);
  if (!png_image_finish_read(&image, nullptr, out.data.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  return out;
}

void save_png(const RawImage& img, const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.data.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + image.message);
  }
}

// Next whitespace/comment separated token of a netpbm header.
std::string pnm_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

RawImage load_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const auto magic = pnm_token(in);
  const bool ascii = magic == "P2" || magic == "P3";
  const bool color = magic == "P3" || magic == "P6";
  if (magic != "P2" && magic != "P3" && magic != "P5" && magic != "P6") {
    throw IoError("unsupported netpbm type '" + magic + "' in " + path.string());
  }
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(pnm_token(in));
    h = std::stoi(pnm_token(in));
    maxval = std::stoi(pnm_token(in));
  } catch (const std::exception&) {
    throw IoError("malformed netpbm header in " + path.string());
  }
  if (w < 1 || h < 1 || maxval < 1 || maxval > 255) {
    throw IoError("unsupported netpbm geometry in " + path.string());
  }
  RawImage out(h, w, color ? 3 : 1);
  if (ascii) {
    for (auto& v : out.data) {
      int value = 0;
      if (!(in >> value)) throw IoError("truncated netpbm data in " + path.string());
      v = static_cast<std::uint8_t>(value * 255 / maxval);
    }
  } else {
    in.read(reinterpret_cast<char*>(out.data.data()), static_cast<std::streamsize>(out.data.size()));
    if (in.gcount() != static_cast<std::streamsize>(out.data.size())) {
      throw IoError("truncated netpbm data in " + path.string());
    }
    if (maxval != 255) {
      for (auto& v : out.data) v = static_cast<std::uint8_t>(v * 255 / maxval);
    }
  }
  return out;
}

void save_pnm(const RawImage& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace

RawImage load_image(const std::filesystem::path& path, int channels) {
  if (!std::filesystem::exists(path)) throw IoError("image not found: " + path.string());
  const auto ext = lower_ext(path);
  RawImage img = ext == ".png" ? load_png(path) : load_pnm(path);
  if (!img.valid()) throw InvalidInput("zero-dimension image: " + path.string());
  return convert_channels(img, channels);
}

void save_image(const RawImage& img, const std::filesystem::path& path) {
  if (!img.valid()) throw InvalidInput("cannot save an invalid image");
  const auto ext = lower_ext(path);
  if (ext == ".png") {
    save_png(img.channels == 1 || img.channels == 3 ? img : convert_channels(img, 3), path);
  } else if (ext == ".pgm") {
    save_pnm(convert_channels(img, 1), path);
  } else if (ext == ".ppm") {
    save_pnm(convert_channels(img, 3), path);
  } else {
    throw IoError("unsupported image extension: " + path.string());
  }
}

}  // namespace scriptid
