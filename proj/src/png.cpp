// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

#include "attrsyn/png.hpp"

#include <zlib.h>

#include <array>
#include <cstdlib>
#include <cstring>

#include "attrsyn/error.hpp"

namespace attrsyn {
namespace {

constexpr std::array<std::uint8_t, 8> kSignature{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

void put_chunk(std::vector<std::uint8_t>& out, const char type[5], std::span<const std::uint8_t> data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const auto crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

int color_type_for(int channels) {
  switch (channels) {
    case 1: return 0;
    case 3: return 2;
    case 4: return 6;
    default: throw PreconditionError("unsupported channel count: " + std::to_string(channels));
  }
}

int channels_for(int color_type) {
  switch (color_type) {
    case 0: return 1;
    case 2: return 3;
    case 4: return 2;
    case 6: return 4;
    default: throw ParseError("unsupported PNG color type " + std::to_string(color_type));
  }
}

std::uint8_t paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a);
  const int pb = std::abs(p - b);
  const int pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
  if (pb <= pc) return static_cast<std::uint8_t>(b);
  return static_cast<std::uint8_t>(c);
}

}  // namespace

bool is_png(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= kSignature.size() && std::equal(kSignature.begin(), kSignature.end(), bytes.begin());
}

std::vector<std::uint8_t> encode_png(const PngImage& image) {
  if (image.width <= 0 || image.height <= 0) throw PreconditionError("image dimensions must be positive");
  const int color_type = color_type_for(image.channels);
  const std::size_t stride = static_cast<std::size_t>(image.width) * static_cast<std::size_t>(image.channels);
  if (image.pixels.size() != stride * static_cast<std::size_t>(image.height)) {
    throw PreconditionError("pixel buffer size does not match dimensions");
  }

  std::vector<std::uint8_t> out(kSignature.begin(), kSignature.end());
  std::vector<std::uint8_t> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(image.width));
  put_u32(ihdr, static_cast<std::uint32_t>(image.height));
  ihdr.insert(ihdr.end(), {8, static_cast<std::uint8_t>(color_type), 0, 0, 0});
  put_chunk(out, "IHDR", ihdr);

  for (const auto& [key, value] : image.text) {
    if (key.empty() || key.size() > 79 || key.find('\0') != std::string::npos) {
      throw PreconditionError("invalid PNG text keyword: " + key);
    }
    std::vector<std::uint8_t> chunk(key.begin(), key.end());
    chunk.push_back(0);
    chunk.insert(chunk.end(), value.begin(), value.end());
    put_chunk(out, "tEXt", chunk);
  }

  std::vector<std::uint8_t> raw;
  raw.reserve((stride + 1) * static_cast<std::size_t>(image.height));
  for (int y = 0; y < image.height; ++y) {
    raw.push_back(0);
    const auto* row = image.pixels.data() + static_cast<std::size_t>(y) * stride;
    raw.insert(raw.end(), row, row + stride);
  }
  uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> packed(packed_size);
  if (compress2(packed.data(), &packed_size, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
    throw Error("zlib compression failed");
  }
  packed.resize(packed_size);
  put_chunk(out, "IDAT", packed);
  put_chunk(out, "IEND", {});
  return out;
}

PngImage decode_png(std::span<const std::uint8_t> bytes) {
  if (!is_png(bytes)) throw ParseError("not a PNG file");
  PngImage image;
  int color_type = -1;
  std::vector<std::uint8_t> idat;
  bool seen_end = false;
  std::size_t pos = kSignature.size();
  while (pos < bytes.size() && !seen_end) {
    if (pos + 12 > bytes.size()) throw ParseError("truncated PNG chunk header");
    const std::uint32_t length = get_u32(bytes, pos);
    if (length > bytes.size() - pos - 12) throw ParseError("truncated PNG chunk");
    const std::string type(reinterpret_cast<const char*>(bytes.data() + pos + 4), 4);
    const auto data = bytes.subspan(pos + 8, length);
    const auto expected = get_u32(bytes, pos + 8 + length);
    const auto actual = crc32(0L, bytes.data() + pos + 4, static_cast<uInt>(length + 4));
    if (expected != static_cast<std::uint32_t>(actual)) throw ParseError("PNG CRC mismatch in " + type + " chunk");

    if (type == "IHDR") {
      if (length != 13) throw ParseError("bad IHDR length");
      image.width = static_cast<int>(get_u32(data, 0));
      image.height = static_cast<int>(get_u32(data, 4));
      if (data[8] != 8) throw ParseError("unsupported PNG bit depth " + std::to_string(data[8]));
      color_type = data[9];
      image.channels = channels_for(color_type);
      if (data[12] != 0) throw ParseError("interlaced PNG not supported");
      if (image.width <= 0 || image.height <= 0) throw ParseError("bad PNG dimensions");
    } else if (type == "IDAT") {
      idat.insert(idat.end(), data.begin(), data.end());
    } else if (type == "tEXt") {
      const auto* begin = reinterpret_cast<const char*>(data.data());
      const auto* nul = static_cast<const char*>(std::memchr(begin, 0, data.size()));
      if (nul == nullptr) throw ParseError("tEXt chunk without keyword separator");
      image.text[std::string(begin, nul)] = std::string(nul + 1, begin + data.size());
    } else if (type == "IEND") {
      seen_end = true;
    }
    pos += 12 + length;
  }
  if (color_type < 0) throw ParseError("PNG without IHDR");
  if (!seen_end) throw ParseError("PNG without IEND");

  const std::size_t bpp = static_cast<std::size_t>(image.channels);
  const std::size_t stride = static_cast<std::size_t>(image.width) * bpp;
  const std::size_t rows = static_cast<std::size_t>(image.height);
  std::vector<std::uint8_t> raw((stride + 1) * rows);
  uLongf raw_size = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_size, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      raw_size != raw.size()) {
    throw ParseError("corrupt PNG image data");
  }

  image.pixels.assign(stride * rows, 0);
  for (std::size_t y = 0; y < rows; ++y) {
    const std::uint8_t filter = raw[y * (stride + 1)];
    const std::uint8_t* src = raw.data() + y * (stride + 1) + 1;
    std::uint8_t* dst = image.pixels.data() + y * stride;
    const std::uint8_t* up = y > 0 ? dst - stride : nullptr;
    for (std::size_t x = 0; x < stride; ++x) {
      const int a = x >= bpp ? dst[x - bpp] : 0;
      const int b = up != nullptr ? up[x] : 0;
      const int c = (up != nullptr && x >= bpp) ? up[x - bpp] : 0;
      int predicted = 0;
      switch (filter) {
        case 0: predicted = 0; break;
        case 1: predicted = a; break;
        case 2: predicted = b; break;
        case 3: predicted = (a + b) / 2; break;
        case 4: predicted = paeth(a, b, c); break;
        default: throw ParseError("bad PNG filter type " + std::to_string(filter));
      }
      dst[x] = static_cast<std::uint8_t>(src[x] + predicted);
    }
  }
  return image;
}

}  // namespace attrsyn
