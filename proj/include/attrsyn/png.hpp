// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

// Minimal 8-bit PNG codec (gray, RGB, RGBA; all five row filters on decode,
// filter 0 on encode) with tEXt chunk support.

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace attrsyn {

struct PngImage {
  int width = 0;
  int height = 0;
  int channels = 3;  // 1, 3 or 4
  std::vector<std::uint8_t> pixels;  // row-major, interleaved
  std::map<std::string, std::string> text;
};

bool is_png(std::span<const std::uint8_t> bytes);

// Output is a pure function of the image, so equal images give equal bytes.
std::vector<std::uint8_t> encode_png(const PngImage& image);

// Throws ParseError on malformed input, bad CRCs, interlacing or bit depths
// other than 8.
PngImage decode_png(std::span<const std::uint8_t> bytes);

}  // namespace attrsyn
