// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

#include "attrsyn/digest.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdio>

#include "attrsyn/error.hpp"

namespace attrsyn {
namespace {

std::array<unsigned char, 32> sha256(std::string_view data) {
  std::array<unsigned char, 32> out{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != out.size()) {
    throw Error("sha256: digest computation failed");
  }
  return out;
}

}  // namespace

std::string sha256_hex(std::string_view data) {
  static constexpr char kHex[] = "0123456789abcdef";
  const auto bytes = sha256(data);
  std::string hex;
  hex.reserve(bytes.size() * 2);
  for (unsigned char b : bytes) {
    hex.push_back(kHex[b >> 4]);
    hex.push_back(kHex[b & 0xf]);
  }
  return hex;
}

std::uint64_t hash64(std::string_view data) {
  const auto bytes = sha256(data);
  std::uint64_t h = 0;
  for (int i = 0; i < 8; ++i) {
    h = (h << 8) | bytes[i];
  }
  return h;
}

}  // namespace attrsyn
