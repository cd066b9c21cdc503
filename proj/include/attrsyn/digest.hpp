// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace attrsyn {

// Lowercase hex SHA-256 of the input bytes.
std::string sha256_hex(std::string_view data);

// First 8 bytes of SHA-256, big-endian. Stable across platforms.
std::uint64_t hash64(std::string_view data);

}  // namespace attrsyn
