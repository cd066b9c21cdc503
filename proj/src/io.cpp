// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

#include "attrsyn/io.hpp"

#include <fstream>
#include <iterator>
#include <system_error>

#include "attrsyn/error.hpp"

namespace fs = std::filesystem;

namespace attrsyn {

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return content;
}

std::vector<std::uint8_t> read_binary_file(const fs::path& path) {
  const std::string text = read_text_file(path);
  return {text.begin(), text.end()};
}

void write_file_atomic(const fs::path& path, std::string_view content) {
  std::error_code ec;
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw IoError("write failed (disk full?): " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> content) {
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(content.data()), content.size()));
}

}  // namespace attrsyn
