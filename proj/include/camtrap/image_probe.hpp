#pragma once

// Reads image dimensions from JPEG and PNG headers without decoding pixels.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string_view>
#include <vector>

#include "camtrap/geometry.hpp"

namespace camtrap {

namespace detail {

inline std::uint32_t be16(std::string_view b, std::size_t at) {
  return (static_cast<std::uint32_t>(static_cast<unsigned char>(b[at])) << 8) |
         static_cast<unsigned char>(b[at + 1]);
}

inline std::uint32_t be32(std::string_view b, std::size_t at) {
  return (be16(b, at) << 16) | be16(b, at + 2);
}

}  // namespace detail

inline std::optional<ImageSize> probe_image_size(std::string_view bytes) {
  constexpr std::string_view kPng("\x89PNG\r\n\x1a\n", 8);
  if (bytes.size() >= 24 && bytes.substr(0, 8) == kPng && bytes.substr(12, 4) == "IHDR") {
    const auto w = detail::be32(bytes, 16);
    const auto h = detail::be32(bytes, 20);
    if (w == 0 || h == 0 || w > 1u << 30 || h > 1u << 30) return std::nullopt;
    return ImageSize{static_cast<int>(w), static_cast<int>(h)};
  }
  if (bytes.size() >= 4 && static_cast<unsigned char>(bytes[0]) == 0xFF &&
      static_cast<unsigned char>(bytes[1]) == 0xD8) {
    std::size_t pos = 2;
    while (pos + 4 <= bytes.size()) {
      if (static_cast<unsigned char>(bytes[pos]) != 0xFF) return std::nullopt;
      const auto marker = static_cast<unsigned char>(bytes[pos + 1]);
      if (marker == 0xFF) {  // fill byte
        ++pos;
        continue;
      }
      if (marker == 0x01 || (marker >= 0xD0 && marker <= 0xD7)) {
        pos += 2;
        continue;
      }
      if (marker == 0xD9 || marker == 0xDA) return std::nullopt;  // no frame header before scan
      const auto len = detail::be16(bytes, pos + 2);
      const bool sof = marker >= 0xC0 && marker <= 0xCF && marker != 0xC4 && marker != 0xC8 &&
                       marker != 0xCC;
      if (sof) {
        if (pos + 9 > bytes.size()) return std::nullopt;
        const auto h = detail::be16(bytes, pos + 5);
        const auto w = detail::be16(bytes, pos + 7);
        if (w == 0 || h == 0) return std::nullopt;
        return ImageSize{static_cast<int>(w), static_cast<int>(h)};
      }
      pos += 2 + len;
    }
  }
  return std::nullopt;
}

inline std::optional<ImageSize> probe_image_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  // Frame headers sit after EXIF/APPn segments, which can be large.
  std::vector<char> buf(1 << 20);
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  return probe_image_size(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())));
}

}  // namespace camtrap
