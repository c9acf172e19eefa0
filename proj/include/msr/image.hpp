#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace msr::gateway {

struct ImagePayload {
  std::vector<std::uint8_t> bytes;
  std::string mime;          // e.g. "image/png"
  std::string content_hash;  // sha256 hex of bytes
};

/// Sniffs the container format and checks its trailer. Returns the mime
/// type, or an empty string when the bytes are not a complete image.
std::string sniff_image(const std::vector<std::uint8_t>& bytes);

/// Wraps raw bytes; throws ImageError (naming `owner`) on corrupt data.
ImagePayload make_image(std::vector<std::uint8_t> bytes, const std::string& owner);

/// Loads a local path or fetches an http(s) URL.
ImagePayload load_image(const std::string& ref, const std::string& owner);

}  // namespace msr::gateway
