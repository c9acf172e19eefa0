#include "msr/image.hpp"

#include <filesystem>

#include "httplib.h"
#include "msr/error.hpp"
#include "msr/util.hpp"

namespace msr::gateway {

namespace {

bool starts_with(const std::vector<std::uint8_t>& b, std::initializer_list<std::uint8_t> sig,
                 std::size_t offset = 0) {
  if (b.size() < offset + sig.size()) return false;
  std::size_t i = offset;
  for (auto s : sig)
    if (b[i++] != s) return false;
  return true;
}

std::uint32_t le32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return b[at] | (b[at + 1] << 8) | (b[at + 2] << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

}  // namespace

std::string sniff_image(const std::vector<std::uint8_t>& b) {
  if (starts_with(b, {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a})) {
    // IEND chunk: 4-byte length 0, "IEND", 4-byte CRC.
    if (b.size() >= 20 && starts_with(b, {'I', 'E', 'N', 'D'}, b.size() - 8)) return "image/png";
    return {};
  }
  if (starts_with(b, {0xff, 0xd8, 0xff})) {
    if (b.size() >= 4 && b[b.size() - 2] == 0xff && b[b.size() - 1] == 0xd9) return "image/jpeg";
    return {};
  }
  if (starts_with(b, {'G', 'I', 'F', '8'})) {
    if (b.size() > 13 && b.back() == 0x3b) return "image/gif";
    return {};
  }
  if (starts_with(b, {'R', 'I', 'F', 'F'}) && starts_with(b, {'W', 'E', 'B', 'P'}, 8)) {
    if (static_cast<std::size_t>(le32(b, 4)) + 8 == b.size()) return "image/webp";
    return {};
  }
  if (starts_with(b, {'B', 'M'}) && b.size() >= 26) {
    if (le32(b, 2) == b.size()) return "image/bmp";
    return {};
  }
  return {};
}

ImagePayload make_image(std::vector<std::uint8_t> bytes, const std::string& owner) {
  std::string mime = sniff_image(bytes);
  if (mime.empty()) throw ImageError("unreadable or corrupt image for item " + owner);
  ImagePayload img;
  img.content_hash = sha256_hex(std::span<const std::uint8_t>(bytes));
  img.mime = std::move(mime);
  img.bytes = std::move(bytes);
  return img;
}

ImagePayload load_image(const std::string& ref, const std::string& owner) {
  if (ref.starts_with("http://") || ref.starts_with("https://")) {
    auto scheme_end = ref.find("://") + 3;
    auto path_start = ref.find('/', scheme_end);
    std::string host = ref.substr(0, path_start);
    std::string path = path_start == std::string::npos ? "/" : ref.substr(path_start);
    httplib::Client client(host);
    client.set_follow_location(true);
    client.set_connection_timeout(10);
    client.set_read_timeout(30);
    auto res = client.Get(path);
    if (!res || res->status != 200)
      throw ImageError("cannot fetch image " + ref + " for item " + owner);
    return make_image(std::vector<std::uint8_t>(res->body.begin(), res->body.end()), owner);
  }
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_binary(ref);
  } catch (const DependencyError&) {
    throw ImageError("cannot read image " + ref + " for item " + owner);
  }
  return make_image(std::move(bytes), owner);
}

}  // namespace msr::gateway
