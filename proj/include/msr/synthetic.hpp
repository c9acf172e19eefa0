#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace msr::synthetic {

struct FixtureSpec {
  std::size_t users = 20;
  std::size_t items = 60;
  std::size_t min_len = 6;
  std::size_t max_len = 12;
  std::uint64_t seed = 1;
  bool images = true;
};

/// Solid-color RGB PNG; valid enough for any decoder.
std::vector<std::uint8_t> make_png(std::uint32_t width, std::uint32_t height, std::uint8_t r,
                                   std::uint8_t g, std::uint8_t b);

/// Writes interactions.jsonl, items.jsonl, images/*.png and a mock-backed
/// config.yaml into `dir`. Every user gets a distinct timestamped sequence.
void write_fixture(const std::filesystem::path& dir, const FixtureSpec& spec);

}  // namespace msr::synthetic
