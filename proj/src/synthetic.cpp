#include "msr/synthetic.hpp"

#include <fmt/format.h>
#include <zlib.h>

#include <set>
#include <string>

#include "msr/error.hpp"
#include "msr/util.hpp"

namespace msr::synthetic {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

void put_chunk(std::vector<std::uint8_t>& out, const char* type, const std::vector<std::uint8_t>& data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uLong crc = crc32(0, out.data() + start, static_cast<uInt>(out.size() - start));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

const char* const kAdjectives[] = {"vintage", "compact", "bright",  "rugged",  "soft",
                                   "classic", "modern",  "elegant", "playful", "sturdy"};
const char* const kNouns[] = {"lamp",   "backpack", "kettle", "jacket", "notebook",
                              "speaker", "mug",     "scarf",  "clock",  "sneaker"};

}  // namespace

std::vector<std::uint8_t> make_png(std::uint32_t width, std::uint32_t height, std::uint8_t r,
                                   std::uint8_t g, std::uint8_t b) {
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(height) * (1 + 3 * width));
  for (std::uint32_t y = 0; y < height; ++y) {
    raw.push_back(0);
    for (std::uint32_t x = 0; x < width; ++x) raw.insert(raw.end(), {r, g, b});
  }
  uLongf len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> packed(len);
  if (compress(packed.data(), &len, raw.data(), static_cast<uLong>(raw.size())) != Z_OK)
    throw Error(ErrorKind::kInput, "png: deflate failed");
  packed.resize(len);

  std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  std::vector<std::uint8_t> ihdr;
  put_u32(ihdr, width);
  put_u32(ihdr, height);
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", packed);
  put_chunk(out, "IEND", {});
  return out;
}

void write_fixture(const std::filesystem::path& dir, const FixtureSpec& spec) {
  if (spec.items < spec.max_len + 21)
    throw ConfigError(fmt::format("fixture needs at least {} items for {} negatives per user",
                                  spec.max_len + 21, 20));
  if (spec.min_len < 2 || spec.max_len < spec.min_len) throw ConfigError("fixture: bad length range");
  std::filesystem::create_directories(dir / "images");
  SeededRng rng(spec.seed);

  std::vector<json> items;
  for (std::size_t i = 0; i < spec.items; ++i) {
    const std::string id = fmt::format("i{:04}", i);
    json rec{{"item_id", id},
             {"description", fmt::format("A {} {} in shade {}, catalog entry {}.",
                                         kAdjectives[rng.below(10)], kNouns[rng.below(10)],
                                         rng.below(1000), id)}};
    if (spec.images) {
      auto png = make_png(4, 4, static_cast<std::uint8_t>(rng.below(256)),
                          static_cast<std::uint8_t>(rng.below(256)), static_cast<std::uint8_t>(rng.below(256)));
      const std::string rel = "images/" + id + ".png";
      write_file_atomic(dir / rel, std::string(png.begin(), png.end()));
      rec["image_ref"] = rel;
    }
    items.push_back(std::move(rec));
  }

  std::vector<json> xs;
  for (std::size_t u = 0; u < spec.users; ++u) {
    const std::string user = fmt::format("u{:04}", u);
    const std::size_t len = spec.min_len + rng.below(spec.max_len - spec.min_len + 1);
    std::set<std::uint64_t> used;
    std::int64_t ts = 1'600'000'000 + static_cast<std::int64_t>(rng.below(100'000));
    while (used.size() < len) {
      std::uint64_t item = rng.below(spec.items);
      if (!used.insert(item).second) continue;
      ts += 1 + static_cast<std::int64_t>(rng.below(86'400));
      xs.push_back({{"user_id", user}, {"item_id", fmt::format("i{:04}", item)}, {"timestamp", ts}});
    }
  }

  write_file_atomic(dir / "items.jsonl", to_jsonl(items));
  write_file_atomic(dir / "interactions.jsonl", to_jsonl(xs));
  write_file_atomic(dir / "config.yaml", fmt::format(R"(data:
  interactions: interactions.jsonl
  items: items.jsonl
  min_user_interactions: 5
  min_item_interactions: 1
  min_seq_len: 5
workdir: work
mock:
  enabled: true
  seed: {}
  scoring: oracle_yes
  oracle_p: 1.0
)", spec.seed));
}

}  // namespace msr::synthetic
