#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "json.hpp"

namespace msr {

using json = nlohmann::json;

std::string sha256_hex(std::string_view data);
std::string sha256_hex(std::span<const std::uint8_t> data);
std::string base64_encode(std::span<const std::uint8_t> data);

/// Platform-stable RNG. std::mt19937_64's output sequence is fixed by the
/// standard; the distributions are not, so bounded draws are done here.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed);

  std::uint64_t next();
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);
  /// Uniform double in [0, 1) with 53 bits of precision.
  double unit();

  template <class T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::uint64_t state_[4];
};

/// Independent sub-seed for a named stream (e.g. "negatives/u17").
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

std::string trim(std::string_view text);
std::string to_lower(std::string_view text);
std::vector<std::string> split_words(std::string_view text);
std::size_t word_count(std::string_view text);

/// Character-count token estimate: ceil(len / chars_per_token).
std::size_t estimate_tokens(std::string_view text, double chars_per_token);
/// Cuts text to fit the token estimate, preferring a word boundary.
std::string truncate_to_tokens(std::string_view text, std::size_t max_tokens,
                               double chars_per_token);

std::string read_file(const std::filesystem::path& path);
std::vector<std::uint8_t> read_binary(const std::filesystem::path& path);
/// Writes to a unique sibling temp file, then renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

/// Calls fn(line_number, record) for each non-blank line. Malformed JSON
/// raises InputError naming the file and line.
void read_jsonl(const std::filesystem::path& path,
                const std::function<void(std::size_t, const json&)>& fn);
std::string to_jsonl(const std::vector<json>& records);

/// Runs fn(i) for i in [0, n) on up to `workers` threads. The first
/// exception thrown is rethrown after all workers stop.
template <class F>
void parallel_for(std::size_t n, std::size_t workers, F&& fn) {
  if (n == 0) return;
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mu;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        while (!failed.load()) {
          std::size_t i = next.fetch_add(1);
          if (i >= n) return;
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(error_mu);
            if (!error) error = std::current_exception();
            failed = true;
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace msr
