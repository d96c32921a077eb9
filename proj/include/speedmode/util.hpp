#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace speedmode {

// Seed derivation. Every stochastic component draws from a child stream
// derive_seed(parent, "<component>") so that seeding is unambiguous across
// modules: the child is splitmix64(parent ^ fnv1a64(label)).
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view text);
std::uint64_t derive_seed(std::uint64_t parent, std::string_view label);
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index);

/// mt19937_64 with portable conversions (std distributions are
/// implementation-defined, these are not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller (one value per call, second discarded).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      auto j = below(i);
      std::iter_swap(first + (i - 1), first + j);
    }
  }

 private:
  std::mt19937_64 engine_;
};

/// Linear-interpolation percentile between order statistics
/// (position q*(n-1) over the sorted sample). q in [0, 1].
double percentile_sorted(std::span<const double> sorted, double q);
double percentile(std::vector<double> values, double q);

/// Write via temp file + rename so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

/// Shortest round-trip formatting for doubles in CSV/JSON output.
std::string format_double(double value);

std::vector<std::string> split_csv_line(std::string_view line);
std::string trim(std::string_view s);

/// Keeps large freed blocks in the heap instead of returning them to the OS.
/// Training allocates and frees the same big activation buffers every step.
void retain_heap_memory();

}  // namespace speedmode
