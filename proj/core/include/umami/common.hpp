#pragma once

// Shared plumbing: typed errors, seeded RNG derivation, canonical number
// round-tripping. Everything downstream leans on these three.

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace umami {

// Error taxonomy maps 1:1 onto CLI exit codes (2/3/4). Anything else that
// escapes is a plain bug and exits 1.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---- RNG -------------------------------------------------------------

// splitmix64: cheap, well-mixed seed derivation. We never reuse a raw seed
// for two purposes; every consumer derives its own stream from
// (root seed, salt) so insertion/removal of one consumer cannot shift
// another's draws.
std::uint64_t splitmix64(std::uint64_t x);

// Derive a child seed from a root seed and a string salt (e.g. record id,
// "forge/segmentation", step index rendered into the salt, ...).
std::uint64_t derive_seed(std::uint64_t root, std::string_view salt);
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t salt);

inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

// Uniform double in [0,1) from the top 53 bits; avoids distribution
// implementation differences across standard libraries.
double next_unit(std::mt19937_64& rng);
// Uniform integer in [0, n). n must be > 0.
std::size_t next_index(std::mt19937_64& rng, std::size_t n);
// Categorical draw over non-negative weights (at least one positive).
std::size_t next_weighted(std::mt19937_64& rng, const std::vector<double>& weights);
// k distinct indices out of [0, n), in draw order.
std::vector<std::size_t> sample_without_replacement(std::mt19937_64& rng, std::size_t n, std::size_t k);
// Standard normal via Box-Muller on next_unit (libstdc++'s normal_distribution
// is unspecified across versions; we want bit-stable init).
double next_gaussian(std::mt19937_64& rng);

// ---- canonical numbers ------------------------------------------------

// Shortest round-trip decimal form of a double (std::to_chars). This is the
// one and only way numbers are rendered into JSON, templates, prompts and
// logs, so equal doubles always produce byte-equal text.
std::string format_double(double v);
// Strict full-consume parse; returns nullopt on trailing garbage/empty/NaN
// textual forms we do not accept ("nan", "inf" are accepted as non-finite
// and left to the caller's finiteness checks).
std::optional<double> parse_double(std::string_view text);

// ---- small string helpers ----------------------------------------------

std::string to_lower(std::string_view s);
// Lowercase + collapse interior whitespace runs to one space + trim ends.
// Ingredient/class names compare through this everywhere.
std::string canon_name(std::string_view s);
bool starts_with(std::string_view s, std::string_view prefix);
std::vector<std::string> split_lines(std::string_view text);  // splits on '\n', drops a trailing '\r' per line
std::string join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace umami
