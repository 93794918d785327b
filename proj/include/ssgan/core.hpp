#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>

namespace ssgan {

using Index = Eigen::Index;

// Column-major: an activation column holds every channel of one position.
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Rng = std::mt19937_64;

enum class Mode { train, eval };

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct ParameterError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct LoadError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct ContractError : Error {
  using Error::Error;
};

/// Derives an independent engine from a base seed and a list of stream tags.
/// Used everywhere a sub-stream must not depend on how many draws another
/// stream has consumed (noise vs. transform sampling, per-epoch shuffles).
inline Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::seed_seq::result_type words[16];
  int n = 0;
  words[n++] = static_cast<std::uint32_t>(seed);
  words[n++] = static_cast<std::uint32_t>(seed >> 32);
  for (std::uint64_t tag : tags) {
    if (n + 2 > 16) break;
    words[n++] = static_cast<std::uint32_t>(tag);
    words[n++] = static_cast<std::uint32_t>(tag >> 32);
  }
  std::seed_seq seq(words, words + n);
  return Rng(seq);
}

/// FNV-1a over raw bytes.
inline std::uint64_t fnv1a(const void* data, std::size_t size,
                           std::uint64_t hash = 0xcbf29ce484222325ULL) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= bytes[i];
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

}  // namespace ssgan
