#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace nnsd {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using BinaryMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

/// Generator used everywhere a draw is needed. Seeded explicitly, never from the clock.
using Rng = std::mt19937_64;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// Neighborhood model variant. NN pins gamma to 1, SD pins it to 0,
/// ICAR fixes the graph to the supplied geographic adjacency.
enum class Variant { NNSD, NN, SD, ICAR };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);

/// Bad user input: files, columns, ids, values.
class InputError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration.
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// A numerical invariant was violated (failed factorization, constraint drift).
class NumericalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// splitmix64 finalizer; used to derive independent sub-seeds from a master seed.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    return mix_seed(mix_seed(master) ^ mix_seed(stream + 0x632be59bd9b4e019ULL));
}

} // namespace nnsd
