#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vvc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Malformed input files (message carries file:line).
struct ParseError : Error {
  using Error::Error;
};
// Violated structural invariants: topology, dimensions, preconditions.
struct StructureError : Error {
  using Error::Error;
};
// NaN propagation, singular systems, voltage collapse.
struct NumericError : Error {
  using Error::Error;
};
// Iterative solver hit its cap before reaching tolerance.
struct ConvergenceError : Error {
  using Error::Error;
};

// Deterministic uniform sampling. std::mt19937_64 already has a pinned bit
// stream; the double mapping lives here because the standard distributions
// are implementation-defined and would break bit-identical replay.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  // Independent stream for element `index` of a parallel kernel. Results
  // depend only on (seed, index), never on the thread that runs them.
  static Rng stream(std::uint64_t seed, std::uint64_t index) {
    return Rng(mix(seed ^ mix(index + 0x9e3779b97f4a7c15ull)));
  }

  std::uint64_t next_u64() { return eng_(); }

  double uniform() {  // [0, 1)
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double symmetric(double mag) { return uniform(-mag, mag); }

  // [0, n)
  std::uint64_t uniform_index(std::uint64_t n) { return eng_() % n; }

  VectorXd vector(int n, double lo, double hi) {
    VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = uniform(lo, hi);
    return v;
  }

  // Fisher-Yates; std::shuffle is implementation-defined.
  template <typename T>
  void shuffle(std::vector<T>& xs) {
    for (std::size_t i = xs.size(); i > 1; --i) {
      std::swap(xs[i - 1], xs[uniform_index(i)]);
    }
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {  // splitmix64 finalizer
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  std::mt19937_64 eng_;
};

// Shortest round-trip decimal form (locale-free).
std::string fmt_double(double v);
// Throws ParseError on trailing garbage or empty field.
double parse_double(std::string_view s, const std::string& where = {});
long parse_long(std::string_view s, const std::string& where = {});

std::vector<std::string> split(std::string_view line, char sep);
std::string_view trim(std::string_view s);

// FNV-1a over the given bytes, hex-encoded; used for artifact provenance.
std::string content_hash(std::string_view bytes);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

MatrixXd submatrix(const MatrixXd& m, std::span<const int> rows,
                   std::span<const int> cols);

VectorXd clamp_box(const VectorXd& v, const VectorXd& lo, const VectorXd& hi);

}  // namespace vvc
