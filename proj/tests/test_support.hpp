#pragma once

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "heal/hypervector.hpp"
#include "heal/metrics.hpp"
#include "heal/random.hpp"

namespace heal::test {

inline Hypervector random_phasor(std::size_t dim, Rng& rng) {
  std::uniform_real_distribution<double> phase(-std::numbers::pi, std::numbers::pi);
  Hypervector h(dim);
  for (std::size_t d = 0; d < dim; ++d) {
    const double p = phase(rng);
    h.re()[d] = std::cos(p);
    h.im()[d] = std::sin(p);
  }
  return h;
}

inline Hypervector random_gaussian(std::size_t dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Hypervector h(dim);
  for (std::size_t d = 0; d < dim; ++d) {
    h.re()[d] = normal(rng);
    h.im()[d] = normal(rng);
  }
  return h;
}

// Textbook complex dot product, independent of the kernel layer.
inline double naive_dot_re(ComplexView a, ComplexView b) {
  long double acc = 0.0L;
  for (std::size_t d = 0; d < a.dim(); ++d)
    acc += static_cast<long double>(a.re[d]) * b.re[d] + static_cast<long double>(a.im[d]) * b.im[d];
  return static_cast<double>(acc);
}

inline double naive_similarity(ComplexView a, ComplexView b) {
  const double na = std::sqrt(naive_dot_re(a, a));
  const double nb = std::sqrt(naive_dot_re(b, b));
  if (na == 0.0 || nb == 0.0) return 0.0;
  return naive_dot_re(a, b) / (na * nb);
}

// Three Gaussian classes in 6 features as CSV text, rows cycling through
// the classes.
inline std::string cluster_csv(std::size_t per_class, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::string out = "f0,f1,f2,f3,f4,f5,label\n";
  const char* names[] = {"alpha", "beta", "gamma"};
  std::vector<double> centers(18);
  for (auto& c : centers) c = 1.5 * normal(rng);
  for (std::size_t i = 0; i < 3 * per_class; ++i) {
    const std::size_t c = i % 3;
    for (std::size_t k = 0; k < 6; ++k) out += format_double(centers[c * 6 + k] + normal(rng)) + ",";
    out += std::string(names[c]) + "\n";
  }
  return out;
}

}  // namespace heal::test
