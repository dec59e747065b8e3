#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace longdina {

// Longitudinal attribute pattern space: T occasions x K attributes, one bit
// per (occasion, attribute). Bit (t-1)*K + (k-1) of the index holds
// alpha_{kt} (occasion-major, least-significant-first), so per-occasion
// sub-patterns are contiguous bit fields.
struct PatternSpace {
  int T = 0;
  int K = 0;
  int cap_bits = 16;

  PatternSpace() = default;
  PatternSpace(int T_, int K_, int cap = 16) : T(T_), K(K_), cap_bits(cap) {
    if (T < 1 || K < 1) throw std::invalid_argument("PatternSpace: T and K must be >= 1");
    if (T * K > cap_bits)
      throw std::length_error("pattern space 2^" + std::to_string(T * K) +
                              " exceeds cap 2^" + std::to_string(cap_bits));
  }

  std::uint32_t size() const { return 1u << (T * K); }
  std::uint32_t occasion_mask() const { return (1u << K) - 1u; }

  int bit_of(int t, int k) const { return (t - 1) * K + (k - 1); }  // 1-based t,k
  static int bit(std::uint32_t index, int b) { return (index >> b) & 1u; }
  int attribute(std::uint32_t index, int t, int k) const { return bit(index, bit_of(t, k)); }

  // K-bit sub-pattern of occasion t (1-based)
  std::uint32_t occasion_pattern(std::uint32_t index, int t) const {
    return (index >> ((t - 1) * K)) & occasion_mask();
  }

  std::vector<int> bits(std::uint32_t index) const {
    std::vector<int> b(static_cast<size_t>(T) * K);
    for (int i = 0; i < T * K; ++i) b[i] = bit(index, i);
    return b;
  }

  std::uint32_t index_of(const std::vector<int>& bits_) const {
    if (static_cast<int>(bits_.size()) != T * K)
      throw std::invalid_argument("index_of: bit vector length mismatch");
    std::uint32_t idx = 0;
    for (int i = 0; i < T * K; ++i)
      if (bits_[i]) idx |= (1u << i);
    return idx;
  }
};

inline std::vector<std::uint32_t> enumerate_patterns(int T, int K, int cap_bits = 16) {
  PatternSpace ps(T, K, cap_bits);
  std::vector<std::uint32_t> out(ps.size());
  for (std::uint32_t i = 0; i < ps.size(); ++i) out[i] = i;
  return out;
}

}  // namespace longdina
