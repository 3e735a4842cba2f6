#pragma once

// Philox4x32-10 (Salmon et al., SC'11) wrapped as a 64-bit URBG.
//
// The key carries the experiment seed and the upper counter words carry a
// stream id (the trial index), so every trial owns an independent substream
// that does not depend on which thread runs it.

#include <array>
#include <cstdint>
#include <limits>

namespace ntklab {

class Philox4x32 {
 public:
  using result_type = std::uint64_t;
  using block_type = std::array<std::uint32_t, 4>;
  using key_type = std::array<std::uint32_t, 2>;

  Philox4x32() : Philox4x32(0, 0) {}
  Philox4x32(std::uint64_t seed, std::uint64_t stream) {
    key_ = {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    stream_ = stream;
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    if (pos_ == 2) {
      const block_type ctr = {static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32),
                              static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)};
      buf_ = generate(ctr, key_);
      ++block_;
      pos_ = 0;
    }
    const std::uint64_t lo = buf_[2 * pos_];
    const std::uint64_t hi = buf_[2 * pos_ + 1];
    ++pos_;
    return lo | (hi << 32);
  }

  void discard(std::uint64_t n) {
    for (; n > 0; --n) (*this)();
  }

  // The raw bijection, exposed for known-answer tests.
  static block_type generate(block_type ctr, key_type key) {
    for (int r = 0; r < 10; ++r) {
      if (r > 0) {
        key[0] += kW0;
        key[1] += kW1;
      }
      ctr = round(ctr, key);
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kM0 = 0xD2511F53u;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kW0 = 0x9E3779B9u;
  static constexpr std::uint32_t kW1 = 0xBB67AE85u;

  static block_type round(const block_type& c, const key_type& k) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * c[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }

  key_type key_{};
  std::uint64_t stream_ = 0;
  std::uint64_t block_ = 0;
  block_type buf_{};
  int pos_ = 2;
};

}  // namespace ntklab
