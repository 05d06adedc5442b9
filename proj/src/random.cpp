#include "sdelab/random.hpp"

#include <cmath>
#include <numbers>

namespace sdelab {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

inline double to_unit(std::uint32_t hi, std::uint32_t lo) {
  // 53-bit integer in [0, 2^53), shifted by half an ulp into (0, 1)
  const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 21) ^ (lo >> 11);
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

// Top bit of the high block word separates normal and uniform draws.
constexpr std::uint64_t kUniformFlag = 1ull << 63;

}  // namespace

Philox4x32::Counter Philox4x32::block(Counter ctr, Key key) noexcept {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
  }
  return ctr;
}

RandomStream::RandomStream(std::uint64_t master_seed, std::uint64_t stream_index, Substream sub)
    : key_{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32)},
      stream_(stream_index),
      sub_(static_cast<std::uint32_t>(sub)) {}

Philox4x32::Counter RandomStream::next_block() {
  return Philox4x32::block({static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32),
                            static_cast<std::uint32_t>(stream_),
                            static_cast<std::uint32_t>(stream_ >> 32) ^ (sub_ << 24)},
                           key_);
}

double RandomStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    ++normal_index_;
    return spare_;
  }
  const auto r = next_block();
  ++block_;
  const double u1 = to_unit(r[0], r[1]);
  const double u2 = to_unit(r[2], r[3]);
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  ++normal_index_;
  return radius * std::cos(angle);
}

void RandomStream::seek_normal(std::uint64_t index) {
  block_ = index / 2;
  has_spare_ = false;
  normal_index_ = index;
  if (index % 2 == 1) {
    // regenerate the pair and keep its second half
    normal_index_ = index - 1;
    normal();
  }
}

double RandomStream::uniform() {
  if (uniform_slot_ == 2) {
    const std::uint64_t blk = uniform_block_ | kUniformFlag;
    uniform_cache_ = Philox4x32::block({static_cast<std::uint32_t>(blk), static_cast<std::uint32_t>(blk >> 32),
                                        static_cast<std::uint32_t>(stream_),
                                        static_cast<std::uint32_t>(stream_ >> 32) ^ (sub_ << 24)},
                                       key_);
    ++uniform_block_;
    uniform_slot_ = 0;
  }
  const int s = uniform_slot_++;
  return to_unit(uniform_cache_[2 * s], uniform_cache_[2 * s + 1]);
}

WienerIncrements::WienerIncrements(std::uint64_t master_seed, std::uint64_t path_index, Index noise_dim, double dt)
    : stream_(master_seed, path_index, Substream::wiener),
      noise_dim_(noise_dim),
      dt_(dt),
      sqrt_dt_(std::sqrt(dt)) {}

StateVector WienerIncrements::next() {
  StateVector dw(noise_dim_);
  for (Index k = 0; k < noise_dim_; ++k) dw(k) = sqrt_dt_ * stream_.normal();
  ++step_;
  return dw;
}

void WienerIncrements::seek_step(std::uint64_t step) {
  stream_.seek_normal(step * static_cast<std::uint64_t>(noise_dim_));
  step_ = step;
}

}  // namespace sdelab
