#pragma once

#include <array>
#include <cstdint>

#include "sdelab/types.hpp"

namespace sdelab {

// Philox4x32-10 (Salmon et al., SC'11). Stateless: the output block is a pure
// function of (counter, key).
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter block(Counter ctr, Key key) noexcept;
};

// Independent substreams within one path's randomness.
enum class Substream : std::uint32_t { wiener = 0, initial = 1, bridge = 2 };

// Random stream keyed by (master_seed, stream_index, substream). Draw n of the
// stream is a fixed function of those three values and n, so streams can be
// consumed on any thread in any order and reproduced bit-exactly.
class RandomStream {
 public:
  RandomStream(std::uint64_t master_seed, std::uint64_t stream_index, Substream sub = Substream::wiener);

  // Uniform on (0, 1) with 53 random bits.
  double uniform();
  // Standard normal (Box-Muller, both outputs used).
  double normal();

  // Position the stream so the next normal() is normal number `index`.
  void seek_normal(std::uint64_t index);
  std::uint64_t normals_drawn() const { return normal_index_; }

 private:
  Philox4x32::Counter next_block();

  Philox4x32::Key key_;
  std::uint64_t stream_;
  std::uint32_t sub_;
  std::uint64_t block_ = 0;
  // cached second Box-Muller output
  double spare_ = 0.0;
  bool has_spare_ = false;
  std::uint64_t normal_index_ = 0;
  // uniforms are taken from their own half of the counter space
  std::uint64_t uniform_block_ = 0;
  Philox4x32::Counter uniform_cache_{};
  int uniform_slot_ = 2;
};

// Wiener increments for one path: step s, component k uses normal number
// s * noise_dim + k of the path's Wiener substream, scaled by sqrt(dt).
class WienerIncrements {
 public:
  WienerIncrements(std::uint64_t master_seed, std::uint64_t path_index, Index noise_dim, double dt);

  StateVector next();
  void seek_step(std::uint64_t step);
  std::uint64_t step() const { return step_; }
  double dt() const { return dt_; }

 private:
  RandomStream stream_;
  Index noise_dim_;
  double dt_;
  double sqrt_dt_;
  std::uint64_t step_ = 0;
};

}  // namespace sdelab
