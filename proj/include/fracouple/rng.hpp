#pragma once

// Counter-based random number generation (Philox 4x32-10) with per-replica
// substreams.  Counter-based generators make replica-level parallelism
// reproducible independently of scheduling: stream r of master seed s is a
// pure function of (s, r, counter), never of how many draws other streams
// made.

#include <array>
#include <cstdint>

namespace fracouple {

// Philox 4x32-10 block cipher: maps a 128-bit counter under a 64-bit key to
// 128 pseudo-random bits.
struct Philox4x32 {
    std::array<std::uint32_t, 2> key{};

    static std::array<std::uint32_t, 4> round(std::array<std::uint32_t, 4> ctr,
                                              std::array<std::uint32_t, 2> k);
    std::array<std::uint32_t, 4> operator()(std::array<std::uint32_t, 4> ctr) const;
};

// A stream of doubles/gaussians backed by Philox.  stream(master_seed, r)
// derives substream r; draws consume successive counter values.
class RngStream {
  public:
    RngStream(std::uint64_t master_seed, std::uint64_t substream);

    // uniform on (0,1) (never exactly 0 or 1)
    double u01();
    // standard normal via Box-Muller on counter-based uniforms
    double gaussian();
    std::uint64_t raw64();

  private:
    void refill();

    Philox4x32 cipher_;
    std::uint64_t ctr_hi_ = 0;   // substream id
    std::uint64_t ctr_lo_ = 0;   // draw counter
    std::array<std::uint32_t, 4> block_{};
    int avail_ = 0;              // 32-bit words left in block_
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace fracouple
