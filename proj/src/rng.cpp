#include "fracouple/rng.hpp"

#include <cmath>

namespace fracouple {

namespace {
constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u; // golden ratio
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u; // sqrt(3)-1

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
    std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
}
} // namespace

std::array<std::uint32_t, 4> Philox4x32::round(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> k) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    return {hi1 ^ ctr[1] ^ k[0], lo1, hi0 ^ ctr[3] ^ k[1], lo0};
}

std::array<std::uint32_t, 4> Philox4x32::operator()(std::array<std::uint32_t, 4> ctr) const {
    std::array<std::uint32_t, 2> k = key;
    for (int r = 0; r < 10; ++r) {
        ctr = round(ctr, k);
        k[0] += kWeyl0;
        k[1] += kWeyl1;
    }
    return ctr;
}

RngStream::RngStream(std::uint64_t master_seed, std::uint64_t substream) {
    cipher_.key = {static_cast<std::uint32_t>(master_seed),
                   static_cast<std::uint32_t>(master_seed >> 32)};
    ctr_hi_ = substream;
    ctr_lo_ = 0;
}

void RngStream::refill() {
    std::array<std::uint32_t, 4> ctr = {
        static_cast<std::uint32_t>(ctr_lo_), static_cast<std::uint32_t>(ctr_lo_ >> 32),
        static_cast<std::uint32_t>(ctr_hi_), static_cast<std::uint32_t>(ctr_hi_ >> 32)};
    block_ = cipher_(ctr);
    ++ctr_lo_;
    avail_ = 4;
}

std::uint64_t RngStream::raw64() {
    if (avail_ < 2) refill();
    std::uint64_t hi = block_[avail_ - 1];
    std::uint64_t lo = block_[avail_ - 2];
    avail_ -= 2;
    return (hi << 32) | lo;
}

double RngStream::u01() {
    // 53 random bits into (0,1): (x + 0.5) * 2^-53 with x in [0, 2^53)
    std::uint64_t x = raw64() >> 11;
    return (static_cast<double>(x) + 0.5) * 0x1.0p-53;
}

double RngStream::gaussian() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u = u01();
    double v = u01();
    double r = std::sqrt(-2.0 * std::log(u));
    double c = std::cos(6.283185307179586476925286766559 * v);
    double s = std::sin(6.283185307179586476925286766559 * v);
    spare_ = r * s;
    have_spare_ = true;
    return r * c;
}

} // namespace fracouple
