#pragma once
#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace metacl {

// Splittable counter-based random stream (splitmix-style mixing).
//
// Every stochastic component of a run owns a stream derived from the master
// seed by a fixed split path, so results never depend on evaluation order or
// thread scheduling. Streams are value types; copying one forks its sequence.
class RngStream {
public:
    explicit RngStream(uint64_t seed) : key_(mix(seed ^ kDomainSeed)) {}

    // Child stream. Children with distinct lanes are independent of each
    // other and of the parent's own draw sequence.
    [[nodiscard]] RngStream split(uint64_t lane) const {
        RngStream child(FromKey{}, mix(key_ ^ mix(lane ^ kDomainSplit)));
        return child;
    }

    // Convenience: derive the lane from a short path tag.
    [[nodiscard]] RngStream split(std::string_view tag) const {
        uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
        for (unsigned char c : tag) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        return split(h);
    }

    uint64_t next_u64() { return mix(key_ + kGolden * ++counter_); }

    // Uniform in [0, 1).
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller; consumes two uniforms per draw.
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
    }

    // Uniform integer in [0, n), n >= 1.
    int64_t uniform_int(int64_t n) {
        return int64_t((static_cast<unsigned __int128>(next_u64()) * uint64_t(n)) >> 64);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int64_t i = int64_t(v.size()) - 1; i > 0; --i) {
            std::swap(v[size_t(i)], v[size_t(uniform_int(i + 1))]);
        }
    }

    std::vector<double> normal_vec(int64_t n) {
        std::vector<double> out(static_cast<size_t>(n), 0.0);
        for (auto& x : out) x = normal();
        return out;
    }

private:
    struct FromKey {};
    RngStream(FromKey, uint64_t key) : key_(key) {}

    static uint64_t mix(uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static constexpr uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
    static constexpr uint64_t kDomainSeed = 0x5eedba5eba11f00dULL;
    static constexpr uint64_t kDomainSplit = 0x51171ab1e0c0ffeeULL;
    static constexpr double kTwoPi = 6.283185307179586476925286766559;

    uint64_t key_;
    uint64_t counter_ = 0;
};

}  // namespace metacl
