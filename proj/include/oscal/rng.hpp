#ifndef OSCAL_RNG_HPP
#define OSCAL_RNG_HPP

#include <cstdint>
#include <random>

namespace oscal::rng {

// splitmix64 finalizer; good avalanche, cheap.
inline std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Derive a per-task seed from a master seed and a task index so that
// parallel and serial schedules agree on the stream each task sees.
inline std::uint64_t derive(std::uint64_t master, std::uint64_t index) {
    return splitmix64(master ^ splitmix64(index + 0x51ed270b4d6e9f21ULL));
}

inline std::mt19937_64 engine(std::uint64_t seed) {
    return std::mt19937_64(seed);
}

}  // namespace oscal::rng

#endif
