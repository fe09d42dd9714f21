#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace metadg {

// One root seed fans out to named sub-streams so that, e.g., the episode
// sampler and the MetaBN lambda draws stay reproducible independently.
struct SeedStreams {
    std::uint64_t root = 0;

    static std::uint64_t splitmix64(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    static std::uint64_t fnv1a(std::string_view s) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (char c : s) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    std::uint64_t derive(std::string_view name) const { return splitmix64(root ^ fnv1a(name)); }

    std::mt19937_64 stream(std::string_view name) const { return std::mt19937_64(derive(name)); }
};

}  // namespace metadg
