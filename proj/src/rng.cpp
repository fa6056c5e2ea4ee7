#include "advlab/rng.hpp"

#include <cmath>

#include "advlab/errors.hpp"
#include "advlab/util.hpp"

namespace advlab::rng {

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::uint64_t derive(std::uint64_t root, std::string_view name) {
    return mix(root ^ mix(util::fnv1a64(name)));
}

std::uint64_t derive(std::uint64_t root, std::string_view name, std::uint64_t index) {
    return mix(derive(root, name) ^ mix(index + 0x51ed270b43c5c281ull));
}

std::uint64_t Stream::next() { return gen_(); }

double Stream::uniform() {
    // 53 random bits -> [0, 1)
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

double Stream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::size_t Stream::index(std::size_t n) {
    if (n == 0) {
        throw Error("rng::Stream::index: empty range");
    }
    // Modulo bias is < 2^-40 for any n that fits in memory here.
    return static_cast<std::size_t>(next() % n);
}

double Stream::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    const double two_pi = 6.283185307179586476925286766559;
    spare_ = mag * std::sin(two_pi * u2);
    has_spare_ = true;
    return mag * std::cos(two_pi * u2);
}

}  // namespace advlab::rng
