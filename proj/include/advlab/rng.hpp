#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace advlab::rng {

// All randomness flows from one root seed through named substreams:
// derive(root, "shuffle", epoch), derive(root, "dim", image*steps + iter), ...
// Streams draw from mt19937_64 but implement their own uniform/normal/shuffle
// so results do not depend on the standard library's distribution internals.

std::uint64_t mix(std::uint64_t x);  // splitmix64 finalizer
std::uint64_t derive(std::uint64_t root, std::string_view name);
std::uint64_t derive(std::uint64_t root, std::string_view name, std::uint64_t index);

class Stream {
public:
    explicit Stream(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next();
    double uniform();                          // [0, 1)
    double uniform(double lo, double hi);      // [lo, hi)
    std::size_t index(std::size_t n);          // [0, n), n > 0
    double normal();                           // standard normal (Box-Muller)

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace advlab::rng
