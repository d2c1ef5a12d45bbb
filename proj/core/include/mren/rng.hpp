#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "mren/error.hpp"

namespace mren {

// Deterministic random source. All randomness in the project flows through
// this class; the uniform mappings are hand-rolled so a given seed yields the
// same stream regardless of standard library distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n)
    std::int64_t uniform_int(std::int64_t n) {
        if (n <= 0) throw UsageError("Rng::uniform_int: n must be positive");
        return static_cast<std::int64_t>(
            (static_cast<unsigned __int128>(next_u64()) * static_cast<unsigned __int128>(n)) >> 64);
    }

    bool bernoulli(double p = 0.5) { return uniform() < p; }

    std::string save_state() const {
        std::ostringstream os;
        os << gen_;
        return os.str();
    }

    void load_state(const std::string& s) {
        std::istringstream is(s);
        is >> gen_;
        if (is.fail()) throw IntegrityError("Rng::load_state: malformed generator state");
    }

private:
    std::mt19937_64 gen_;
};

} // namespace mren
