#include "leq/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "leq/errors.hpp"

namespace leq {

std::uint64_t mix_seed(std::uint64_t seed, std::string_view name)
{
    // FNV-1a over the name, then splitmix64 over the combination.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : name) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::uint64_t z = seed ^ (h + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t Rng::below(std::uint64_t n)
{
    if (n == 0) throw PreconditionError("Rng::below: n must be positive");
    // Rejection sampling removes modulo bias.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % n;
}

double Rng::normal()
{
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

Rng Rng::fork(std::string_view name) const { return Rng(mix_seed(seed_, name)); }

std::string Rng::serialize() const
{
    std::ostringstream os;
    os << seed_ << ' ' << has_spare_ << ' ';
    os.precision(17);
    os << std::hexfloat << spare_ << ' ' << engine_;
    return os.str();
}

void Rng::deserialize(const std::string& state)
{
    std::istringstream is(state);
    std::string spare;
    is >> seed_ >> has_spare_ >> spare;
    spare_ = std::strtod(spare.c_str(), nullptr);
    is >> engine_;
    if (!is) throw FormatError("Rng::deserialize: malformed state");
}

}  // namespace leq
