#pragma once

#include <cstdint>
#include <iosfwd>

namespace imac::tools {

// Brute-force oracle suites; returns the number of failed suites.
int run_selftest(std::ostream& out, std::uint64_t seed);

}  // namespace imac::tools
