#include "masm/rng.hpp"

#include <cmath>

namespace masm {

// Inverse-CDF sample of the standard Gumbel distribution. next_unit() never
// returns 0 or 1, so both logs stay finite.
double Rng::next_gumbel() { return -std::log(-std::log(next_unit())); }

}  // namespace masm
