#pragma once

#include <ostream>

namespace bridgegen::checks {

// Built-in invariant suite behind the `check` subcommand: mask construction,
// autoregressive causality, gradient agreement, pmf normalization, and the
// PGM round trip. Prints one PASS/FAIL line per group; returns false on any
// failure.
bool run_self_checks(std::ostream& out);

} // namespace bridgegen::checks
