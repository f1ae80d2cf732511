#pragma once

#include <ostream>

namespace stochlq {

/// Entry point of the `stochlq` command line; returns the process exit code
/// (0 ok, 2 validation, 3 solver, 4 verification).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace stochlq
