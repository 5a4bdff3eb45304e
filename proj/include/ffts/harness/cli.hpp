#pragma once

#include <iosfwd>

namespace ffts::harness {

/// Entry point of the `ffts` command line. Returns 0 on success, 1 for user
/// errors (bad flags, invalid config, unreadable inputs) and 2 for internal
/// failures.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ffts::harness
