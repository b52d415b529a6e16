#pragma once

#include <iosfwd>

namespace ringlab::cli {

// Parses argv and runs one subcommand. Returns the process exit code; errors
// are reported on `err` as "ringlab: error: ...".
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ringlab::cli
