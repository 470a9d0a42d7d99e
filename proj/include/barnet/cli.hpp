#pragma once

#include <iosfwd>

namespace barnet {

/// Entry point of the barnetkit command line. Returns the process exit code:
/// 0 success, 1 a check failed, 2 usage/config/data error, 3 numerical failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace barnet
