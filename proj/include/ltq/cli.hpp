#pragma once

#include <iosfwd>

namespace ltq {

// Exit codes: 0 success, 1 validation error, 2 execution error, 64 usage.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ltq
