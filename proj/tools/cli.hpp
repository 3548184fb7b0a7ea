#pragma once

#include <iosfwd>

namespace op2 {

/// Exit codes: 0 ok, 1 usage, 2 runtime failure.
int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace op2
