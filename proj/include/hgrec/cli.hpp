#pragma once

#include <iosfwd>

namespace hgrec::cli {

/// Entry point of the `hgrec` tool. Returns the process exit code; errors are reported on
/// `err` as "<kind>: <message>".
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hgrec::cli
