#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bimanual {

/// Runs one command line (args exclude the program name). Returns 0 on success, 1 on a
/// runtime failure (one JSON error line on err), 2 on bad usage (usage text on err).
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace bimanual
