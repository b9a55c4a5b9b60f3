#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "catmouse/real.hpp"

namespace catmouse::inline CATMOUSE_PRECISION {

/// Command-line entry point. Returns 0 on success, 1 on usage errors (usage
/// text on err) and 2 on runtime failures.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace catmouse::inline CATMOUSE_PRECISION
