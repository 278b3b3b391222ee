#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gsalign {

/// Runs one command line. Returns 0 on success, 1 on usage or config
/// errors, 2 on input, data, format or numeric errors.
int cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli(int argc, const char* const* argv);

} // namespace gsalign
