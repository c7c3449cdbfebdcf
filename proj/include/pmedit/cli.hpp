#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace pmedit {

/// Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pmedit
