#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace nervpp::cli {

// Dispatches one CLI invocation (argv without the program name).
// Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nervpp::cli
