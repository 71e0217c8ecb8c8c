#pragma once

#include <string>
#include <vector>

namespace rrl::cli {

// Entry point shared by the binary and the tests. argv[0] is the program
// name; returns the process exit code.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);  // args without the program name

}  // namespace rrl::cli
