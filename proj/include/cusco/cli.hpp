#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace cusco::cli {

// Exit codes: 0 success, 1 a check failed or a module error, 2 usage or
// configuration error. args[0] is the program name.
inline constexpr int kOk = 0;
inline constexpr int kFailed = 1;
inline constexpr int kUsage = 2;

int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

} // namespace cusco::cli
