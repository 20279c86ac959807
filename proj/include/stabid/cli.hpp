#pragma once

#include <string>
#include <vector>

namespace stabid {

/// Exit codes: 0 success, 1 usage error, 2 numerical failure.
int cli_main(int argc, char** argv);
int cli_main(const std::vector<std::string>& args);

}  // namespace stabid
