#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mtda::cli {

/// Runs one command line. Exit codes: 0 success, 1 usage error, 2 data
/// error, 3 backend error.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace mtda::cli
