// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace aag::cli {

/// Process exit codes.
enum ExitCode : int {
  kOk = 0,
  kPartialFailure = 1,
  kUsageError = 2,
  kNumericalFailure = 3,
};

/// Runs one `aag` invocation. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace aag::cli
