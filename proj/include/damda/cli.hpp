#pragma once
// The damda command line. Exit codes:
//   0 success            4 test columns do not cover the model variables
//   1 usage error        5 numerical fit failure
//   2 parse error        6 configuration or I/O error
//   3 degenerate class

#include <iosfwd>
#include <string>
#include <vector>

namespace damda::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kParse = 2,
  kDegenerate = 3,
  kAlignment = 4,
  kFit = 5,
  kConfig = 6,
};

inline constexpr const char* kVersion = "0.3.0";

/// args excludes the program name. Summaries go to out, diagnostics to err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace damda::cli
