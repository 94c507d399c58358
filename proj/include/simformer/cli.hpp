#pragma once

#include <string>
#include <vector>

namespace simformer {

/// Parses and runs one subcommand. Returns the process exit code: 0 on
/// success, 2 on usage errors, 1 on runtime failures. Failures print one JSON
/// line {"error": ..., "message": ...} on stderr.
int run_cli(int argc, char** argv);
int run_cli(const std::vector<std::string>& args);

}  // namespace simformer
