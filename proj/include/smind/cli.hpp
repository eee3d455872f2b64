// cli.hpp - the smindreg subcommands, callable in-process.
//
// Each command takes its arguments without the program or subcommand name and
// returns an exit code: 0 success, 1 usage or config error, 2 data or format
// error, 3 numerical failure.

#pragma once

#include <string>
#include <vector>

namespace smind {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumerical = 3 };

int cmd_register(const std::vector<std::string> &args);
int cmd_evaluate(const std::vector<std::string> &args);
int cmd_phantom(const std::vector<std::string> &args);
int cmd_default_config(const std::vector<std::string> &args);

// Dispatches argv[1] to a subcommand.
int run_cli(int argc, char **argv);

} // namespace smind
