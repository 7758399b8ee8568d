#pragma once

namespace otflow {

// Command-line entry point. Subcommands: run, single, eval, check.
// Returns 0 on success, 1 on usage errors, 2 on numerical failures.
int cli_main(int argc, const char* const* argv);

}  // namespace otflow
