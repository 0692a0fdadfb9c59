#pragma once

namespace stylespace {

/// Runs the stylespace command line; returns the process exit code.
int run_cli(int argc, const char* const* argv);

}  // namespace stylespace
