#pragma once

namespace pointcra {

// Full command line entry point. Returns the process exit code:
// 0 success, 1 configuration error, 2 runtime failure.
int run_cli(int argc, const char* const* argv);

}  // namespace pointcra
