#pragma once

namespace gipad {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitInternal = 4;

// Entry point of the gipad executable; returns the process exit code.
int run_cli(int argc, char** argv);

}  // namespace gipad
