#pragma once

namespace langbal {

inline constexpr const char* kVersion = "0.1.0";

// Entry point for the `langbal` tool. Returns 0 on success, 2 on bad flags,
// 1 on domain errors (a JSON error record goes to stderr).
int run_cli(int argc, char** argv);

}  // namespace langbal
