#pragma once

namespace vla::cli {

// Exit codes: 0 success, 1 declared runtime error, 2 unknown command,
// 3 config parse failure, 4 missing input.
inline constexpr int kOk = 0;
inline constexpr int kRuntimeError = 1;
inline constexpr int kUnknownCommand = 2;
inline constexpr int kConfigParse = 3;
inline constexpr int kMissingInput = 4;

int run(int argc, const char* const* argv);

}  // namespace vla::cli
