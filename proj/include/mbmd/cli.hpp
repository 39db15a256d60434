#pragma once

namespace mbmd {

/// Full command-line surface; returns the process exit code.
/// 0 success, 2 usage, 3 config, 4 data, 5 numeric failure.
int cli_main(int argc, const char* const* argv);

}  // namespace mbmd
