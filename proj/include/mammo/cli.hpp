#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mammo::cli {

enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 1,   ///< bad flags, config or request
    kExitIo = 2,      ///< unreadable/unwritable files, malformed input, bind failure
    kExitNumeric = 3, ///< non-finite values, divergence
    kExitNotReady = 4 ///< report requested for a session that is still active
};

/// Runs one `bench` subcommand. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// "key = value" lines; blank lines and '#' comments are skipped. Throws
/// ConfigError naming the offending line.
std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text);

} // namespace mammo::cli
