#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace shielda {

// Exit codes of the command-line surface.
inline constexpr int kExitOk = 0;                 ///< success / mission recovered
inline constexpr int kExitReplayDivergence = 1;   ///< replay found divergences
inline constexpr int kExitMissionTerminated = 2;  ///< run ended in MissionTerminated
inline constexpr int kExitPending = 3;            ///< unclassified signal / escalation waiting in a sink
inline constexpr int kExitUsage = 64;             ///< bad invocation
inline constexpr int kExitDataError = 65;         ///< unreadable or invalid input data

/// Resolution order for the canonical data directory:
/// --data-dir flag, then $SHIELDA_DATA_DIR, then the compiled-in default.
std::string default_data_dir();

/// Runs one command-line invocation. args excludes the program name.
/// Returns the process exit code; never throws.
int dispatch(const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err);

}  // namespace shielda
