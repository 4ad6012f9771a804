#pragma once

#include <cstdint>
#include <iosfwd>

namespace psld::harness {

// Exit codes of the command line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitOther = 1;

// Entry point of the `psld` tool; messages go to out / err.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Independent stream seed for one named use of the master seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag);

}  // namespace psld::harness
