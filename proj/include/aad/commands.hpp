#ifndef AAD_COMMANDS_HPP
#define AAD_COMMANDS_HPP

#include <string>

#include "aad/config.hpp"

namespace aad {

// Executes one CLI command with an effective configuration. Returns the
// process exit code: 0 success, 1 runtime failure (propagated as exceptions
// by the implementation and mapped by the caller). Usage/config errors throw
// std::invalid_argument.
int run_command(const std::string& command, const RunConfig& cfg,
                std::string* run_dir_out = nullptr);

}  // namespace aad

#endif  // AAD_COMMANDS_HPP
