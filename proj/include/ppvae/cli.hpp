// Command-line front end: pretrain, train-plugin, generate, evaluate and
// make-synthetic.

#ifndef PPVAE_CLI_HPP_
#define PPVAE_CLI_HPP_

#include <iosfwd>
#include <string>
#include <vector>

namespace ppvae::cli {

/// Default checkpoint root when --out / --pretrain / --plugin are omitted.
inline constexpr const char *kCheckpointRootEnv = "PPVAE_CHECKPOINT_ROOT";

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

/// Runs one command. `args` excludes the program name.
int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

int run(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

} // namespace ppvae::cli

#endif // PPVAE_CLI_HPP_
