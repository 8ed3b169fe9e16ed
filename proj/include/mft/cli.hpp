#pragma once

#include <ostream>

namespace mft::cli {

/// Exit codes of the command-line tool.
enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2, kIo = 3 };

/// Entry point of the `mft` tool. Verbs: pretrain, finetune, eval, analyze,
/// bound, sweep. Global flags: --spec, --seed, --out, --threads.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace mft::cli
