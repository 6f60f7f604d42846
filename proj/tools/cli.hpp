// SPDX-License-Identifier: Apache-2.0
// Command-line front end: extract-audio, train, evaluate, predict.
#pragma once

#include <exception>
#include <filesystem>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace affseq::cli {

enum ExitCode : int {
  kOk = 0,
  kUnexpected = 1,
  kIoFailure = 2,
  kDomainFailure = 3,
  kNumericFailure = 4,
};

/// One setting accepted by a subcommand, both as a config-file key and as a
/// flag (see flag_for_key).
struct KeySpec {
  std::string key;
  std::string help;
  std::string default_value;  // empty with required=false means "unset"
  bool required = false;
};

std::vector<std::string> subcommands();
std::vector<KeySpec> subcommand_keys(std::string_view subcommand);

/// `batch_size` -> `--batch-size`, `model.variant` -> `--model.variant`.
std::string flag_for_key(std::string_view key);
std::string key_for_flag(std::string_view flag);

/// Flat `key = value` file. `#` starts a comment. Unknown keys and malformed
/// lines raise ConfigError naming the line number.
std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path,
                                                     std::span<const KeySpec> allowed);

int exit_code_for(const std::exception& e) noexcept;

/// Runs one invocation; `args` excludes the program name.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace affseq::cli
