#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "argprog/trainer.hpp"

namespace argprog {

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Everything a command needs. An empty file gives the documented defaults
// (argument library, approximate expansion with n_expand = 5).
struct RunConfig {
  TrainConfig train;
  SearchConfig search;
  std::string checkpoint = "checkpoint.bin";
  std::string metrics_dir = "metrics";
  int checkpoint_every = 0;  // 0 = only at the end of training
  int eval_every = 0;        // 0 = no periodic evaluation during training
};

// `key = value` lines, '#' starts a comment. Errors name the offending line.
[[nodiscard]] RunConfig parse_config(std::string_view text);
[[nodiscard]] RunConfig load_config(const std::filesystem::path& path);

// Canonical text form; parse_config(to_config_text(c)) reproduces c.
[[nodiscard]] std::string to_config_text(const RunConfig& config);

}  // namespace argprog
