#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "rkpinn/dynamics.hpp"
#include "rkpinn/pinn.hpp"

namespace rkpinn {

inline constexpr int kCheckpointFormatVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Trained model plus the metadata needed to use it.
///
/// On disk this is JSON with `format_version`, `layer_sizes`, `weights`
/// (per layer, row-major nested arrays), `biases`, `config_hash`, `tableau`,
/// `mode`, `state_dim`, `control_dim` and `domain`. Every real number is
/// written in scientific notation with 17 significant digits, so a save/load
/// cycle is value-exact.
struct ModelCheckpoint {
  RkPinnModel model;
  InputDomain domain;
  std::string config_hash;
};

[[nodiscard]] std::string checkpoint_to_json(const ModelCheckpoint& checkpoint);
[[nodiscard]] ModelCheckpoint checkpoint_from_json(std::string_view text);

void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& checkpoint);
[[nodiscard]] ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace rkpinn
