#pragma once

// Flat `key = value` configuration shared by every command. Lines starting
// with '#' are comments; unknown keys and out-of-range values are rejected.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "s4t/losses.hpp"
#include "s4t/reliability.hpp"
#include "s4t/segmodel.hpp"

namespace s4t {

enum class OracleMode { off, perfect, noisy };
const char* to_string(OracleMode mode);
OracleMode parse_oracle_mode(const std::string& text);

struct Config {
  std::uint64_t seed = 1234;  // training, view sampling and oracle streams

  // data; without manifests the synthetic benchmark for data_seed is used
  std::uint64_t data_seed = 1234;
  std::size_t num_source = 500;
  std::size_t num_target = 500;
  std::string source_manifest;
  std::string target_manifest;
  std::string eval_manifest;  // defaults to target_manifest
  std::string checkpoint;

  // source training
  int source_epochs = 3;
  double source_lr = 2e-3;
  std::size_t source_batch_size = 8;
  bool flip = true;

  // adaptation
  double K = 50.0;
  double alpha = 0.1;
  double beta = 0.1;
  double eta = 0.5;
  std::size_t k = 3;
  double weight_decay = 5e-4;
  std::size_t Q = 100;
  int epochs = 1;
  double lr = 1e-3;
  std::size_t batch_size = 8;
  UpdateScope scope = UpdateScope::bn_only;
  SelectionMode selection_mode = SelectionMode::or_;
  bool ie_reg = true;
  bool confidence = true;
  bool consistency = true;
  bool loss_weights = true;
  bool interpolation = true;
  OracleMode oracle = OracleMode::off;
  int oracle_p = 0;
  LossKind loss = LossKind::s4t;
  bool analysis = false;  // track pseudolabel accuracy against labels while adapting

  // evaluation: "native", "multi" (1, 1.25, 1.5, 1.75) or "HxW,HxW,..."
  std::string eval_scales = "native";
  std::size_t eval_batch_size = 8;

  // Applies one `key = value` assignment; throws ConfigError.
  void set(const std::string& key, const std::string& value);
  // Parses `key=value` (command-line form).
  void set_assignment(const std::string& assignment);
  void load(const std::filesystem::path& path);
  void validate() const;

  // Every key in a fixed order, formatted so that load(save()) round-trips.
  std::vector<std::pair<std::string, std::string>> entries() const;
  std::string to_text() const;
  void save(const std::filesystem::path& path) const;

  static std::vector<std::string> keys();
};

std::vector<std::pair<std::size_t, std::size_t>> parse_scales(const std::string& text, std::size_t H, std::size_t W);

// Locale-independent shortest round-trip formatting.
std::string format_double(double v);

}  // namespace s4t
