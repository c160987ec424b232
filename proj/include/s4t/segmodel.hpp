#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "s4t/autodiff.hpp"
#include "s4t/maps.hpp"
#include "s4t/tensor.hpp"

namespace s4t {

enum class ParamKind { bn_affine, conv };
enum class UpdateScope { bn_only, all_params };

const char* to_string(UpdateScope scope);
UpdateScope parse_scope(const std::string& text);

struct Parameter {
  std::string name;
  ParamKind kind;
  Var var;
};

struct SegNetConfig {
  std::size_t in_channels = 3;
  std::vector<std::size_t> widths{16, 32, 32};  // 3×3 conv → BN → ReLU blocks
  std::size_t num_classes = 8;                  // final 1×1 conv
};

// Fully convolutional, resolution-preserving segmenter. BN layers always use
// the statistics of the batch being processed.
class SegNet {
 public:
  SegNet(const SegNetConfig& config, std::uint64_t seed);

  const SegNetConfig& config() const { return config_; }
  std::size_t num_classes() const { return config_.num_classes; }

  // N×3×H×W images → N×C×H×W logits / probabilities.
  Var forward_logits(const Tensor& images) const;
  Var forward(const Tensor& images) const;

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }

  // Marks only the parameters inside `scope` as requiring gradients.
  void set_trainable(UpdateScope scope);

  // Digest over every parameter of the given kind.
  std::uint64_t checksum(ParamKind kind) const;

  SegNet clone() const;

  void save(const std::filesystem::path& path) const;
  static SegNet load(const std::filesystem::path& path);

 private:
  SegNet() = default;
  void add(std::string name, ParamKind kind, Tensor value);
  const Var& param(std::size_t i) const { return params_[i].var; }

  SegNetConfig config_;
  std::vector<Parameter> params_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled: θ ← θ − lr·wd·θ
};

class Adam {
 public:
  Adam(const std::vector<Parameter>& params, AdamConfig config);

  const AdamConfig& config() const { return config_; }
  AdamConfig& config() { return config_; }
  long steps() const { return step_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

  // Applies one update to the parameters inside `scope`, then clears every
  // gradient. Throws when no in-scope parameter has a gradient.
  void step(std::vector<Parameter>& params, UpdateScope scope);

 private:
  AdamConfig config_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  long step_ = 0;
};

bool in_scope(ParamKind kind, UpdateScope scope);

// Horizontal mirror of an N×C×H×W tensor / a label map.
Tensor flip_horizontal(const Tensor& images);
LabelMap flip_horizontal(const LabelMap& labels);

// Mean per-pixel cross-entropy of `probs` against hard `labels`.
Var cross_entropy(const Var& probs, const std::vector<LabelMap>& labels, double eps = 1e-8);

struct SourceTrainingOptions {
  int epochs = 3;
  double lr = 2e-3;
  double weight_decay = 0.0;
  std::size_t batch_size = 8;
  std::uint64_t seed = 1234;
  bool flip = true;
};

struct SourceTrainingReport {
  std::vector<double> epoch_loss;  // mean batch loss per epoch
  double pixel_accuracy = 0.0;     // on the training set after the last epoch
};

// Supervised cross-entropy training of every parameter on labeled data.
SourceTrainingReport train_source(SegNet& model, const std::vector<Tensor>& images,
                                  const std::vector<LabelMap>& labels, const SourceTrainingOptions& options,
                                  const std::function<void(int epoch, std::size_t step, double loss)>& on_step = {});

// Pixel accuracy of batched forward passes (batch-stat BN, fixed batch order).
double pixel_accuracy(const SegNet& model, const std::vector<Tensor>& images, const std::vector<LabelMap>& labels,
                      std::size_t batch_size);

}  // namespace s4t
