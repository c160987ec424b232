#include "s4t/segmodel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "s4t/error.hpp"
#include "s4t/io.hpp"
#include "s4t/rng.hpp"

namespace s4t {

const char* to_string(UpdateScope scope) { return scope == UpdateScope::bn_only ? "bn_only" : "all_params"; }

UpdateScope parse_scope(const std::string& text) {
  if (text == "bn_only") return UpdateScope::bn_only;
  if (text == "all_params") return UpdateScope::all_params;
  throw ConfigError("unknown update scope '" + text + "' (expected bn_only or all_params)");
}

bool in_scope(ParamKind kind, UpdateScope scope) {
  return scope == UpdateScope::all_params || kind == ParamKind::bn_affine;
}

namespace {

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (float& v : t.data()) v = static_cast<float>(rng.normal() * stddev);
  return t;
}

}  // namespace

SegNet::SegNet(const SegNetConfig& config, std::uint64_t seed) : config_(config) {
  if (config.widths.empty()) throw Error("SegNet needs at least one hidden block");
  if (config.num_classes < 2) throw Error("SegNet needs at least 2 classes");
  Rng rng(derive_seed(seed, 0x5e6e7));
  std::size_t in = config.in_channels;
  for (std::size_t l = 0; l < config.widths.size(); ++l) {
    const std::size_t out = config.widths[l];
    const std::string p = std::to_string(l);
    add("conv" + p + ".weight", ParamKind::conv, he_normal({out, in, 3, 3}, in * 9, rng));
    add("conv" + p + ".bias", ParamKind::conv, Tensor({out}, 0.0f));
    add("bn" + p + ".gamma", ParamKind::bn_affine, Tensor({out}, 1.0f));
    add("bn" + p + ".beta", ParamKind::bn_affine, Tensor({out}, 0.0f));
    in = out;
  }
  add("head.weight", ParamKind::conv, he_normal({config.num_classes, in, 1, 1}, in, rng));
  add("head.bias", ParamKind::conv, Tensor({config.num_classes}, 0.0f));
}

void SegNet::add(std::string name, ParamKind kind, Tensor value) {
  params_.push_back({std::move(name), kind, Var::parameter(std::move(value))});
}

Var SegNet::forward_logits(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != config_.in_channels) {
    throw ShapeError("SegNet: expected N×" + std::to_string(config_.in_channels) + "×H×W images, got " +
                     shape_str(images.shape()));
  }
  Var x(images, false);
  std::size_t i = 0;
  for (std::size_t l = 0; l < config_.widths.size(); ++l, i += 4) {
    x = conv2d(x, param(i), param(i + 1), 1, 1);
    x = batchnorm2d(x, param(i + 2), param(i + 3));
    x = relu(x);
  }
  return conv2d(x, param(i), param(i + 1), 1, 0);
}

Var SegNet::forward(const Tensor& images) const { return softmax_channels(forward_logits(images)); }

void SegNet::set_trainable(UpdateScope scope) {
  for (Parameter& p : params_) p.var.set_requires_grad(in_scope(p.kind, scope));
}

std::uint64_t SegNet::checksum(ParamKind kind) const {
  std::uint64_t h = 0;
  for (const Parameter& p : params_) {
    if (p.kind == kind) h = mix_seed(h ^ s4t::checksum(p.var.value()));
  }
  return h;
}

SegNet SegNet::clone() const {
  SegNet copy;
  copy.config_ = config_;
  for (const Parameter& p : params_) {
    Var v = Var::parameter(p.var.value());
    v.set_requires_grad(p.var.requires_grad());
    copy.params_.push_back({p.name, p.kind, std::move(v)});
  }
  return copy;
}

void SegNet::save(const std::filesystem::path& path) const {
  std::vector<NamedTensor> entries;
  for (const Parameter& p : params_) entries.push_back({p.name, p.var.value()});
  save_named_tensors(path, entries);
}

SegNet SegNet::load(const std::filesystem::path& path) {
  std::vector<NamedTensor> entries = load_named_tensors(path);
  // Infer the architecture from the conv weight shapes.
  SegNetConfig cfg;
  cfg.widths.clear();
  bool have_head = false;
  for (std::size_t l = 0;; ++l) {
    const std::string name = "conv" + std::to_string(l) + ".weight";
    auto it = std::find_if(entries.begin(), entries.end(), [&](const NamedTensor& e) { return e.name == name; });
    if (it == entries.end()) break;
    if (it->tensor.rank() != 4) throw FormatError(path.string() + ": " + name + " is not rank 4");
    if (l == 0) cfg.in_channels = it->tensor.dim(1);
    cfg.widths.push_back(it->tensor.dim(0));
  }
  for (const NamedTensor& e : entries) {
    if (e.name == "head.weight" && e.tensor.rank() == 4) {
      cfg.num_classes = e.tensor.dim(0);
      have_head = true;
    }
  }
  if (cfg.widths.empty() || !have_head) throw FormatError(path.string() + ": not a SegNet checkpoint");
  SegNet model(cfg, 0);
  if (entries.size() != model.params_.size()) {
    throw FormatError(path.string() + ": expected " + std::to_string(model.params_.size()) + " entries, found " +
                      std::to_string(entries.size()));
  }
  for (Parameter& p : model.params_) {
    auto it = std::find_if(entries.begin(), entries.end(), [&](const NamedTensor& e) { return e.name == p.name; });
    if (it == entries.end()) throw FormatError(path.string() + ": missing entry " + p.name);
    if (it->tensor.shape() != p.var.shape()) {
      throw FormatError(path.string() + ": entry " + p.name + " has shape " + shape_str(it->tensor.shape()) +
                        ", expected " + shape_str(p.var.shape()));
    }
    p.var.mutable_value() = std::move(it->tensor);
  }
  return model;
}

Adam::Adam(const std::vector<Parameter>& params, AdamConfig config) : config_(config) {
  for (const Parameter& p : params) {
    m_.emplace_back(p.var.shape(), 0.0f);
    v_.emplace_back(p.var.shape(), 0.0f);
  }
}

void Adam::step(std::vector<Parameter>& params, UpdateScope scope) {
  if (params.size() != m_.size()) throw Error("Adam: parameter list changed since construction");
  bool any = false;
  for (const Parameter& p : params) any = any || (in_scope(p.kind, scope) && p.var.has_grad());
  if (!any) throw Error("Adam: step called before backward (no gradients in scope)");

  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = params[k];
    if (!in_scope(p.kind, scope)) continue;
    Tensor& value = p.var.mutable_value();
    const bool has_grad = p.var.has_grad();
    const Tensor* grad = has_grad ? &p.var.grad() : nullptr;
    for (std::size_t i = 0; i < value.numel(); ++i) {
      const double g = grad ? (*grad)[i] : 0.0;
      const double m = b1 * m_[k][i] + (1.0 - b1) * g;
      const double v = b2 * v_[k][i] + (1.0 - b2) * g * g;
      m_[k][i] = static_cast<float>(m);
      v_[k][i] = static_cast<float>(v);
      const double update = (m / c1) / (std::sqrt(v / c2) + config_.eps);
      const double theta = value[i];
      value[i] = static_cast<float>(theta - config_.lr * update - config_.lr * config_.weight_decay * theta);
    }
  }
  for (Parameter& p : params) p.var.zero_grad();
}

Tensor flip_horizontal(const Tensor& images) {
  if (images.rank() != 4) throw ShapeError("flip_horizontal: expected N×C×H×W");
  Tensor out(images.shape());
  const std::size_t rows = images.dim(0) * images.dim(1) * images.dim(2), W = images.dim(3);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < W; ++c) out[r * W + c] = images[r * W + (W - 1 - c)];
  return out;
}

LabelMap flip_horizontal(const LabelMap& labels) {
  LabelMap out(labels.height, labels.width);
  for (std::size_t r = 0; r < labels.height; ++r)
    for (std::size_t c = 0; c < labels.width; ++c) out.at(r, c) = labels.at(r, labels.width - 1 - c);
  return out;
}

Var cross_entropy(const Var& probs, const std::vector<LabelMap>& labels, double eps) {
  const Tensor& p = probs.value();
  if (p.rank() != 4 || labels.size() != p.dim(0)) throw ShapeError("cross_entropy: batch size mismatch");
  const std::size_t C = p.dim(1), plane = p.dim(2) * p.dim(3);
  Tensor weights(p.shape(), 0.0f);
  const float scale = -1.0f / static_cast<float>(p.dim(0) * plane);
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n].size() != plane) throw ShapeError("cross_entropy: label map size mismatch");
    for (std::size_t i = 0; i < plane; ++i) {
      const Label y = labels[n].labels[i];
      if (y < 0 || static_cast<std::size_t>(y) >= C) throw Error("cross_entropy: label out of range");
      weights[(n * C + static_cast<std::size_t>(y)) * plane + i] = scale;
    }
  }
  return weighted_sum(log_eps(probs, eps), weights);
}

SourceTrainingReport train_source(SegNet& model, const std::vector<Tensor>& images,
                                  const std::vector<LabelMap>& labels, const SourceTrainingOptions& options,
                                  const std::function<void(int, std::size_t, double)>& on_step) {
  if (images.empty()) throw Error("train_source: empty dataset");
  if (images.size() != labels.size()) throw Error("train_source: images and labels differ in count");
  if (options.batch_size == 0) throw Error("train_source: batch size must be positive");

  model.set_trainable(UpdateScope::all_params);
  Adam adam(model.parameters(), AdamConfig{.lr = options.lr, .weight_decay = options.weight_decay});
  SourceTrainingReport report;
  std::vector<std::size_t> order(images.size());

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(options.seed, 0x50u, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    }
    double total = 0.0;
    std::size_t steps = 0;
    for (std::size_t first = 0; first < order.size(); first += options.batch_size) {
      const std::size_t count = std::min(options.batch_size, order.size() - first);
      std::vector<Tensor> batch_images;
      std::vector<LabelMap> batch_labels;
      for (std::size_t j = 0; j < count; ++j) {
        const std::size_t idx = order[first + j];
        if (options.flip && rng.bernoulli(0.5)) {
          const Shape& s = images[idx].shape();
          batch_images.push_back(flip_horizontal(images[idx].reshaped({1, s[0], s[1], s[2]})).reshaped(s));
          batch_labels.push_back(flip_horizontal(labels[idx]));
        } else {
          batch_images.push_back(images[idx]);
          batch_labels.push_back(labels[idx]);
        }
      }
      const Var probs = model.forward(stack_batch(batch_images));
      const Var loss = cross_entropy(probs, batch_labels);
      backward(loss);
      adam.step(model.parameters(), UpdateScope::all_params);
      total += loss.item();
      if (on_step) on_step(epoch, steps, loss.item());
      ++steps;
    }
    report.epoch_loss.push_back(total / static_cast<double>(steps));
  }
  report.pixel_accuracy = pixel_accuracy(model, images, labels, options.batch_size);
  return report;
}

double pixel_accuracy(const SegNet& model, const std::vector<Tensor>& images, const std::vector<LabelMap>& labels,
                      std::size_t batch_size) {
  NoGradGuard no_grad;
  std::size_t correct = 0, total = 0;
  for (std::size_t first = 0; first < images.size(); first += batch_size) {
    const std::size_t count = std::min(batch_size, images.size() - first);
    const Var probs = model.forward(stack_batch(std::span<const Tensor>(images).subspan(first, count)));
    for (std::size_t j = 0; j < count; ++j) {
      const LabelMap pred = argmax_channels(probs.value(), j);
      for (std::size_t i = 0; i < pred.size(); ++i) correct += pred.labels[i] == labels[first + j].labels[i];
      total += pred.size();
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

}  // namespace s4t
