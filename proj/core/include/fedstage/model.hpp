#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedstage/tensor.hpp"

namespace fedstage {

// Token pipeline: linear patch embedding + fixed sinusoidal positional
// encodings + a shared two-layer per-token tanh MLP + mean pooling, with an
// optional linear classification head.
struct ModelArchitecture {
  enum class Kind { BackboneOnly, BackboneWithHead };

  Kind kind = Kind::BackboneOnly;
  int patch_size = 4;
  int image_side = 16;
  int embed_dim = 8;
  int encoder_hidden = 16;
  int num_classes = 0;  // 0 when BackboneOnly

  int patch_dim() const { return patch_size * patch_size; }
  int patches_per_side() const { return image_side / patch_size; }
  int num_patches() const { return patches_per_side() * patches_per_side(); }
  int image_pixels() const { return image_side * image_side; }

  ModelArchitecture with_head(int classes) const;
  ModelArchitecture backbone_only() const;

  void validate() const;  // throws on violated invariants
  bool operator==(const ModelArchitecture&) const = default;
};

struct LabeledDataset {
  int image_side = 0;
  std::vector<std::vector<double>> images;  // row-major, values in [0,1]
  std::vector<int> labels;
  int num_classes = 0;
  std::string domain_id;

  size_t size() const { return images.size(); }
  void validate() const;
};

TensorLayout layout_for(const ModelArchitecture& arch);

// Fixed sinusoidal positional encoding for token `pos`, channel `k`.
double positional_encoding(int pos, int k, int embed_dim);

// Fills a layout deterministically: entries named "*.bias" start at zero,
// everything else is Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) with fan_in
// taken from the trailing dim.
ParameterSet init_parameters(TensorLayout layout, uint64_t seed);

ParameterSet init_model(const ModelArchitecture& arch, uint64_t seed);

// Copies the backbone bit-exactly and appends a freshly initialized linear
// head for `num_classes` outputs.
ParameterSet attach_head(const ModelArchitecture& backbone_arch,
                         const ParameterSet& base, int num_classes,
                         uint64_t seed);

// Inverse of attach_head's extension: drops the head entries.
ParameterSet strip_head(const ModelArchitecture& backbone_arch,
                        const ParameterSet& with_head);

std::vector<double> forward(const ModelArchitecture& arch,
                            const ParameterSet& model,
                            std::span<const double> image);

// Mean cross-entropy over the given examples and its gradient with respect to
// every parameter (same flat layout as `model`).
double cross_entropy_gradient(const ModelArchitecture& arch,
                              const ParameterSet& model,
                              const LabeledDataset& data,
                              std::span<const size_t> indices,
                              std::vector<double>& grad);

struct SgdOptions {
  int epochs = 1;
  double lr = 0.1;
  int batch_size = 16;
  uint64_t seed = 0;
  bool freeze_backbone = false;
};

struct TrainResult {
  ParameterSet params;
  std::vector<double> loss_history;  // mean cross-entropy per epoch
};

TrainResult train_sgd(const ModelArchitecture& arch, ParameterSet model,
                      const LabeledDataset& data, const SgdOptions& opt);

// Fraction of examples whose argmax logit (ties to the lowest class index)
// matches the label.
double evaluate(const ModelArchitecture& arch, const ParameterSet& model,
                const LabeledDataset& data);

}  // namespace fedstage
