#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedstage/model.hpp"
#include "fedstage/rng.hpp"
#include "fedstage/tensor.hpp"

namespace fedstage {

// Partition of the patch grid into visible and masked sets.
struct MaskPlan {
  int num_patches = 0;
  std::vector<int> visible;  // sorted
  std::vector<int> masked;   // sorted

  void validate() const;
};

struct MimConfig {
  double visible_fraction = 0.25;
  int epochs = 1;
  double lr = 0.05;
  int batch_size = 8;
  uint64_t seed = 0;
  int decoder_hidden = 16;
};

std::vector<std::vector<double>> patchify(std::span<const double> image,
                                          int image_side, int patch_size);
std::vector<double> unpatchify(const std::vector<std::vector<double>>& patches,
                               int image_side, int patch_size);

// Uniform random split without replacement; |visible| = round(fraction * P)
// clamped to [1, P]. Fisher-Yates partial shuffle on the caller's stream.
MaskPlan sample_mask(int num_patches, double visible_fraction, SplitMix64& rng);

// Backbone entries first (prefix-compatible with layout_for), then the
// learnable mask token and the pixel decoder.
TensorLayout mim_layout(const ModelArchitecture& arch, int decoder_hidden);

ParameterSet init_mim_model(const ModelArchitecture& arch, int decoder_hidden,
                            uint64_t seed);

// Encodes the visible patches, assembles the decoder input sequence (encoded
// tokens at visible positions, the shared mask token at masked positions,
// positional encodings added to all), and returns the predicted pixel vector
// for each masked position, in plan.masked order.
std::vector<std::vector<double>> mim_forward(
    const ModelArchitecture& arch, int decoder_hidden, const ParameterSet& params,
    const std::vector<std::vector<double>>& patches, const MaskPlan& plan);

// Mean squared error over masked-patch pixels only.
double mim_loss(const std::vector<std::vector<double>>& predictions,
                const std::vector<std::vector<double>>& patches,
                const MaskPlan& plan);

// Loss plus scale * dloss/dparams accumulated into grad (grad must be sized
// to the MIM layout and zeroed by the caller on first use).
double mim_loss_gradient(const ModelArchitecture& arch, int decoder_hidden,
                         const ParameterSet& params,
                         const std::vector<std::vector<double>>& patches,
                         const MaskPlan& plan, std::vector<double>& grad,
                         double scale);

struct PretrainResult {
  ParameterSet backbone;             // encoder weights only
  std::vector<double> loss_history;  // mean masked-pixel MSE per epoch
};

PretrainResult pretrain(const std::vector<std::vector<double>>& images,
                        const ModelArchitecture& arch, const MimConfig& config);

}  // namespace fedstage
