#pragma once

#include <algorithm>
#include <vector>

#include "fedstage/model.hpp"
#include "fedstage/rng.hpp"

namespace testutil {

inline fedstage::ModelArchitecture tiny_arch(int num_classes = 0) {
  fedstage::ModelArchitecture arch;
  arch.patch_size = 2;
  arch.image_side = 4;
  arch.embed_dim = 3;
  arch.encoder_hidden = 4;
  if (num_classes > 0) arch = arch.with_head(num_classes);
  return arch;
}

// Two-class dataset of constant-intensity images: class k has per-pixel mean
// base + k * separation, with Gaussian pixel noise of the given sd.
inline fedstage::LabeledDataset gaussian_blob_dataset(int n, int image_side,
                                                      double separation,
                                                      double noise_sd,
                                                      uint64_t seed) {
  fedstage::LabeledDataset ds;
  ds.image_side = image_side;
  ds.num_classes = 2;
  ds.domain_id = "blobs";
  fedstage::SplitMix64 rng(seed);
  const size_t pixels = static_cast<size_t>(image_side) * image_side;
  for (int i = 0; i < n; ++i) {
    const int label = i % 2;
    const double mean = 0.25 + label * separation;
    std::vector<double> img(pixels);
    for (double& v : img) {
      v = std::clamp(rng.normal(mean, noise_sd), 0.0, 1.0);
    }
    ds.images.push_back(std::move(img));
    ds.labels.push_back(label);
  }
  return ds;
}

inline std::vector<double> random_image(int image_side, fedstage::SplitMix64& rng) {
  std::vector<double> img(static_cast<size_t>(image_side) * image_side);
  for (double& v : img) v = rng.next_double();
  return img;
}

}  // namespace testutil
