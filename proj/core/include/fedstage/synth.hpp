#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedstage/model.hpp"

namespace fedstage {

enum class Motif { Blobs, Stripes, Rings, Checker };

Motif motif_from_string(const std::string& s);
std::string motif_to_string(Motif m);

// Declarative description of a synthetic classification domain. The motif
// and its class-dependent parameters carry the class signal; noise,
// intensity shift, and rotation are the domain-shift knobs.
struct DomainSpec {
  std::string domain_id;
  int num_classes = 2;
  int image_side = 16;
  Motif motif = Motif::Blobs;
  double class_separation = 1.0;
  double noise_sd = 0.05;
  double intensity_shift = 0.0;
  int rotation_steps = 0;  // quarter-turns
  uint64_t seed = 0;

  void validate() const;
};

struct DatasetPair {
  LabeledDataset train;
  LabeledDataset test;
};

// Noiseless class template, before noise / shift / rotation.
std::vector<double> render_motif(const DomainSpec& spec, int class_index);

// Deterministic per seed; train and test draw from disjoint PRNG substreams.
// Labels are assigned round-robin, so class counts stay within one of n/C.
DatasetPair generate(const DomainSpec& spec, int n_train, int n_test);

// Unlabeled pretext images cycling through the given motifs and a few
// synthetic class variants, for MIM pre-training.
std::vector<std::vector<double>> generate_pretext_images(
    const std::vector<Motif>& motifs, int count, int image_side,
    double noise_sd, uint64_t seed);

}  // namespace fedstage
