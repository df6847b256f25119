#include "fedstage/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fedstage/errors.hpp"
#include "fedstage/rng.hpp"

namespace fedstage {

Motif motif_from_string(const std::string& s) {
  if (s == "Blobs") return Motif::Blobs;
  if (s == "Stripes") return Motif::Stripes;
  if (s == "Rings") return Motif::Rings;
  if (s == "Checker") return Motif::Checker;
  fail(ErrorCode::Config, "unknown motif '" + s + "'");
}

std::string motif_to_string(Motif m) {
  switch (m) {
    case Motif::Blobs: return "Blobs";
    case Motif::Stripes: return "Stripes";
    case Motif::Rings: return "Rings";
    case Motif::Checker: return "Checker";
  }
  fail(ErrorCode::Config, "invalid motif value");
}

void DomainSpec::validate() const {
  if (num_classes < 2) fail(ErrorCode::Config, "domain needs num_classes >= 2");
  if (image_side < 2) fail(ErrorCode::Config, "image_side too small");
  if (!(class_separation > 0.0)) fail(ErrorCode::Config, "class_separation must be > 0");
  if (noise_sd < 0.0) fail(ErrorCode::Config, "noise_sd must be >= 0");
}

std::vector<double> render_motif(const DomainSpec& spec, int class_index) {
  const int s = spec.image_side;
  const double sep = spec.class_separation;
  const double k = static_cast<double>(class_index);
  std::vector<double> img(static_cast<size_t>(s) * s, 0.0);
  const double cx0 = (s - 1) / 2.0;
  const double cy0 = (s - 1) / 2.0;
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      double v = 0.0;
      switch (spec.motif) {
        case Motif::Blobs: {
          // Gaussian bump whose center walks along the diagonal with class.
          const double cx = cx0 + (k - (spec.num_classes - 1) / 2.0) * sep;
          const double cy = cy0 + (k - (spec.num_classes - 1) / 2.0) * sep * 0.5;
          const double sigma = s / 5.0;
          const double dx = x - cx;
          const double dy = y - cy;
          v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
          break;
        }
        case Motif::Stripes: {
          // Class offsets the stripe phase.
          const double period = s / 3.0;
          const double phase = k * sep;
          v = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * x / period + phase);
          break;
        }
        case Motif::Rings: {
          // Class changes the radial period.
          const double r = std::hypot(x - cx0, y - cy0);
          const double period = s / 4.0 + k * sep;
          v = 0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * r / period);
          break;
        }
        case Motif::Checker: {
          // Class changes the cell size.
          const int cell = std::clamp(
              static_cast<int>(std::lround(s / 4.0 + k * sep)), 1, s);
          v = ((x / cell + y / cell) % 2 == 0) ? 0.85 : 0.15;
          break;
        }
      }
      img[static_cast<size_t>(y) * s + x] = v;
    }
  }
  return img;
}

namespace {

std::vector<double> rotate_quarter(const std::vector<double>& img, int side, int steps) {
  std::vector<double> cur = img;
  steps = ((steps % 4) + 4) % 4;
  for (int t = 0; t < steps; ++t) {
    std::vector<double> next(cur.size());
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        // 90-degree clockwise turn.
        next[static_cast<size_t>(x) * side + (side - 1 - y)] =
            cur[static_cast<size_t>(y) * side + x];
      }
    }
    cur = std::move(next);
  }
  return cur;
}

std::vector<double> make_image(const DomainSpec& spec,
                               const std::vector<double>& base,
                               SplitMix64& rng) {
  std::vector<double> img(base.size());
  for (size_t i = 0; i < base.size(); ++i) {
    img[i] = base[i] + rng.normal(0.0, spec.noise_sd) + spec.intensity_shift;
  }
  img = rotate_quarter(img, spec.image_side, spec.rotation_steps);
  for (double& v : img) v = std::clamp(v, 0.0, 1.0);
  return img;
}

LabeledDataset make_split(const DomainSpec& spec,
                          const std::vector<std::vector<double>>& bases,
                          int n, uint64_t seed) {
  LabeledDataset ds;
  ds.image_side = spec.image_side;
  ds.num_classes = spec.num_classes;
  ds.domain_id = spec.domain_id;
  SplitMix64 rng(seed);
  for (int i = 0; i < n; ++i) {
    const int label = i % spec.num_classes;
    ds.images.push_back(make_image(spec, bases[static_cast<size_t>(label)], rng));
    ds.labels.push_back(label);
  }
  ds.validate();
  return ds;
}

}  // namespace

DatasetPair generate(const DomainSpec& spec, int n_train, int n_test) {
  spec.validate();
  if (n_train < 1 || n_test < 1) {
    fail(ErrorCode::InvalidRequest, "n_train and n_test must be >= 1");
  }
  std::vector<std::vector<double>> bases;
  bases.reserve(static_cast<size_t>(spec.num_classes));
  for (int k = 0; k < spec.num_classes; ++k) bases.push_back(render_motif(spec, k));

  SplitMix64 seeder(spec.seed);
  const uint64_t train_seed = seeder.next();
  const uint64_t test_seed = seeder.next();
  DatasetPair pair;
  pair.train = make_split(spec, bases, n_train, train_seed);
  pair.test = make_split(spec, bases, n_test, test_seed);
  return pair;
}

std::vector<std::vector<double>> generate_pretext_images(
    const std::vector<Motif>& motifs, int count, int image_side,
    double noise_sd, uint64_t seed) {
  if (motifs.empty()) fail(ErrorCode::Config, "pretext needs >= 1 motif");
  if (count < 1) fail(ErrorCode::Config, "pretext image count must be >= 1");
  constexpr int kVariants = 4;
  SplitMix64 rng(seed);
  std::vector<std::vector<double>> images;
  images.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    DomainSpec spec;
    spec.domain_id = "pretext";
    spec.num_classes = kVariants;
    spec.image_side = image_side;
    spec.motif = motifs[static_cast<size_t>(i) % motifs.size()];
    spec.class_separation = 1.5;
    spec.noise_sd = noise_sd;
    const std::vector<double> base = render_motif(spec, (i / static_cast<int>(motifs.size())) % kVariants);
    images.push_back(make_image(spec, base, rng));
  }
  return images;
}

}  // namespace fedstage
