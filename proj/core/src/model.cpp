#include "fedstage/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedstage/errors.hpp"
#include "fedstage/rng.hpp"

namespace fedstage {

ModelArchitecture ModelArchitecture::with_head(int classes) const {
  ModelArchitecture a = *this;
  a.kind = Kind::BackboneWithHead;
  a.num_classes = classes;
  a.validate();
  return a;
}

ModelArchitecture ModelArchitecture::backbone_only() const {
  ModelArchitecture a = *this;
  a.kind = Kind::BackboneOnly;
  a.num_classes = 0;
  return a;
}

void ModelArchitecture::validate() const {
  if (patch_size <= 0 || image_side <= 0 || embed_dim <= 0 || encoder_hidden <= 0) {
    fail(ErrorCode::InvalidRequest, "architecture dimensions must be positive");
  }
  if (image_side % patch_size != 0) {
    fail(ErrorCode::ShapeMismatch, "image_side must be divisible by patch_size");
  }
  if (kind == Kind::BackboneWithHead && num_classes < 2) {
    fail(ErrorCode::InvalidRequest, "classification head needs at least 2 classes");
  }
  if (kind == Kind::BackboneOnly && num_classes != 0) {
    fail(ErrorCode::InvalidRequest, "backbone-only architecture cannot have classes");
  }
}

void LabeledDataset::validate() const {
  if (images.empty() || images.size() != labels.size()) {
    fail(ErrorCode::ShapeMismatch, "dataset images/labels must be non-empty and equal length");
  }
  if (num_classes < 1) fail(ErrorCode::InvalidRequest, "dataset needs at least one class");
  const size_t pixels = static_cast<size_t>(image_side) * image_side;
  for (const auto& img : images) {
    if (img.size() != pixels) fail(ErrorCode::ShapeMismatch, "image size mismatch");
  }
  for (int l : labels) {
    if (l < 0 || l >= num_classes) fail(ErrorCode::InvalidRequest, "label out of range");
  }
}

TensorLayout layout_for(const ModelArchitecture& arch) {
  arch.validate();
  const auto ed = static_cast<uint32_t>(arch.embed_dim);
  const auto pd = static_cast<uint32_t>(arch.patch_dim());
  const auto hid = static_cast<uint32_t>(arch.encoder_hidden);
  TensorLayout layout;
  layout.entries = {
      {"patch_embed.weight", {ed, pd}},
      {"patch_embed.bias", {ed}},
      {"encoder.fc1.weight", {hid, ed}},
      {"encoder.fc1.bias", {hid}},
      {"encoder.fc2.weight", {ed, hid}},
      {"encoder.fc2.bias", {ed}},
  };
  if (arch.kind == ModelArchitecture::Kind::BackboneWithHead) {
    const auto nc = static_cast<uint32_t>(arch.num_classes);
    layout.entries.push_back({"head.weight", {nc, ed}});
    layout.entries.push_back({"head.bias", {nc}});
  }
  return layout;
}

double positional_encoding(int pos, int k, int embed_dim) {
  const double exponent = static_cast<double>(2 * (k / 2)) / embed_dim;
  const double angle = pos / std::pow(10000.0, exponent);
  return (k % 2 == 0) ? std::sin(angle) : std::cos(angle);
}

ParameterSet init_parameters(TensorLayout layout, uint64_t seed) {
  layout.validate();
  ParameterSet ps{std::move(layout), {}};
  ps.values.reserve(ps.layout.total());
  SplitMix64 rng(seed);
  for (const auto& e : ps.layout.entries) {
    const size_t n = e.count();
    if (e.name.ends_with(".bias")) {
      ps.values.insert(ps.values.end(), n, 0.0);
    } else {
      // Weights and the mask token: Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)),
      // fan_in = trailing dim.
      const double bound = 1.0 / std::sqrt(static_cast<double>(e.dims.back()));
      for (size_t i = 0; i < n; ++i) ps.values.push_back(rng.uniform(-bound, bound));
    }
  }
  return ps;
}

ParameterSet init_model(const ModelArchitecture& arch, uint64_t seed) {
  return init_parameters(layout_for(arch), seed);
}

ParameterSet attach_head(const ModelArchitecture& backbone_arch,
                         const ParameterSet& base, int num_classes,
                         uint64_t seed) {
  if (num_classes < 2) {
    fail(ErrorCode::InvalidRequest, "attach_head requires num_classes >= 2");
  }
  const ModelArchitecture bb = backbone_arch.backbone_only();
  if (base.layout != layout_for(bb)) {
    fail(ErrorCode::ShapeMismatch, "base parameters do not match the backbone layout");
  }
  const ModelArchitecture headed = bb.with_head(num_classes);
  ParameterSet out{layout_for(headed), base.values};
  SplitMix64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(bb.embed_dim));
  const size_t head_w = static_cast<size_t>(num_classes) * bb.embed_dim;
  out.values.reserve(out.layout.total());
  for (size_t i = 0; i < head_w; ++i) out.values.push_back(rng.uniform(-bound, bound));
  out.values.insert(out.values.end(), static_cast<size_t>(num_classes), 0.0);
  return out;
}

ParameterSet strip_head(const ModelArchitecture& backbone_arch,
                        const ParameterSet& with_head) {
  const TensorLayout bb_layout = layout_for(backbone_arch.backbone_only());
  if (with_head.values.size() < bb_layout.total()) {
    fail(ErrorCode::ShapeMismatch, "parameter set smaller than backbone layout");
  }
  ParameterSet out{bb_layout, {with_head.values.begin(),
                               with_head.values.begin() +
                                   static_cast<long>(bb_layout.total())}};
  return out;
}

namespace {

struct ModelView {
  std::span<const double> we, be, w1, b1, w2, b2, wh, bh;
};

ModelView view(const ModelArchitecture& arch, const ParameterSet& m) {
  if (m.layout != layout_for(arch)) {
    fail(ErrorCode::ShapeMismatch, "parameters do not match architecture layout");
  }
  ModelView v;
  v.we = m.entry("patch_embed.weight");
  v.be = m.entry("patch_embed.bias");
  v.w1 = m.entry("encoder.fc1.weight");
  v.b1 = m.entry("encoder.fc1.bias");
  v.w2 = m.entry("encoder.fc2.weight");
  v.b2 = m.entry("encoder.fc2.bias");
  if (arch.kind == ModelArchitecture::Kind::BackboneWithHead) {
    v.wh = m.entry("head.weight");
    v.bh = m.entry("head.bias");
  }
  return v;
}

// Intermediates kept for the backward pass.
struct ForwardCache {
  std::vector<double> patches;  // P x D, row-major
  std::vector<double> embeds;   // P x E (with positional encoding added)
  std::vector<double> hidden;   // P x H (post-tanh)
  std::vector<double> pooled;   // E
  std::vector<double> logits;   // C
};

void extract_patches(const ModelArchitecture& arch, std::span<const double> image,
                     std::vector<double>& patches) {
  const int ps = arch.patch_size;
  const int per_side = arch.patches_per_side();
  const int d = arch.patch_dim();
  patches.resize(static_cast<size_t>(arch.num_patches()) * d);
  for (int pr = 0; pr < per_side; ++pr) {
    for (int pc = 0; pc < per_side; ++pc) {
      double* dst = patches.data() + (static_cast<size_t>(pr) * per_side + pc) * d;
      for (int r = 0; r < ps; ++r) {
        const double* src = image.data() + (pr * ps + r) * arch.image_side + pc * ps;
        std::copy(src, src + ps, dst + r * ps);
      }
    }
  }
}

void forward_impl(const ModelArchitecture& arch, const ModelView& v,
                  std::span<const double> image, ForwardCache& c) {
  if (image.size() != static_cast<size_t>(arch.image_pixels())) {
    fail(ErrorCode::ShapeMismatch, "image does not match architecture dimensions");
  }
  const int P = arch.num_patches();
  const int D = arch.patch_dim();
  const int E = arch.embed_dim;
  const int H = arch.encoder_hidden;

  extract_patches(arch, image, c.patches);
  c.embeds.assign(static_cast<size_t>(P) * E, 0.0);
  c.hidden.assign(static_cast<size_t>(P) * H, 0.0);
  c.pooled.assign(E, 0.0);

  std::vector<double> token(E);
  for (int j = 0; j < P; ++j) {
    const double* patch = c.patches.data() + static_cast<size_t>(j) * D;
    double* emb = c.embeds.data() + static_cast<size_t>(j) * E;
    for (int k = 0; k < E; ++k) {
      double s = v.be[k];
      const double* row = v.we.data() + static_cast<size_t>(k) * D;
      for (int i = 0; i < D; ++i) s += row[i] * patch[i];
      emb[k] = s + positional_encoding(j, k, E);
    }
    double* hid = c.hidden.data() + static_cast<size_t>(j) * H;
    for (int k = 0; k < H; ++k) {
      double s = v.b1[k];
      const double* row = v.w1.data() + static_cast<size_t>(k) * E;
      for (int i = 0; i < E; ++i) s += row[i] * emb[i];
      hid[k] = std::tanh(s);
    }
    for (int k = 0; k < E; ++k) {
      double s = v.b2[k];
      const double* row = v.w2.data() + static_cast<size_t>(k) * H;
      for (int i = 0; i < H; ++i) s += row[i] * hid[i];
      token[k] = s;
      c.pooled[k] += s / P;
    }
  }

  const int C = arch.num_classes;
  c.logits.assign(C, 0.0);
  for (int k = 0; k < C; ++k) {
    double s = v.bh[k];
    const double* row = v.wh.data() + static_cast<size_t>(k) * E;
    for (int i = 0; i < E; ++i) s += row[i] * c.pooled[i];
    c.logits[k] = s;
  }
}

// Returns the cross-entropy loss; when grad != nullptr accumulates
// scale * dloss/dparams into it.
double example_loss_grad(const ModelArchitecture& arch, const ModelView& v,
                         ForwardCache& c, int label, const TensorLayout& layout,
                         std::vector<double>* grad, double scale) {
  const int P = arch.num_patches();
  const int D = arch.patch_dim();
  const int E = arch.embed_dim;
  const int H = arch.encoder_hidden;
  const int C = arch.num_classes;

  const double maxlog = *std::max_element(c.logits.begin(), c.logits.end());
  double sum = 0.0;
  for (double l : c.logits) sum += std::exp(l - maxlog);
  const double lse = maxlog + std::log(sum);
  const double loss = lse - c.logits[label];
  if (grad == nullptr) return loss;

  std::vector<double> dlogits(C);
  for (int k = 0; k < C; ++k) {
    dlogits[k] = std::exp(c.logits[k] - lse) - (k == label ? 1.0 : 0.0);
  }

  const size_t o_wh = layout.offset_of("head.weight");
  const size_t o_bh = layout.offset_of("head.bias");
  const size_t o_we = layout.offset_of("patch_embed.weight");
  const size_t o_be = layout.offset_of("patch_embed.bias");
  const size_t o_w1 = layout.offset_of("encoder.fc1.weight");
  const size_t o_b1 = layout.offset_of("encoder.fc1.bias");
  const size_t o_w2 = layout.offset_of("encoder.fc2.weight");
  const size_t o_b2 = layout.offset_of("encoder.fc2.bias");
  std::vector<double>& g = *grad;

  std::vector<double> dpooled(E, 0.0);
  for (int k = 0; k < C; ++k) {
    const double dk = dlogits[k] * scale;
    g[o_bh + k] += dk;
    const double* row = v.wh.data() + static_cast<size_t>(k) * E;
    for (int i = 0; i < E; ++i) {
      g[o_wh + static_cast<size_t>(k) * E + i] += dk * c.pooled[i];
      dpooled[i] += dlogits[k] * row[i];
    }
  }

  std::vector<double> dtoken(E), dhid(H), demb(E);
  for (int j = 0; j < P; ++j) {
    for (int k = 0; k < E; ++k) dtoken[k] = dpooled[k] / P;
    const double* hid = c.hidden.data() + static_cast<size_t>(j) * H;
    const double* emb = c.embeds.data() + static_cast<size_t>(j) * E;
    const double* patch = c.patches.data() + static_cast<size_t>(j) * D;

    std::fill(dhid.begin(), dhid.end(), 0.0);
    for (int k = 0; k < E; ++k) {
      const double dk = dtoken[k];
      g[o_b2 + k] += dk * scale;
      const double* row = v.w2.data() + static_cast<size_t>(k) * H;
      for (int i = 0; i < H; ++i) {
        g[o_w2 + static_cast<size_t>(k) * H + i] += dk * hid[i] * scale;
        dhid[i] += dk * row[i];
      }
    }

    std::fill(demb.begin(), demb.end(), 0.0);
    for (int k = 0; k < H; ++k) {
      const double da = dhid[k] * (1.0 - hid[k] * hid[k]);
      g[o_b1 + k] += da * scale;
      const double* row = v.w1.data() + static_cast<size_t>(k) * E;
      for (int i = 0; i < E; ++i) {
        g[o_w1 + static_cast<size_t>(k) * E + i] += da * emb[i] * scale;
        demb[i] += da * row[i];
      }
    }

    for (int k = 0; k < E; ++k) {
      const double de = demb[k];
      g[o_be + k] += de * scale;
      for (int i = 0; i < D; ++i) {
        g[o_we + static_cast<size_t>(k) * D + i] += de * patch[i] * scale;
      }
    }
  }
  return loss;
}

}  // namespace

std::vector<double> forward(const ModelArchitecture& arch,
                            const ParameterSet& model,
                            std::span<const double> image) {
  if (arch.kind != ModelArchitecture::Kind::BackboneWithHead) {
    fail(ErrorCode::InvalidRequest, "forward requires a classification head");
  }
  const ModelView v = view(arch, model);
  ForwardCache c;
  forward_impl(arch, v, image, c);
  for (double l : c.logits) {
    if (!std::isfinite(l)) fail(ErrorCode::Format, "non-finite logits");
  }
  return c.logits;
}

double cross_entropy_gradient(const ModelArchitecture& arch,
                              const ParameterSet& model,
                              const LabeledDataset& data,
                              std::span<const size_t> indices,
                              std::vector<double>& grad) {
  if (arch.num_classes != data.num_classes) {
    fail(ErrorCode::ShapeMismatch, "dataset class count does not match head");
  }
  if (indices.empty()) fail(ErrorCode::InvalidRequest, "empty batch");
  const ModelView v = view(arch, model);
  grad.assign(model.values.size(), 0.0);
  ForwardCache c;
  const double scale = 1.0 / static_cast<double>(indices.size());
  double loss = 0.0;
  for (size_t idx : indices) {
    forward_impl(arch, v, data.images[idx], c);
    loss += example_loss_grad(arch, v, c, data.labels[idx], model.layout, &grad, scale);
  }
  return loss * scale;
}

TrainResult train_sgd(const ModelArchitecture& arch, ParameterSet model,
                      const LabeledDataset& data, const SgdOptions& opt) {
  data.validate();
  if (opt.epochs < 1) fail(ErrorCode::InvalidRequest, "epochs must be >= 1");
  if (opt.lr < 0) fail(ErrorCode::InvalidRequest, "learning rate must be >= 0");
  if (opt.batch_size < 1) fail(ErrorCode::InvalidRequest, "batch_size must be >= 1");
  if (arch.num_classes != data.num_classes) {
    fail(ErrorCode::ShapeMismatch, "dataset class count does not match head");
  }
  const ModelView v = view(arch, model);
  (void)v;

  const size_t n = data.size();
  const size_t backbone_count = layout_for(arch.backbone_only()).total();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  SplitMix64 rng(opt.seed);

  TrainResult result;
  std::vector<double> grad;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (size_t start = 0; start < n; start += opt.batch_size) {
      const size_t end = std::min(n, start + opt.batch_size);
      std::span<const size_t> batch(order.data() + start, end - start);
      const double batch_loss = cross_entropy_gradient(arch, model, data, batch, grad);
      epoch_loss += batch_loss * static_cast<double>(batch.size());
      if (opt.freeze_backbone) {
        std::fill(grad.begin(), grad.begin() + static_cast<long>(backbone_count), 0.0);
      }
      for (size_t j = 0; j < model.values.size(); ++j) {
        model.values[j] -= opt.lr * grad[j];
      }
    }
    const double mean_loss = epoch_loss / static_cast<double>(n);
    if (!std::isfinite(mean_loss)) {
      fail(ErrorCode::TrainingDiverged,
           "training diverged at epoch " + std::to_string(epoch));
    }
    result.loss_history.push_back(mean_loss);
  }
  for (double x : model.values) {
    if (!std::isfinite(x)) {
      fail(ErrorCode::TrainingDiverged, "non-finite parameters after training");
    }
  }
  result.params = std::move(model);
  return result;
}

double evaluate(const ModelArchitecture& arch, const ParameterSet& model,
                const LabeledDataset& data) {
  data.validate();
  if (arch.num_classes != data.num_classes) {
    fail(ErrorCode::ShapeMismatch, "dataset class count does not match head");
  }
  size_t correct = 0;
  for (size_t i = 0; i < data.size(); ++i) {
    const std::vector<double> logits = forward(arch, model, data.images[i]);
    int best = 0;
    for (int k = 1; k < arch.num_classes; ++k) {
      if (logits[k] > logits[best]) best = k;  // ties keep the lowest index
    }
    if (best == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace fedstage
