#include "fedstage/mim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedstage/errors.hpp"

namespace fedstage {

void MaskPlan::validate() const {
  if (num_patches < 1) fail(ErrorCode::InvalidRequest, "mask plan needs >= 1 patch");
  if (static_cast<int>(visible.size() + masked.size()) != num_patches) {
    fail(ErrorCode::ShapeMismatch, "mask plan does not cover the patch set");
  }
  std::vector<char> seen(static_cast<size_t>(num_patches), 0);
  for (const auto* set : {&visible, &masked}) {
    for (int idx : *set) {
      if (idx < 0 || idx >= num_patches || seen[static_cast<size_t>(idx)]) {
        fail(ErrorCode::ShapeMismatch, "mask plan indices overlap or out of range");
      }
      seen[static_cast<size_t>(idx)] = 1;
    }
  }
  if (!std::is_sorted(visible.begin(), visible.end()) ||
      !std::is_sorted(masked.begin(), masked.end())) {
    fail(ErrorCode::ShapeMismatch, "mask plan sets must be sorted");
  }
  if (visible.empty()) fail(ErrorCode::InvalidRequest, "mask plan needs >= 1 visible patch");
}

std::vector<std::vector<double>> patchify(std::span<const double> image,
                                          int image_side, int patch_size) {
  if (patch_size <= 0 || image_side <= 0 || image_side % patch_size != 0) {
    fail(ErrorCode::ShapeMismatch, "image_side must be divisible by patch_size");
  }
  if (image.size() != static_cast<size_t>(image_side) * image_side) {
    fail(ErrorCode::ShapeMismatch, "image size mismatch");
  }
  const int per_side = image_side / patch_size;
  std::vector<std::vector<double>> patches;
  patches.reserve(static_cast<size_t>(per_side) * per_side);
  for (int pr = 0; pr < per_side; ++pr) {
    for (int pc = 0; pc < per_side; ++pc) {
      std::vector<double> patch(static_cast<size_t>(patch_size) * patch_size);
      for (int r = 0; r < patch_size; ++r) {
        const double* src = image.data() + (pr * patch_size + r) * image_side +
                            pc * patch_size;
        std::copy(src, src + patch_size, patch.data() + r * patch_size);
      }
      patches.push_back(std::move(patch));
    }
  }
  return patches;
}

std::vector<double> unpatchify(const std::vector<std::vector<double>>& patches,
                               int image_side, int patch_size) {
  const int per_side = image_side / patch_size;
  if (static_cast<int>(patches.size()) != per_side * per_side) {
    fail(ErrorCode::ShapeMismatch, "patch count mismatch");
  }
  std::vector<double> image(static_cast<size_t>(image_side) * image_side);
  for (int pr = 0; pr < per_side; ++pr) {
    for (int pc = 0; pc < per_side; ++pc) {
      const auto& patch = patches[static_cast<size_t>(pr) * per_side + pc];
      if (patch.size() != static_cast<size_t>(patch_size) * patch_size) {
        fail(ErrorCode::ShapeMismatch, "patch size mismatch");
      }
      for (int r = 0; r < patch_size; ++r) {
        std::copy(patch.data() + r * patch_size, patch.data() + (r + 1) * patch_size,
                  image.data() + (pr * patch_size + r) * image_side + pc * patch_size);
      }
    }
  }
  return image;
}

MaskPlan sample_mask(int num_patches, double visible_fraction, SplitMix64& rng) {
  if (num_patches < 1) fail(ErrorCode::InvalidRequest, "num_patches must be >= 1");
  if (!(visible_fraction > 0.0) || visible_fraction > 1.0) {
    fail(ErrorCode::InvalidRequest, "visible_fraction must be in (0, 1]");
  }
  long long visible_count = std::llround(visible_fraction * num_patches);
  visible_count = std::clamp<long long>(visible_count, 1, num_patches);

  std::vector<int> idx(static_cast<size_t>(num_patches));
  std::iota(idx.begin(), idx.end(), 0);
  for (long long i = 0; i < visible_count; ++i) {
    const auto j = i + static_cast<long long>(rng.below(
                           static_cast<uint64_t>(num_patches - i)));
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }

  MaskPlan plan;
  plan.num_patches = num_patches;
  plan.visible.assign(idx.begin(), idx.begin() + visible_count);
  plan.masked.assign(idx.begin() + visible_count, idx.end());
  std::sort(plan.visible.begin(), plan.visible.end());
  std::sort(plan.masked.begin(), plan.masked.end());
  return plan;
}

TensorLayout mim_layout(const ModelArchitecture& arch, int decoder_hidden) {
  if (decoder_hidden < 1) fail(ErrorCode::InvalidRequest, "decoder_hidden must be >= 1");
  TensorLayout layout = layout_for(arch.backbone_only());
  const auto ed = static_cast<uint32_t>(arch.embed_dim);
  const auto dh = static_cast<uint32_t>(decoder_hidden);
  const auto pd = static_cast<uint32_t>(arch.patch_dim());
  layout.entries.push_back({"mask_token", {ed}});
  layout.entries.push_back({"decoder.fc1.weight", {dh, ed}});
  layout.entries.push_back({"decoder.fc1.bias", {dh}});
  layout.entries.push_back({"decoder.fc2.weight", {pd, dh}});
  layout.entries.push_back({"decoder.fc2.bias", {pd}});
  return layout;
}

ParameterSet init_mim_model(const ModelArchitecture& arch, int decoder_hidden,
                            uint64_t seed) {
  return init_parameters(mim_layout(arch, decoder_hidden), seed);
}

namespace {

struct MimView {
  std::span<const double> we, be, w1, b1, w2, b2;
  std::span<const double> mask_token, wd1, bd1, wd2, bd2;
};

MimView mim_view(const ModelArchitecture& arch, int decoder_hidden,
                 const ParameterSet& p) {
  if (p.layout != mim_layout(arch, decoder_hidden)) {
    fail(ErrorCode::ShapeMismatch, "parameters do not match the MIM layout");
  }
  MimView v;
  v.we = p.entry("patch_embed.weight");
  v.be = p.entry("patch_embed.bias");
  v.w1 = p.entry("encoder.fc1.weight");
  v.b1 = p.entry("encoder.fc1.bias");
  v.w2 = p.entry("encoder.fc2.weight");
  v.b2 = p.entry("encoder.fc2.bias");
  v.mask_token = p.entry("mask_token");
  v.wd1 = p.entry("decoder.fc1.weight");
  v.bd1 = p.entry("decoder.fc1.bias");
  v.wd2 = p.entry("decoder.fc2.weight");
  v.bd2 = p.entry("decoder.fc2.bias");
  return v;
}

// Encoder applied to one visible patch at original position `pos`.
void encode_token(const ModelArchitecture& arch, const MimView& v,
                  std::span<const double> patch, int pos, std::vector<double>& out) {
  const int E = arch.embed_dim;
  const int H = arch.encoder_hidden;
  const int D = arch.patch_dim();
  std::vector<double> emb(E), hid(H);
  for (int k = 0; k < E; ++k) {
    double s = v.be[k];
    const double* row = v.we.data() + static_cast<size_t>(k) * D;
    for (int i = 0; i < D; ++i) s += row[i] * patch[i];
    emb[k] = s + positional_encoding(pos, k, E);
  }
  for (int k = 0; k < H; ++k) {
    double s = v.b1[k];
    const double* row = v.w1.data() + static_cast<size_t>(k) * E;
    for (int i = 0; i < E; ++i) s += row[i] * emb[i];
    hid[k] = std::tanh(s);
  }
  out.resize(E);
  for (int k = 0; k < E; ++k) {
    double s = v.b2[k];
    const double* row = v.w2.data() + static_cast<size_t>(k) * H;
    for (int i = 0; i < H; ++i) s += row[i] * hid[i];
    out[k] = s;
  }
}

// Decoder applied to one token; caches the hidden activations when asked.
void decode_token(const ModelArchitecture& arch, int decoder_hidden,
                  const MimView& v, std::span<const double> token,
                  std::vector<double>& pred, std::vector<double>* hidden) {
  const int E = arch.embed_dim;
  const int D = arch.patch_dim();
  std::vector<double> hid(static_cast<size_t>(decoder_hidden));
  for (int k = 0; k < decoder_hidden; ++k) {
    double s = v.bd1[k];
    const double* row = v.wd1.data() + static_cast<size_t>(k) * E;
    for (int i = 0; i < E; ++i) s += row[i] * token[i];
    hid[static_cast<size_t>(k)] = std::tanh(s);
  }
  pred.resize(static_cast<size_t>(D));
  for (int k = 0; k < D; ++k) {
    double s = v.bd2[k];
    const double* row = v.wd2.data() + static_cast<size_t>(k) * decoder_hidden;
    for (int i = 0; i < decoder_hidden; ++i) s += row[i] * hid[static_cast<size_t>(i)];
    pred[static_cast<size_t>(k)] = s;
  }
  if (hidden != nullptr) *hidden = std::move(hid);
}

void check_patches(const ModelArchitecture& arch,
                   const std::vector<std::vector<double>>& patches,
                   const MaskPlan& plan) {
  plan.validate();
  if (static_cast<int>(patches.size()) != plan.num_patches ||
      plan.num_patches != arch.num_patches()) {
    fail(ErrorCode::ShapeMismatch, "patch list does not match the mask plan");
  }
  for (const auto& p : patches) {
    if (p.size() != static_cast<size_t>(arch.patch_dim())) {
      fail(ErrorCode::ShapeMismatch, "patch dimension mismatch");
    }
  }
}

}  // namespace

std::vector<std::vector<double>> mim_forward(
    const ModelArchitecture& arch, int decoder_hidden, const ParameterSet& params,
    const std::vector<std::vector<double>>& patches, const MaskPlan& plan) {
  const MimView v = mim_view(arch, decoder_hidden, params);
  check_patches(arch, patches, plan);
  const int E = arch.embed_dim;

  // Decoder input sequence: encoded tokens at visible positions, the shared
  // mask token at masked positions, positional encodings added to all.
  std::vector<std::vector<double>> decoder_in(patches.size());
  std::vector<double> enc;
  for (int pos : plan.visible) {
    encode_token(arch, v, patches[static_cast<size_t>(pos)], pos, enc);
    auto& tok = decoder_in[static_cast<size_t>(pos)];
    tok.resize(static_cast<size_t>(E));
    for (int k = 0; k < E; ++k) tok[static_cast<size_t>(k)] = enc[static_cast<size_t>(k)] + positional_encoding(pos, k, E);
  }
  for (int pos : plan.masked) {
    auto& tok = decoder_in[static_cast<size_t>(pos)];
    tok.resize(static_cast<size_t>(E));
    for (int k = 0; k < E; ++k) tok[static_cast<size_t>(k)] = v.mask_token[static_cast<size_t>(k)] + positional_encoding(pos, k, E);
  }

  std::vector<std::vector<double>> predictions;
  predictions.reserve(plan.masked.size());
  std::vector<double> pred;
  for (int pos : plan.masked) {
    decode_token(arch, decoder_hidden, v, decoder_in[static_cast<size_t>(pos)], pred, nullptr);
    predictions.push_back(pred);
  }
  return predictions;
}

double mim_loss(const std::vector<std::vector<double>>& predictions,
                const std::vector<std::vector<double>>& patches,
                const MaskPlan& plan) {
  plan.validate();
  if (predictions.size() != plan.masked.size()) {
    fail(ErrorCode::ShapeMismatch, "predictions do not align with masked positions");
  }
  if (plan.masked.empty()) return 0.0;
  double sum = 0.0;
  size_t count = 0;
  for (size_t m = 0; m < plan.masked.size(); ++m) {
    const auto& truth = patches.at(static_cast<size_t>(plan.masked[m]));
    const auto& pred = predictions[m];
    if (pred.size() != truth.size()) {
      fail(ErrorCode::ShapeMismatch, "prediction pixel count mismatch");
    }
    for (size_t i = 0; i < truth.size(); ++i) {
      const double d = pred[i] - truth[i];
      sum += d * d;
    }
    count += truth.size();
  }
  return sum / static_cast<double>(count);
}

double mim_loss_gradient(const ModelArchitecture& arch, int decoder_hidden,
                         const ParameterSet& params,
                         const std::vector<std::vector<double>>& patches,
                         const MaskPlan& plan, std::vector<double>& grad,
                         double scale) {
  const MimView v = mim_view(arch, decoder_hidden, params);
  check_patches(arch, patches, plan);
  if (grad.size() != params.values.size()) {
    fail(ErrorCode::ShapeMismatch, "gradient buffer size mismatch");
  }
  if (plan.masked.empty()) return 0.0;

  const int E = arch.embed_dim;
  const int D = arch.patch_dim();
  const size_t o_mt = params.layout.offset_of("mask_token");
  const size_t o_wd1 = params.layout.offset_of("decoder.fc1.weight");
  const size_t o_bd1 = params.layout.offset_of("decoder.fc1.bias");
  const size_t o_wd2 = params.layout.offset_of("decoder.fc2.weight");
  const size_t o_bd2 = params.layout.offset_of("decoder.fc2.bias");

  const double denom = static_cast<double>(plan.masked.size()) * D;
  double loss_sum = 0.0;
  std::vector<double> token(static_cast<size_t>(E)), pred, hid;
  std::vector<double> dhid(static_cast<size_t>(decoder_hidden));
  for (int pos : plan.masked) {
    for (int k = 0; k < E; ++k) {
      token[static_cast<size_t>(k)] = v.mask_token[static_cast<size_t>(k)] + positional_encoding(pos, k, E);
    }
    decode_token(arch, decoder_hidden, v, token, pred, &hid);
    const auto& truth = patches[static_cast<size_t>(pos)];

    std::fill(dhid.begin(), dhid.end(), 0.0);
    for (int k = 0; k < D; ++k) {
      const double diff = pred[static_cast<size_t>(k)] - truth[static_cast<size_t>(k)];
      loss_sum += diff * diff;
      const double dp = 2.0 * diff / denom;
      grad[o_bd2 + static_cast<size_t>(k)] += dp * scale;
      const double* row = v.wd2.data() + static_cast<size_t>(k) * decoder_hidden;
      for (int i = 0; i < decoder_hidden; ++i) {
        grad[o_wd2 + static_cast<size_t>(k) * decoder_hidden + i] += dp * hid[static_cast<size_t>(i)] * scale;
        dhid[static_cast<size_t>(i)] += dp * row[i];
      }
    }
    for (int k = 0; k < decoder_hidden; ++k) {
      const double da = dhid[static_cast<size_t>(k)] * (1.0 - hid[static_cast<size_t>(k)] * hid[static_cast<size_t>(k)]);
      grad[o_bd1 + static_cast<size_t>(k)] += da * scale;
      const double* row = v.wd1.data() + static_cast<size_t>(k) * E;
      for (int i = 0; i < E; ++i) {
        grad[o_wd1 + static_cast<size_t>(k) * E + i] += da * token[static_cast<size_t>(i)] * scale;
        grad[o_mt + static_cast<size_t>(i)] += da * row[i] * scale;
      }
    }
  }
  return loss_sum / denom;
}

PretrainResult pretrain(const std::vector<std::vector<double>>& images,
                        const ModelArchitecture& arch, const MimConfig& config) {
  if (images.empty()) fail(ErrorCode::InvalidRequest, "pretrain needs >= 1 image");
  if (config.epochs < 1) fail(ErrorCode::InvalidRequest, "epochs must be >= 1");
  if (config.batch_size < 1) fail(ErrorCode::InvalidRequest, "batch_size must be >= 1");
  const ModelArchitecture bb = arch.backbone_only();
  bb.validate();

  SplitMix64 seeder(config.seed);
  const uint64_t init_seed = seeder.next();
  SplitMix64 run_rng(seeder.next());

  ParameterSet params = init_mim_model(bb, config.decoder_hidden, init_seed);

  std::vector<std::vector<std::vector<double>>> patches;
  patches.reserve(images.size());
  for (const auto& img : images) {
    patches.push_back(patchify(img, bb.image_side, bb.patch_size));
  }

  const size_t n = images.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  PretrainResult result;
  std::vector<double> grad;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    run_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (size_t start = 0; start < n; start += config.batch_size) {
      const size_t end = std::min(n, start + config.batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      grad.assign(params.values.size(), 0.0);
      for (size_t b = start; b < end; ++b) {
        const auto& img_patches = patches[order[b]];
        const MaskPlan plan = sample_mask(bb.num_patches(), config.visible_fraction, run_rng);
        epoch_loss += mim_loss_gradient(bb, config.decoder_hidden, params,
                                        img_patches, plan, grad, scale);
      }
      for (size_t j = 0; j < params.values.size(); ++j) {
        params.values[j] -= config.lr * grad[j];
      }
    }
    const double mean_loss = epoch_loss / static_cast<double>(n);
    if (!std::isfinite(mean_loss)) {
      fail(ErrorCode::TrainingDiverged,
           "pretraining diverged at epoch " + std::to_string(epoch));
    }
    result.loss_history.push_back(mean_loss);
  }

  // Encoder weights only; decoder and mask token are pretext scaffolding.
  const TensorLayout bb_layout = layout_for(bb);
  result.backbone = ParameterSet{
      bb_layout,
      {params.values.begin(), params.values.begin() + static_cast<long>(bb_layout.total())}};
  result.backbone.check();
  return result;
}

}  // namespace fedstage
