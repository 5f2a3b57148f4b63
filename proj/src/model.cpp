#include "masm/model.hpp"

#include <cmath>
#include <string>

#include "masm/errors.hpp"
#include "masm/modality_aware.hpp"
#include "masm/modality_shift.hpp"
#include "masm/ops.hpp"

namespace masm {

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// fan_in/fan_out for Glorot: matrices are [in, out]; conv kernels are
// [out_ch, in_ch, k, k, k] with the kernel volume on both fans.
std::pair<double, double> fans(const Shape& s) {
  if (s.size() == 2) return {double(s[0]), double(s[1])};
  std::size_t kernel = 1;
  for (std::size_t i = 2; i < s.size(); ++i) kernel *= s[i];
  return {double(s[1] * kernel), double(s[0] * kernel)};
}

}  // namespace

MasmModel::MasmModel(BackboneConfig cfg, Toggles toggles)
    : cfg_(std::move(cfg)), toggles_(toggles) {
  for (const ParamSpec& spec : parameter_specs(cfg_, toggles_)) {
    names_.push_back(spec.name);
    index_[spec.name] = params_.size();
    params_.push_back(Tensor::param(
        spec.shape, std::vector<double>(shape_numel(spec.shape))));
  }
}

void MasmModel::init(std::uint64_t seed) {
  Rng rng = Rng(seed).derived(0);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    std::vector<double>& v = p.mutable_values();
    if (p.rank() >= 2) {
      auto [fan_in, fan_out] = fans(p.shape());
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      for (double& x : v) x = rng.next_uniform(-limit, limit);
    } else {
      const double fill = ends_with(names_[i], ".gamma") ? 1.0 : 0.0;
      for (double& x : v) x = fill;
    }
    p.zero_grad();
  }
}

const Tensor& MasmModel::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw ConfigError("no parameter named " + name);
  }
  return params_[it->second];
}

std::size_t MasmModel::scalar_count() const {
  std::size_t total = 0;
  for (const Tensor& p : params_) total += p.size();
  return total;
}

void MasmModel::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

Tensor MasmModel::instance_norm(const Tensor& x,
                                const std::string& prefix) const {
  const Shape& s = x.shape();
  const std::size_t c = s[0];
  const std::size_t n = s[1] * s[2] * s[3];
  Tensor flat = layernorm_last(reshape(x, {c, n}));
  Tensor y = add(mul(flat, reshape(param(prefix + ".gamma"), {c, 1})),
                 reshape(param(prefix + ".beta"), {c, 1}));
  return reshape(y, s);
}

Tensor MasmModel::encode_block(const Tensor& x, const std::string& base,
                               std::size_t which, std::size_t stride) const {
  const std::string n = std::to_string(which);
  Tensor y = conv3d(x, param(base + "conv" + n + ".weight"),
                    param(base + "conv" + n + ".bias"), stride, 1);
  return relu(instance_norm(y, base + "norm" + n));
}

Tensor MasmModel::fuse_layer(const std::array<Tensor, 4>& streams,
                             std::size_t layer, Rng* rng, GateMode gate,
                             double tau) const {
  const std::size_t ext = layer_extent(cfg_, layer);
  const bool aware_here = toggles_.aware && layer < cfg_.depth;
  const bool shift_here = toggles_.shift && layer == cfg_.depth;
  if (!aware_here && !shift_here) {
    return concat({streams[0], streams[1], streams[2], streams[3]}, 0);
  }

  std::array<Tensor, 4> tokens;
  for (std::size_t m = 0; m < 4; ++m) tokens[m] = to_tokens(streams[m]);

  Tensor fused_tokens;
  if (aware_here) {
    const std::string base = "aware.l" + std::to_string(layer) + ".";
    MaskPredictorParams predictor{
        param(base + "mask.local.weight"), param(base + "mask.local.bias"),
        param(base + "mask.decide.weight"), param(base + "mask.decide.bias")};
    auto pair_params = [&](const char* tag) {
      const std::string p = base + tag;
      return PairAttentionParams{param(p + "wq"),     param(p + "wk"),
                                 param(p + "wv"),     param(p + "ffn.w0"),
                                 param(p + "ffn.b0"), param(p + "ffn.w1"),
                                 param(p + "ffn.b1")};
    };
    fused_tokens =
        modality_aware_forward(tokens, predictor, pair_params("pair14."),
                               pair_params("pair23."), tau, rng, gate);
  } else {
    auto mha_params = [&](const char* tag) {
      const std::string p = std::string("shift.") + tag;
      return MhaParams{param(p + ".ln.gamma"), param(p + ".ln.beta"),
                       param(p + ".wq"),       param(p + ".wk"),
                       param(p + ".wv"),       param(p + ".wo"),
                       cfg_.heads};
    };
    fused_tokens = modality_shift_forward(tokens, mha_params("spatial"),
                                          mha_params("modal"),
                                          build_pattern(tokens[0].extent(0)));
  }
  return from_tokens(fused_tokens, {ext, ext, ext});
}

Tensor MasmModel::forward(const std::vector<std::vector<double>>& modalities,
                          Rng* rng, GateMode gate, double tau,
                          ForwardTrace* trace) const {
  const std::size_t v = cfg_.volume;
  if (modalities.size() != 4) {
    throw ShapeError("forward expects 4 modality rasters, got " +
                     std::to_string(modalities.size()));
  }
  std::array<Tensor, 4> streams;
  for (std::size_t m = 0; m < 4; ++m) {
    if (modalities[m].size() != v * v * v) {
      throw ShapeError("modality " + std::to_string(m + 1) + " has " +
                       std::to_string(modalities[m].size()) +
                       " voxels, expected " + std::to_string(v * v * v));
    }
    streams[m] = Tensor::from({1, v, v, v}, modalities[m]);
  }

  if (trace != nullptr) {
    trace->encoder.clear();
    trace->fused.clear();
  }

  // Shared encoder: every modality passes through the same weights; each
  // layer halves the extent via the stride-2 first conv.
  std::vector<Tensor> fused(cfg_.depth + 1);
  for (std::size_t j = 1; j <= cfg_.depth; ++j) {
    const std::string base = "enc.l" + std::to_string(j) + ".";
    for (std::size_t m = 0; m < 4; ++m) {
      streams[m] = encode_block(streams[m], base, 1, 2);
      streams[m] = encode_block(streams[m], base, 2, 1);
    }
    if (trace != nullptr) {
      trace->encoder.push_back({streams[0].shape(), streams[1].shape(),
                                streams[2].shape(), streams[3].shape()});
    }
    fused[j] = fuse_layer(streams, j, rng, gate, tau);
    if (trace != nullptr) trace->fused.push_back(fused[j].shape());
  }

  Tensor x = fused[cfg_.depth];
  for (std::size_t j = cfg_.depth; j >= 2; --j) {
    const std::string base = "dec.s" + std::to_string(j) + ".";
    x = conv3d(x, param(base + "conv.weight"), param(base + "conv.bias"), 1,
               1);
    x = relu(instance_norm(x, base + "norm"));
    x = concat({upsample_nearest2x(x), fused[j - 1]}, 0);
  }
  x = conv3d(x, param("dec.final.conv.weight"), param("dec.final.conv.bias"),
             1, 1);
  x = relu(instance_norm(x, "dec.final.norm"));
  x = upsample_nearest2x(x);

  Tensor h = relu(conv3d(x, param("head.conv1.weight"),
                         param("head.conv1.bias"), 1, 1));
  Tensor logits =
      conv3d(h, param("head.conv2.weight"), param("head.conv2.bias"), 1, 0);
  return sigmoid(logits);
}

std::vector<NamedValues> MasmModel::state() const {
  std::vector<NamedValues> out;
  out.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.push_back(NamedValues{names_[i], params_[i].shape(),
                              params_[i].values()});
  }
  return out;
}

void MasmModel::load_state(const std::vector<NamedValues>& records) {
  std::vector<bool> covered(params_.size(), false);
  for (const NamedValues& rec : records) {
    auto it = index_.find(rec.name);
    if (it == index_.end()) {
      throw ConfigError("checkpoint has unknown parameter " + rec.name);
    }
    if (covered[it->second]) {
      throw ConfigError("checkpoint repeats parameter " + rec.name);
    }
    Tensor& p = params_[it->second];
    if (rec.shape != p.shape()) {
      throw ConfigError("checkpoint parameter " + rec.name + " has shape " +
                        shape_str(rec.shape) + ", model expects " +
                        shape_str(p.shape()));
    }
    p.mutable_values() = rec.values;
    p.zero_grad();
    covered[it->second] = true;
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!covered[i]) {
      throw ConfigError("checkpoint is missing parameter " + names_[i]);
    }
  }
}

}  // namespace masm
