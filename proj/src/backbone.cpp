#include "masm/backbone.hpp"

#include <string>

#include "masm/errors.hpp"
#include "masm/ops.hpp"

namespace masm {

void validate_config(const BackboneConfig& cfg, const Toggles& toggles) {
  if (cfg.depth < 2) {
    throw ConfigError("depth must be at least 2, got " +
                      std::to_string(cfg.depth));
  }
  if (cfg.channels.size() != cfg.depth) {
    throw ConfigError("channels list has " +
                      std::to_string(cfg.channels.size()) +
                      " entries, expected depth = " +
                      std::to_string(cfg.depth));
  }
  const std::size_t stride_total = std::size_t{1} << cfg.depth;
  if (cfg.volume < 2 * stride_total || cfg.volume % stride_total != 0) {
    throw ConfigError("volume " + std::to_string(cfg.volume) +
                      " must be a multiple of 2^depth = " +
                      std::to_string(stride_total) +
                      " and leave at least 2 voxels per axis at the bottom");
  }
  for (std::size_t j = 1; j <= cfg.depth; ++j) {
    const std::size_t c = cfg.channels[j - 1];
    if (c == 0 || c % 4 != 0) {
      throw ConfigError("channels[" + std::to_string(j - 1) + "] = " +
                        std::to_string(c) +
                        " must be a positive multiple of 4");
    }
    if (j > 1 && c < cfg.channels[j - 2]) {
      throw ConfigError("channels must be non-decreasing, got " +
                        std::to_string(cfg.channels[j - 2]) + " then " +
                        std::to_string(c));
    }
    if (toggles.aware && j < cfg.depth && c % 8 != 0) {
      throw ConfigError("pair fusion halves the stream width, so channels[" +
                        std::to_string(j - 1) + "] = " + std::to_string(c) +
                        " must be a multiple of 8");
    }
  }
  if (cfg.heads == 0) {
    throw ConfigError("heads must be positive");
  }
  if (toggles.shift) {
    const std::size_t d = cfg.channels.back() / 4;
    if (d % cfg.heads != 0) {
      throw ConfigError("bottleneck stream width " + std::to_string(d) +
                        " is not divisible by heads = " +
                        std::to_string(cfg.heads));
    }
  }
}

namespace {

void push(std::vector<ParamSpec>& out, std::string name, Shape shape) {
  out.push_back(ParamSpec{std::move(name), std::move(shape)});
}

// Two conv(3^3) + instance-norm blocks; the first conv carries the stride-2
// downsampling so its input width is the previous layer's output.
void encoder_specs(std::vector<ParamSpec>& out, const BackboneConfig& cfg) {
  std::size_t prev = 1;
  for (std::size_t j = 1; j <= cfg.depth; ++j) {
    const std::size_t w = stream_width(cfg, j);
    const std::string base = "enc.l" + std::to_string(j) + ".";
    push(out, base + "conv1.weight", {w, prev, 3, 3, 3});
    push(out, base + "conv1.bias", {w});
    push(out, base + "norm1.gamma", {w});
    push(out, base + "norm1.beta", {w});
    push(out, base + "conv2.weight", {w, w, 3, 3, 3});
    push(out, base + "conv2.bias", {w});
    push(out, base + "norm2.gamma", {w});
    push(out, base + "norm2.beta", {w});
    prev = w;
  }
}

// Per layer: one mask predictor shared by the four modalities, plus one
// single-head attention + FFN per clinical pair ((1,4) and (2,3)).
void aware_specs(std::vector<ParamSpec>& out, const BackboneConfig& cfg) {
  for (std::size_t j = 1; j < cfg.depth; ++j) {
    const std::size_t d = stream_width(cfg, j);
    const std::size_t half = d / 2;
    const std::string base = "aware.l" + std::to_string(j) + ".";
    push(out, base + "mask.local.weight", {d, half});
    push(out, base + "mask.local.bias", {half});
    push(out, base + "mask.decide.weight", {2 * half, 2});
    push(out, base + "mask.decide.bias", {2});
    for (const char* pair : {"pair14.", "pair23."}) {
      const std::string p = base + pair;
      push(out, p + "wq", {d, d});
      push(out, p + "wk", {d, d});
      push(out, p + "wv", {d, d});
      push(out, p + "ffn.w0", {d, 4 * d});
      push(out, p + "ffn.b0", {4 * d});
      push(out, p + "ffn.w1", {4 * d, d});
      push(out, p + "ffn.b1", {d});
    }
  }
}

// Two residual multi-head attention blocks with affine pre-norms: one over
// spatial positions, one over the four modalities.
void shift_specs(std::vector<ParamSpec>& out, const BackboneConfig& cfg) {
  const std::size_t d = stream_width(cfg, cfg.depth);
  for (const char* block : {"shift.spatial.", "shift.modal."}) {
    const std::string b = block;
    push(out, b + "ln.gamma", {d});
    push(out, b + "ln.beta", {d});
    push(out, b + "wq", {d, d});
    push(out, b + "wk", {d, d});
    push(out, b + "wv", {d, d});
    push(out, b + "wo", {d, d});
  }
}

void decoder_specs(std::vector<ParamSpec>& out, const BackboneConfig& cfg) {
  for (std::size_t j = cfg.depth; j >= 2; --j) {
    const std::size_t in =
        (j == cfg.depth) ? cfg.channels[j - 1] : 2 * cfg.channels[j - 1];
    const std::size_t outw = cfg.channels[j - 2];
    const std::string base = "dec.s" + std::to_string(j) + ".";
    push(out, base + "conv.weight", {outw, in, 3, 3, 3});
    push(out, base + "conv.bias", {outw});
    push(out, base + "norm.gamma", {outw});
    push(out, base + "norm.beta", {outw});
  }
  const std::size_t c1 = cfg.channels[0];
  push(out, "dec.final.conv.weight", {c1, 2 * c1, 3, 3, 3});
  push(out, "dec.final.conv.bias", {c1});
  push(out, "dec.final.norm.gamma", {c1});
  push(out, "dec.final.norm.beta", {c1});
  push(out, "head.conv1.weight", {8, c1, 3, 3, 3});
  push(out, "head.conv1.bias", {8});
  push(out, "head.conv2.weight", {3, 8, 1, 1, 1});
  push(out, "head.conv2.bias", {3});
}

}  // namespace

std::vector<ParamSpec> parameter_specs(const BackboneConfig& cfg,
                                       const Toggles& toggles) {
  validate_config(cfg, toggles);
  std::vector<ParamSpec> out;
  encoder_specs(out, cfg);
  if (toggles.aware) aware_specs(out, cfg);
  if (toggles.shift) shift_specs(out, cfg);
  decoder_specs(out, cfg);
  return out;
}

std::size_t parameter_count(const BackboneConfig& cfg,
                            const Toggles& toggles) {
  std::size_t total = 0;
  for (const ParamSpec& spec : parameter_specs(cfg, toggles)) {
    total += shape_numel(spec.shape);
  }
  return total;
}

Tensor to_tokens(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.size() != 4) {
    throw ShapeError("to_tokens expects a [c, D, H, W] map, got rank " +
                     std::to_string(s.size()));
  }
  const std::size_t c = s[0];
  const std::size_t n = s[1] * s[2] * s[3];
  return reshape(transpose(reshape(x, {c, n}), {1, 0}), {n, c});
}

Tensor from_tokens(const Tensor& tokens,
                   const std::array<std::size_t, 3>& extents) {
  const Shape& s = tokens.shape();
  if (s.size() != 2) {
    throw ShapeError("from_tokens expects a [N, c] matrix, got rank " +
                     std::to_string(s.size()));
  }
  const std::size_t n = extents[0] * extents[1] * extents[2];
  if (s[0] != n) {
    throw ShapeError("token count " + std::to_string(s[0]) +
                     " does not match extents product " + std::to_string(n));
  }
  return reshape(transpose(tokens, {1, 0}),
                 {s[1], extents[0], extents[1], extents[2]});
}

}  // namespace masm
