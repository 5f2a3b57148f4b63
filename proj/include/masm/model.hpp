#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "masm/backbone.hpp"
#include "masm/io.hpp"
#include "masm/modality_aware.hpp"
#include "masm/rng.hpp"
#include "masm/tensor.hpp"

namespace masm {

/// Shapes observed during one forward pass, for structural checks.
struct ForwardTrace {
  std::vector<std::array<Shape, 4>> encoder;  // [layer][modality]
  std::vector<Shape> fused;                   // skip tensor per layer
};

/// The segmentation network: shared four-stream encoder, optional pair and
/// mosaic fusion, decoder with skip connections, three-channel sigmoid head.
class MasmModel {
 public:
  MasmModel(BackboneConfig cfg, Toggles toggles);

  /// Draws fresh parameter values: Glorot uniform for every rank>=2 weight,
  /// ones for norm gains, zeros for biases and offsets. Draw order follows
  /// parameter_specs, so a seed pins every value.
  void init(std::uint64_t seed);

  /// modalities: four flat V^3 rasters in clinical order. rng is consumed
  /// only when the pair fusion is active and gate is a sampling mode. tau is
  /// the gate temperature. Returns [3, V, V, V] in (0, 1) with channels
  /// (ET, WT, TC).
  Tensor forward(const std::vector<std::vector<double>>& modalities, Rng* rng,
                 GateMode gate, double tau = 1.0,
                 ForwardTrace* trace = nullptr) const;

  const BackboneConfig& config() const { return cfg_; }
  const Toggles& toggles() const { return toggles_; }
  const std::vector<Tensor>& parameters() const { return params_; }
  const std::vector<std::string>& names() const { return names_; }
  const Tensor& param(const std::string& name) const;
  std::size_t scalar_count() const;

  void zero_grad();

  /// Checkpoint records in registry order.
  std::vector<NamedValues> state() const;
  /// Replaces parameter values. Unknown, duplicate, missing, or
  /// shape-mismatched records raise ConfigError naming the parameter.
  void load_state(const std::vector<NamedValues>& records);

 private:
  Tensor encode_block(const Tensor& x, const std::string& base,
                      std::size_t which, std::size_t stride) const;
  Tensor instance_norm(const Tensor& x, const std::string& prefix) const;
  Tensor fuse_layer(const std::array<Tensor, 4>& streams, std::size_t layer,
                    Rng* rng, GateMode gate, double tau) const;

  BackboneConfig cfg_;
  Toggles toggles_;
  std::vector<Tensor> params_;
  std::vector<std::string> names_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace masm
