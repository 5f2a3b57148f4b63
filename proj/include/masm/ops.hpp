#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "masm/rng.hpp"
#include "masm/tensor.hpp"

namespace masm {

// Elementwise with numpy-style trailing broadcast.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// Softmax over the last axis; rows sum to 1.
Tensor softmax_last(const Tensor& x);

/// Normalizes each slice along the last axis to zero mean / unit variance
/// (population variance, epsilon inside the sqrt). No affine; apply scale
/// and offset with mul/add when needed.
Tensor layernorm_last(const Tensor& x, double eps = 1e-5);

/// a: [batch..., m, k] or [m, k]; b: [batch..., k, n] or [k, n]. Batch dims
/// must match exactly when both sides carry them.
Tensor matmul(const Tensor& a, const Tensor& b);

/// x: [Cin, D, H, W]; w: [Cout, Cin, kd, kh, kw]; optional bias [Cout].
/// Zero padding, one stride for all axes.
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& bias,
              std::size_t stride, std::size_t pad);
Tensor conv3d(const Tensor& x, const Tensor& w, std::size_t stride,
              std::size_t pad);

Tensor transpose(const Tensor& x, const std::vector<std::size_t>& perm);
/// Metadata-only when possible (always, for contiguous row-major storage).
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start,
             std::size_t len);

Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim);
Tensor sum_all(const Tensor& x);
/// Average pooling along one axis.
Tensor mean_axis(const Tensor& x, std::size_t axis, bool keepdim);

/// Nearest-neighbor 2x upsampling of the three trailing spatial axes of
/// [C, D, H, W].
Tensor upsample_nearest2x(const Tensor& x);

/// out[r] = x[idx[r]] along axis 0. Backward scatter-adds.
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx);
/// out[idx[r]] += x[r]; out has `rows` leading extent. Backward gathers.
Tensor scatter_rows(const Tensor& x, const std::vector<std::size_t>& idx,
                    std::size_t rows);

/// Forward takes the hard values, backward passes gradients straight through
/// to soft. hard must have soft's shape.
Tensor straight_through(const Tensor& soft, const std::vector<double>& hard);

/// Gumbel-Softmax over the last axis: softmax((logits + g)/tau) with
/// g = -log(-log(u)). With hard=true the forward value is the per-row
/// one-hot argmax and the gradient flows through the soft sample.
Tensor gumbel_softmax(const Tensor& logits, double tau, bool hard, Rng& rng);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);

bool all_finite(const Tensor& t);

/// Attribute map for the string-keyed primitive dispatcher.
class Attrs {
 public:
  using Value = std::variant<double, std::int64_t, std::vector<std::int64_t>,
                             std::vector<double>>;

  Attrs& set(const std::string& k, Value v) {
    m_[k] = std::move(v);
    return *this;
  }
  bool has(const std::string& k) const { return m_.count(k) != 0; }
  std::int64_t get_int(const std::string& k) const;
  std::int64_t get_int(const std::string& k, std::int64_t dflt) const;
  double get_real(const std::string& k, double dflt) const;
  std::vector<std::int64_t> get_ints(const std::string& k) const;
  std::vector<double> get_reals(const std::string& k) const;

 private:
  std::map<std::string, Value> m_;
};

/// Uniform entry point over the primitive set; unknown ids and incomplete
/// attrs raise structured errors.
Tensor primitive_forward(const std::string& op, const std::vector<Tensor>& in,
                         const Attrs& attrs = Attrs());

/// Stable list of dispatchable primitive ids.
const std::vector<std::string>& primitive_ids();

}  // namespace masm
