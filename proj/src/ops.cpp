#include "masm/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>

namespace masm {

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

bool recording(std::initializer_list<const Tensor*> ins) {
  if (!Tape::active()) return false;
  for (const Tensor* t : ins)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

Tensor make_result(Shape shape, std::vector<double> values, bool rec) {
  Tensor out = Tensor::from(std::move(shape), std::move(values));
  if (rec) out.impl()->requires_grad = true;
  return out;
}

void record_node(const char* op, std::vector<Tensor> ins, const Tensor& out,
                 std::function<void()> pull) {
  Tape::Node node;
  node.op = op;
  for (const Tensor& t : ins)
    if (t.defined()) node.inputs.push_back(t.impl());
  node.output = out.impl();
  node.pull = std::move(pull);
  Tape::active()->record(std::move(node));
}

// --- broadcasting -----------------------------------------------------------

struct Bcast {
  Shape out;
  std::vector<std::size_t> sa, sb;  // strides into a/b per out dim; 0 = broadcast
};

Bcast make_bcast(const char* op, const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Bcast bc;
  bc.out.assign(rank, 1);
  bc.sa.assign(rank, 0);
  bc.sb.assign(rank, 0);
  const auto stra = row_major_strides(a);
  const auto strb = row_major_strides(b);
  for (std::size_t d = 0; d < rank; ++d) {
    const std::size_t od = rank - 1 - d;  // from trailing dim
    const std::size_t ea = d < a.size() ? a[a.size() - 1 - d] : 1;
    const std::size_t eb = d < b.size() ? b[b.size() - 1 - d] : 1;
    if (ea != eb && ea != 1 && eb != 1)
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) +
                       " with " + shape_str(b));
    bc.out[od] = std::max(ea, eb);
    bc.sa[od] = (ea == 1) ? 0 : stra[a.size() - 1 - d];
    bc.sb[od] = (eb == 1) ? 0 : strb[b.size() - 1 - d];
  }
  return bc;
}

template <class F>
void bcast_for_each(const Bcast& bc, F&& f) {
  const std::size_t n = shape_numel(bc.out);
  const std::size_t rank = bc.out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += bc.sa[d];
      ib += bc.sb[d];
      if (idx[d] < bc.out[d]) break;
      ia -= bc.sa[d] * bc.out[d];
      ib -= bc.sb[d] * bc.out[d];
      idx[d] = 0;
    }
  }
}

enum class BinOp { Add, Sub, Mul, Div };

const char* bin_name(BinOp op) {
  switch (op) {
    case BinOp::Add: return "add";
    case BinOp::Sub: return "sub";
    case BinOp::Mul: return "mul";
    default: return "div";
  }
}

Tensor binary(BinOp which, const Tensor& a, const Tensor& b) {
  const char* name = bin_name(which);
  const Bcast bc = make_bcast(name, a.shape(), b.shape());
  std::vector<double> vals(shape_numel(bc.out));
  const auto& av = a.values();
  const auto& bv = b.values();
  switch (which) {
    case BinOp::Add:
      bcast_for_each(bc, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        vals[i] = av[ia] + bv[ib];
      });
      break;
    case BinOp::Sub:
      bcast_for_each(bc, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        vals[i] = av[ia] - bv[ib];
      });
      break;
    case BinOp::Mul:
      bcast_for_each(bc, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        vals[i] = av[ia] * bv[ib];
      });
      break;
    case BinOp::Div:
      bcast_for_each(bc, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        vals[i] = av[ia] / bv[ib];
      });
      break;
  }
  const bool rec = recording({&a, &b});
  Tensor out = make_result(bc.out, std::move(vals), rec);
  if (rec) {
    auto da = a.impl();
    auto db = b.impl();
    auto dout = out.impl();
    record_node(name, {a, b}, out, [which, bc, da, db, dout]() {
      const auto& g = dout->grad;
      const auto& av = *da->values;
      const auto& bv = *db->values;
      double* ga = da->requires_grad ? grad_buffer(*da).data() : nullptr;
      double* gb = db->requires_grad ? grad_buffer(*db).data() : nullptr;
      bcast_for_each(bc, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        switch (which) {
          case BinOp::Add:
            if (ga) ga[ia] += g[i];
            if (gb) gb[ib] += g[i];
            break;
          case BinOp::Sub:
            if (ga) ga[ia] += g[i];
            if (gb) gb[ib] -= g[i];
            break;
          case BinOp::Mul:
            if (ga) ga[ia] += g[i] * bv[ib];
            if (gb) gb[ib] += g[i] * av[ia];
            break;
          case BinOp::Div:
            if (ga) ga[ia] += g[i] / bv[ib];
            if (gb) gb[ib] -= g[i] * av[ia] / (bv[ib] * bv[ib]);
            break;
        }
      });
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(BinOp::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(BinOp::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(BinOp::Mul, a, b); }
Tensor divide(const Tensor& a, const Tensor& b) { return binary(BinOp::Div, a, b); }

Tensor scale(const Tensor& a, double c) { return mul(a, Tensor::scalar(c)); }

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// --- unary ------------------------------------------------------------------

Tensor relu(const Tensor& x) {
  std::vector<double> vals(x.size());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < vals.size(); ++i)
    vals[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  const bool rec = recording({&x});
  Tensor out = make_result(x.shape(), std::move(vals), rec);
  if (rec) {
    auto dx = x.impl();
    auto dout = out.impl();
    record_node("relu", {x}, out, [dx, dout]() {
      if (!dx->requires_grad) return;
      const auto& g = dout->grad;
      const auto& xv = *dx->values;
      auto& gx = grad_buffer(*dx);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xv[i] > 0.0) gx[i] += g[i];
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> vals(x.size());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double v = xv[i];
    vals[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                       : std::exp(v) / (1.0 + std::exp(v));
  }
  const bool rec = recording({&x});
  Tensor out = make_result(x.shape(), std::move(vals), rec);
  if (rec) {
    auto dx = x.impl();
    auto dout = out.impl();
    record_node("sigmoid", {x}, out, [dx, dout]() {
      if (!dx->requires_grad) return;
      const auto& g = dout->grad;
      const auto& yv = *dout->values;
      auto& gx = grad_buffer(*dx);
      for (std::size_t i = 0; i < g.size(); ++i)
        gx[i] += g[i] * yv[i] * (1.0 - yv[i]);
    });
  }
  return out;
}

// --- softmax / layernorm ----------------------------------------------------

Tensor softmax_last(const Tensor& x) {
  if (x.rank() == 0) throw ShapeError("softmax: needs at least one axis");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.size() / cols;
  std::vector<double> vals(x.size());
  const auto& xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = &xv[r * cols];
    double* o = &vals[r * cols];
    double mx = in[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - mx);
      sum += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= sum;
  }
  const bool rec = recording({&x});
  Tensor out = make_result(x.shape(), std::move(vals), rec);
  if (rec) {
    auto dx = x.impl();
    auto dout = out.impl();
    record_node("softmax", {x}, out, [dx, dout, rows, cols]() {
      if (!dx->requires_grad) return;
      const auto& g = dout->grad;
      const auto& yv = *dout->values;
      auto& gx = grad_buffer(*dx);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = &yv[r * cols];
        const double* gr = &g[r * cols];
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += gr[c] * y[c];
        double* gxr = &gx[r * cols];
        for (std::size_t c = 0; c < cols; ++c)
          gxr[c] += y[c] * (gr[c] - dot);
      }
    });
  }
  return out;
}

Tensor layernorm_last(const Tensor& x, double eps) {
  if (x.rank() == 0) throw ShapeError("layernorm: needs at least one axis");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.size() / cols;
  std::vector<double> vals(x.size());
  std::vector<double> invstd(rows);
  const auto& xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = &xv[r * cols];
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += in[c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = in[c] - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    invstd[r] = is;
    double* o = &vals[r * cols];
    for (std::size_t c = 0; c < cols; ++c) o[c] = (in[c] - mean) * is;
  }
  const bool rec = recording({&x});
  Tensor out = make_result(x.shape(), std::move(vals), rec);
  if (rec) {
    auto dx = x.impl();
    auto dout = out.impl();
    record_node("layernorm", {x}, out,
                [dx, dout, rows, cols, invstd = std::move(invstd)]() {
      if (!dx->requires_grad) return;
      const auto& g = dout->grad;
      const auto& yv = *dout->values;
      auto& gx = grad_buffer(*dx);
      const double n = static_cast<double>(cols);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = &yv[r * cols];
        const double* gr = &g[r * cols];
        double gsum = 0.0, gysum = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          gsum += gr[c];
          gysum += gr[c] * y[c];
        }
        double* gxr = &gx[r * cols];
        for (std::size_t c = 0; c < cols; ++c)
          gxr[c] += invstd[r] * (gr[c] - gsum / n - y[c] * gysum / n);
      }
    });
  }
  return out;
}

// --- matmul -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw ShapeError("matmul: operands need rank >= 2, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t m = a.shape()[a.rank() - 2];
  const std::size_t k = a.shape()[a.rank() - 1];
  const std::size_t kb = b.shape()[b.rank() - 2];
  const std::size_t n = b.shape()[b.rank() - 1];
  if (k != kb)
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  Shape abatch(a.shape().begin(), a.shape().end() - 2);
  Shape bbatch(b.shape().begin(), b.shape().end() - 2);
  if (!abatch.empty() && !bbatch.empty() && abatch != bbatch)
    throw ShapeError("matmul: batch extents differ, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  const Shape& batch = abatch.empty() ? bbatch : abatch;
  const std::size_t nbatch = shape_numel(batch);
  const bool a_batched = !abatch.empty();
  const bool b_batched = !bbatch.empty();

  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> vals(shape_numel(out_shape));
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  for (std::size_t s = 0; s < nbatch; ++s) {
    ConstMap ma(pa + (a_batched ? s * m * k : 0), m, k);
    ConstMap mb(pb + (b_batched ? s * k * n : 0), k, n);
    MutMap(vals.data() + s * m * n, m, n).noalias() = ma * mb;
  }
  const bool rec = recording({&a, &b});
  Tensor out = make_result(std::move(out_shape), std::move(vals), rec);
  if (rec) {
    auto da = a.impl();
    auto db = b.impl();
    auto dout = out.impl();
    record_node("matmul", {a, b}, out,
                [da, db, dout, m, k, n, nbatch, a_batched, b_batched]() {
      const double* g = dout->grad.data();
      const double* pa = da->values->data();
      const double* pb = db->values->data();
      if (da->requires_grad) {
        double* ga = grad_buffer(*da).data();
        for (std::size_t s = 0; s < nbatch; ++s) {
          ConstMap mg(g + s * m * n, m, n);
          ConstMap mb(pb + (b_batched ? s * k * n : 0), k, n);
          MutMap(ga + (a_batched ? s * m * k : 0), m, k).noalias() +=
              mg * mb.transpose();
        }
      }
      if (db->requires_grad) {
        double* gb = grad_buffer(*db).data();
        for (std::size_t s = 0; s < nbatch; ++s) {
          ConstMap mg(g + s * m * n, m, n);
          ConstMap ma(pa + (a_batched ? s * m * k : 0), m, k);
          MutMap(gb + (b_batched ? s * k * n : 0), k, n).noalias() +=
              ma.transpose() * mg;
        }
      }
    });
  }
  return out;
}

// --- conv3d -----------------------------------------------------------------

namespace {

struct ConvDims {
  std::size_t ci, d, h, w;      // input
  std::size_t co, kd, kh, kw;   // kernel
  std::size_t od, oh, ow;       // output
  std::size_t stride, pad;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, const Tensor& bias,
                   std::size_t stride, std::size_t pad) {
  if (x.rank() != 4)
    throw ShapeError("conv3d: input must be [C,D,H,W], got " +
                     shape_str(x.shape()));
  if (w.rank() != 5)
    throw ShapeError("conv3d: kernel must be [Co,Ci,kd,kh,kw], got " +
                     shape_str(w.shape()));
  if (stride == 0) throw ShapeError("conv3d: stride must be >= 1");
  ConvDims cd;
  cd.ci = x.shape()[0];
  cd.d = x.shape()[1];
  cd.h = x.shape()[2];
  cd.w = x.shape()[3];
  cd.co = w.shape()[0];
  cd.kd = w.shape()[2];
  cd.kh = w.shape()[3];
  cd.kw = w.shape()[4];
  cd.stride = stride;
  cd.pad = pad;
  if (w.shape()[1] != cd.ci)
    throw ShapeError("conv3d: kernel expects " + std::to_string(w.shape()[1]) +
                     " input channels, input has " + std::to_string(cd.ci));
  if (bias.defined() &&
      (bias.rank() != 1 || bias.shape()[0] != cd.co))
    throw ShapeError("conv3d: bias must be [Co]=" + std::to_string(cd.co) +
                     ", got " + shape_str(bias.shape()));
  auto out_extent = [&](std::size_t in, std::size_t kk) -> std::size_t {
    const std::size_t padded = in + 2 * pad;
    if (padded < kk)
      throw ShapeError("conv3d: kernel " + std::to_string(kk) +
                       " exceeds padded extent " + std::to_string(padded));
    return (padded - kk) / stride + 1;
  };
  cd.od = out_extent(cd.d, cd.kd);
  cd.oh = out_extent(cd.h, cd.kh);
  cd.ow = out_extent(cd.w, cd.kw);
  return cd;
}

// Valid kernel tap range for one axis: in = o*stride - pad + kk must land
// inside [0, extent).
inline void tap_range(std::size_t o, std::size_t stride, std::size_t pad,
                      std::size_t kk, std::size_t extent, std::size_t& k0,
                      std::size_t& k1) {
  const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(o * stride) -
                              static_cast<std::ptrdiff_t>(pad);
  k0 = base < 0 ? static_cast<std::size_t>(-base) : 0;
  const std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(extent) - 1 - base;
  k1 = hi < 0 ? 0 : std::min(kk - 1, static_cast<std::size_t>(hi)) + 1;
  if (k0 > k1) k0 = k1;
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& bias,
              std::size_t stride, std::size_t pad) {
  const ConvDims c = conv_dims(x, w, bias, stride, pad);
  std::vector<double> vals(c.co * c.od * c.oh * c.ow, 0.0);
  const double* xv = x.values().data();
  const double* wv = w.values().data();
  const double* bv = bias.defined() ? bias.values().data() : nullptr;
  for (std::size_t co = 0; co < c.co; ++co) {
    double* oslab = &vals[co * c.od * c.oh * c.ow];
    for (std::size_t od = 0; od < c.od; ++od) {
      std::size_t kz0, kz1;
      tap_range(od, c.stride, c.pad, c.kd, c.d, kz0, kz1);
      for (std::size_t oh = 0; oh < c.oh; ++oh) {
        std::size_t ky0, ky1;
        tap_range(oh, c.stride, c.pad, c.kh, c.h, ky0, ky1);
        for (std::size_t ow = 0; ow < c.ow; ++ow) {
          std::size_t kx0, kx1;
          tap_range(ow, c.stride, c.pad, c.kw, c.w, kx0, kx1);
          double acc = bv ? bv[co] : 0.0;
          const std::ptrdiff_t ibase_x =
              static_cast<std::ptrdiff_t>(ow * c.stride) -
              static_cast<std::ptrdiff_t>(c.pad);
          for (std::size_t ci = 0; ci < c.ci; ++ci) {
            for (std::size_t kz = kz0; kz < kz1; ++kz) {
              const std::size_t id = od * c.stride - c.pad + kz;
              for (std::size_t ky = ky0; ky < ky1; ++ky) {
                const std::size_t ih = oh * c.stride - c.pad + ky;
                const double* xrow = &xv[((ci * c.d + id) * c.h + ih) * c.w];
                const double* wrow =
                    &wv[(((co * c.ci + ci) * c.kd + kz) * c.kh + ky) * c.kw];
                for (std::size_t kx = kx0; kx < kx1; ++kx)
                  acc += xrow[ibase_x + static_cast<std::ptrdiff_t>(kx)] *
                         wrow[kx];
              }
            }
          }
          oslab[(od * c.oh + oh) * c.ow + ow] = acc;
        }
      }
    }
  }
  const bool rec = recording({&x, &w, &bias});
  Tensor out = make_result({c.co, c.od, c.oh, c.ow}, std::move(vals), rec);
  if (rec) {
    auto dx = x.impl();
    auto dw = w.impl();
    auto db = bias.defined() ? bias.impl() : nullptr;
    auto dout = out.impl();
    record_node("conv3d", {x, w, bias}, out, [c, dx, dw, db, dout]() {
      const double* g = dout->grad.data();
      const double* xv = dx->values->data();
      const double* wv = dw->values->data();
      double* gx = dx->requires_grad ? grad_buffer(*dx).data() : nullptr;
      double* gw = dw->requires_grad ? grad_buffer(*dw).data() : nullptr;
      double* gb = (db && db->requires_grad) ? grad_buffer(*db).data() : nullptr;
      for (std::size_t co = 0; co < c.co; ++co) {
        const double* gslab = &g[co * c.od * c.oh * c.ow];
        for (std::size_t od = 0; od < c.od; ++od) {
          std::size_t kz0, kz1;
          tap_range(od, c.stride, c.pad, c.kd, c.d, kz0, kz1);
          for (std::size_t oh = 0; oh < c.oh; ++oh) {
            std::size_t ky0, ky1;
            tap_range(oh, c.stride, c.pad, c.kh, c.h, ky0, ky1);
            for (std::size_t ow = 0; ow < c.ow; ++ow) {
              const double go = gslab[(od * c.oh + oh) * c.ow + ow];
              if (gb) gb[co] += go;
              if (go == 0.0) continue;
              std::size_t kx0, kx1;
              tap_range(ow, c.stride, c.pad, c.kw, c.w, kx0, kx1);
              const std::ptrdiff_t ibase_x =
                  static_cast<std::ptrdiff_t>(ow * c.stride) -
                  static_cast<std::ptrdiff_t>(c.pad);
              for (std::size_t ci = 0; ci < c.ci; ++ci) {
                for (std::size_t kz = kz0; kz < kz1; ++kz) {
                  const std::size_t id = od * c.stride - c.pad + kz;
                  for (std::size_t ky = ky0; ky < ky1; ++ky) {
                    const std::size_t ih = oh * c.stride - c.pad + ky;
                    const std::size_t xoff =
                        ((ci * c.d + id) * c.h + ih) * c.w;
                    const std::size_t woff =
                        (((co * c.ci + ci) * c.kd + kz) * c.kh + ky) * c.kw;
                    for (std::size_t kx = kx0; kx < kx1; ++kx) {
                      const std::size_t ix =
                          xoff + static_cast<std::size_t>(
                                     ibase_x + static_cast<std::ptrdiff_t>(kx));
                      if (gw) gw[woff + kx] += xv[ix] * go;
                      if (gx) gx[ix] += wv[woff + kx] * go;
                    }
                  }
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor conv3d(const Tensor& x, const Tensor& w, std::size_t stride,
              std::size_t pad) {
  return conv3d(x, w, Tensor(), stride, pad);
}

// --- layout ops -------------------------------------------------------------

Tensor transpose(const Tensor& x, const std::vector<std::size_t>& perm) {
  const std::size_t rank = x.rank();
  if (perm.size() != rank)
    throw ShapeError("transpose: permutation size " +
                     std::to_string(perm.size()) + " vs rank " +
                     std::to_string(rank));
  std::vector<bool> seen(rank, false);
  for (std::size_t p : perm) {
    if (p >= rank || seen[p])
      throw ShapeError("transpose: invalid permutation for rank " +
                       std::to_string(rank));
    seen[p] = true;
  }
  Shape out_shape(rank);
  for (std::size_t d = 0; d < rank; ++d) out_shape[d] = x.shape()[perm[d]];
  const auto in_strides = row_major_strides(x.shape());
  std::vector<std::size_t> src_stride(rank);
  for (std::size_t d = 0; d < rank; ++d) src_stride[d] = in_strides[perm[d]];

  const std::size_t n = x.size();
  std::vector<double> vals(n);
  const auto& xv = x.values();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t isrc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    vals[i] = xv[isrc];
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      isrc += src_stride[d];
      if (idx[d] < out_shape[d]) break;
      isrc -= src_stride[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  const bool rec = recording({&x});
  Tensor out = make_result(out_shape, std::move(vals), rec);
  if (rec) {
    auto dx = x.impl();
    auto dout = out.impl();
    record_node("transpose", {x}, out, [dx, dout, out_shape, src_stride]() {
      if (!dx->requires_grad) return;
      const auto& g = dout->grad;
      auto& gx = grad_buffer(*dx);
      const std::size_t rank = out_shape.size();
      std::vector<std::size_t> idx(rank, 0);
      std::size_t isrc = 0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        gx[isrc] += g[i];
        for (std::size_t d = rank; d-- > 0;) {
          ++idx[d];
          isrc += src_stride[d];
          if (idx[d] < out_shape[d]) break;
          isrc -= src_stride[d] * out_shape[d];
          idx[d] = 0;
        }
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  auto d = std::make_shared<TensorData>();
  d->shape = std::move(shape);
  d->values = x.impl()->values;  // metadata-only: storage is shared
  const bool rec = recording({&x});
  d->requires_grad = rec;
  Tensor out(std::move(d));
  if (rec) {
    auto dx = x.impl();
    auto dout = out.impl();
    record_node("reshape", {x}, out, [dx, dout]() {
      if (!dx->requires_grad) return;
      const auto& g = dout->grad;
      auto& gx = grad_buffer(*dx);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size())
    throw ShapeError("concat: axis " + std::to_string(axis) +
                     " out of range for " + shape_str(s0));
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != s0.size())
      throw ShapeError("concat: rank mismatch, " + shape_str(s0) + " vs " +
                       shape_str(p.shape()));
    for (std::size_t d = 0; d < s0.size(); ++d)
      if (d != axis && p.shape()[d] != s0[d])
        throw ShapeError("concat: extent mismatch at axis " +
                         std::to_string(d) + ", " + shape_str(s0) + " vs " +
                         shape_str(p.shape()));
    total += p.shape()[axis];
  }
  Shape out_shape = s0;
  out_shape[axis] = total;
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
  for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];

  std::vector<double> vals(shape_numel(out_shape));
  std::size_t col = 0;
  for (const Tensor& p : parts) {
    const std::size_t e = p.shape()[axis];
    const auto& pv = p.values();
    for (std::size_t o = 0; o < outer; ++o)
      std::memcpy(&vals[(o * total + col) * inner], &pv[o * e * inner],
                  e * inner * sizeof(double));
    col += e;
  }
  bool rec = false;
  {
    std::vector<const Tensor*> ptrs;
    for (const Tensor& p : parts) ptrs.push_back(&p);
    if (Tape::active())
      for (auto* p : ptrs)
        if (p->requires_grad()) rec = true;
  }
  Tensor out = make_result(std::move(out_shape), std::move(vals), rec);
  if (rec) {
    std::vector<std::shared_ptr<TensorData>> impls;
    std::vector<std::size_t> extents;
    for (const Tensor& p : parts) {
      impls.push_back(p.impl());
      extents.push_back(p.shape()[axis]);
    }
    auto dout = out.impl();
    record_node("concat", parts, out,
                [impls, extents, dout, outer, inner, total]() {
      const auto& g = dout->grad;
      std::size_t col = 0;
      for (std::size_t pi = 0; pi < impls.size(); ++pi) {
        const std::size_t e = extents[pi];
        if (impls[pi]->requires_grad) {
          auto& gx = grad_buffer(*impls[pi]);
          for (std::size_t o = 0; o < outer; ++o) {
            const double* gsl = &g[(o * total + col) * inner];
            double* dst = &gx[o * e * inner];
            for (std::size_t j = 0; j < e * inner; ++j) dst[j] += gsl[j];
          }
        }
        col += e;
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start,
             std::size_t len) {
  const Shape& s = x.shape();
  if (axis >= s.size())
    throw ShapeError("slice: axis " + std::to_string(axis) +
                     " out of range for " + shape_str(s));
  if (len == 0 || start + len > s[axis])
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") exceeds extent " +
                     std::to_string(s[axis]));
  Shape out_shape = s;
  out_shape[axis] = len;
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t e = s[axis];

  std::vector<double> vals(shape_numel(out_shape));
  const auto& xv = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    std::memcpy(&vals[o * len * inner], &xv[(o * e + start) * inner],
                len * inner * sizeof(double));
  const bool rec = recording({&x});
  Tensor out = make_result(std::move(out_shape), std::move(vals), rec);
  if (rec) {
    auto dx = x.impl();
    auto dout = out.impl();
    record_node("slice", {x}, out, [dx, dout, outer, inner, e, start, len]() {
      if (!dx->requires_grad) return;
      const auto& g = dout->grad;
      auto& gx = grad_buffer(*dx);
      for (std::size_t o = 0; o < outer; ++o) {
        const double* gsl = &g[o * len * inner];
        double* dst = &gx[(o * e + start) * inner];
        for (std::size_t j = 0; j < len * inner; ++j) dst[j] += gsl[j];
      }
    });
  }
  return out;
}

// --- reductions -------------------------------------------------------------

namespace {

Tensor reduce_axis(const char* name, const Tensor& x, std::size_t axis,
                   bool keepdim, double factor) {
  const Shape& s = x.shape();
  if (axis >= s.size())
    throw ShapeError(std::string(name) + ": axis " + std::to_string(axis) +
                     " out of range for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t e = s[axis];

  Shape out_shape;
  for (std::size_t d = 0; d < s.size(); ++d) {
    if (d == axis) {
      if (keepdim) out_shape.push_back(1);
    } else {
      out_shape.push_back(s[d]);
    }
  }
  std::vector<double> vals(outer * inner, 0.0);
  const auto& xv = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t q = 0; q < e; ++q) {
      const double* src = &xv[(o * e + q) * inner];
      double* dst = &vals[o * inner];
      for (std::size_t j = 0; j < inner; ++j) dst[j] += src[j];
    }
  if (factor != 1.0)
    for (double& v : vals) v *= factor;
  const bool rec = recording({&x});
  Tensor out = make_result(std::move(out_shape), std::move(vals), rec);
  if (rec) {
    auto dx = x.impl();
    auto dout = out.impl();
    record_node(name, {x}, out, [dx, dout, outer, inner, e, factor]() {
      if (!dx->requires_grad) return;
      const auto& g = dout->grad;
      auto& gx = grad_buffer(*dx);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t q = 0; q < e; ++q) {
          double* dst = &gx[(o * e + q) * inner];
          const double* src = &g[o * inner];
          for (std::size_t j = 0; j < inner; ++j) dst[j] += src[j] * factor;
        }
    });
  }
  return out;
}

}  // namespace

Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim) {
  return reduce_axis("sum", x, axis, keepdim, 1.0);
}

Tensor mean_axis(const Tensor& x, std::size_t axis, bool keepdim) {
  return reduce_axis("mean", x, axis, keepdim,
                     1.0 / static_cast<double>(x.shape().at(axis)));
}

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  const bool rec = recording({&x});
  Tensor out = make_result(Shape{}, {acc}, rec);
  if (rec) {
    auto dx = x.impl();
    auto dout = out.impl();
    record_node("sum", {x}, out, [dx, dout]() {
      if (!dx->requires_grad) return;
      const double g = dout->grad[0];
      auto& gx = grad_buffer(*dx);
      for (double& v : gx) v += g;
    });
  }
  return out;
}

// --- upsample ----------------------------------------------------------------

Tensor upsample_nearest2x(const Tensor& x) {
  if (x.rank() != 4)
    throw ShapeError("upsample2x: input must be [C,D,H,W], got " +
                     shape_str(x.shape()));
  const std::size_t c = x.shape()[0], d = x.shape()[1], h = x.shape()[2],
                    w = x.shape()[3];
  std::vector<double> vals(c * 8 * d * h * w);
  const auto& xv = x.values();
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t z = 0; z < 2 * d; ++z)
      for (std::size_t y = 0; y < 2 * h; ++y) {
        const double* src = &xv[((ci * d + z / 2) * h + y / 2) * w];
        double* dst = &vals[((ci * 2 * d + z) * 2 * h + y) * 2 * w];
        for (std::size_t xx = 0; xx < 2 * w; ++xx) dst[xx] = src[xx / 2];
      }
  const bool rec = recording({&x});
  Tensor out = make_result({c, 2 * d, 2 * h, 2 * w}, std::move(vals), rec);
  if (rec) {
    auto dx = x.impl();
    auto dout = out.impl();
    record_node("upsample2x", {x}, out, [dx, dout, c, d, h, w]() {
      if (!dx->requires_grad) return;
      const auto& g = dout->grad;
      auto& gx = grad_buffer(*dx);
      for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t z = 0; z < 2 * d; ++z)
          for (std::size_t y = 0; y < 2 * h; ++y) {
            const double* src = &g[((ci * 2 * d + z) * 2 * h + y) * 2 * w];
            double* dst = &gx[((ci * d + z / 2) * h + y / 2) * w];
            for (std::size_t xx = 0; xx < 2 * w; ++xx)
              dst[xx / 2] += src[xx];
          }
    });
  }
  return out;
}

// --- gather / scatter --------------------------------------------------------

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
  if (x.rank() == 0) throw ShapeError("gather: input needs rank >= 1");
  const std::size_t rows = x.shape()[0];
  const std::size_t inner = x.size() / rows;
  for (std::size_t r : idx)
    if (r >= rows)
      throw ShapeError("gather: index " + std::to_string(r) +
                       " out of range for extent " + std::to_string(rows));
  Shape out_shape = x.shape();
  out_shape[0] = idx.size();
  std::vector<double> vals(idx.size() * inner);
  const auto& xv = x.values();
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::memcpy(&vals[r * inner], &xv[idx[r] * inner], inner * sizeof(double));
  const bool rec = recording({&x});
  Tensor out = make_result(std::move(out_shape), std::move(vals), rec);
  if (rec) {
    auto dx = x.impl();
    auto dout = out.impl();
    record_node("gather", {x}, out, [dx, dout, idx, inner]() {
      if (!dx->requires_grad) return;
      const auto& g = dout->grad;
      auto& gx = grad_buffer(*dx);
      for (std::size_t r = 0; r < idx.size(); ++r) {
        const double* src = &g[r * inner];
        double* dst = &gx[idx[r] * inner];
        for (std::size_t j = 0; j < inner; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor scatter_rows(const Tensor& x, const std::vector<std::size_t>& idx,
                    std::size_t rows) {
  if (x.rank() == 0) throw ShapeError("scatter: input needs rank >= 1");
  if (x.shape()[0] != idx.size())
    throw ShapeError("scatter: leading extent " +
                     std::to_string(x.shape()[0]) + " vs index count " +
                     std::to_string(idx.size()));
  const std::size_t inner = x.size() / idx.size();
  for (std::size_t r : idx)
    if (r >= rows)
      throw ShapeError("scatter: index " + std::to_string(r) +
                       " out of range for extent " + std::to_string(rows));
  Shape out_shape = x.shape();
  out_shape[0] = rows;
  std::vector<double> vals(rows * inner, 0.0);
  const auto& xv = x.values();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const double* src = &xv[r * inner];
    double* dst = &vals[idx[r] * inner];
    for (std::size_t j = 0; j < inner; ++j) dst[j] += src[j];
  }
  const bool rec = recording({&x});
  Tensor out = make_result(std::move(out_shape), std::move(vals), rec);
  if (rec) {
    auto dx = x.impl();
    auto dout = out.impl();
    record_node("scatter", {x}, out, [dx, dout, idx, inner]() {
      if (!dx->requires_grad) return;
      const auto& g = dout->grad;
      auto& gx = grad_buffer(*dx);
      for (std::size_t r = 0; r < idx.size(); ++r) {
        const double* src = &g[idx[r] * inner];
        double* dst = &gx[r * inner];
        for (std::size_t j = 0; j < inner; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

// --- straight-through / gumbel ------------------------------------------------

Tensor straight_through(const Tensor& soft, const std::vector<double>& hard) {
  if (hard.size() != soft.size())
    throw ShapeError("straight_through: hard payload size " +
                     std::to_string(hard.size()) + " vs " +
                     shape_str(soft.shape()));
  const bool rec = recording({&soft});
  Tensor out = make_result(soft.shape(), std::vector<double>(hard), rec);
  if (rec) {
    auto dx = soft.impl();
    auto dout = out.impl();
    record_node("straight_through", {soft}, out, [dx, dout]() {
      if (!dx->requires_grad) return;
      const auto& g = dout->grad;
      auto& gx = grad_buffer(*dx);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor gumbel_softmax(const Tensor& logits, double tau, bool hard, Rng& rng) {
  if (!(tau > 0.0))
    throw NumericError("gumbel_softmax: tau must be > 0, got " +
                       std::to_string(tau));
  if (!all_finite(logits))
    throw NumericError("gumbel_softmax: logits contain non-finite values");
  if (logits.rank() == 0)
    throw ShapeError("gumbel_softmax: logits need at least one axis");
  std::vector<double> noise(logits.size());
  for (double& v : noise) v = rng.next_gumbel();
  Tensor g = Tensor::from(logits.shape(), std::move(noise));
  Tensor y = softmax_last(scale(add(logits, g), 1.0 / tau));
  if (!hard) return y;
  const std::size_t cols = logits.shape().back();
  const std::size_t rows = logits.size() / cols;
  std::vector<double> onehot(logits.size(), 0.0);
  const auto& yv = y.values();
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c)
      if (yv[r * cols + c] > yv[r * cols + best]) best = c;
    onehot[r * cols + best] = 1.0;
  }
  return straight_through(y, onehot);
}

bool all_finite(const Tensor& t) {
  for (double v : t.values())
    if (!std::isfinite(v)) return false;
  return true;
}

// --- attrs / dispatcher -------------------------------------------------------

std::int64_t Attrs::get_int(const std::string& k) const {
  auto it = m_.find(k);
  if (it == m_.end()) throw ConfigError("missing attr '" + k + "'");
  if (auto* p = std::get_if<std::int64_t>(&it->second)) return *p;
  throw ConfigError("attr '" + k + "' is not an integer");
}

std::int64_t Attrs::get_int(const std::string& k, std::int64_t dflt) const {
  return has(k) ? get_int(k) : dflt;
}

double Attrs::get_real(const std::string& k, double dflt) const {
  auto it = m_.find(k);
  if (it == m_.end()) return dflt;
  if (auto* p = std::get_if<double>(&it->second)) return *p;
  if (auto* p = std::get_if<std::int64_t>(&it->second))
    return static_cast<double>(*p);
  throw ConfigError("attr '" + k + "' is not a real");
}

std::vector<std::int64_t> Attrs::get_ints(const std::string& k) const {
  auto it = m_.find(k);
  if (it == m_.end()) throw ConfigError("missing attr '" + k + "'");
  if (auto* p = std::get_if<std::vector<std::int64_t>>(&it->second)) return *p;
  throw ConfigError("attr '" + k + "' is not an integer list");
}

std::vector<double> Attrs::get_reals(const std::string& k) const {
  auto it = m_.find(k);
  if (it == m_.end()) throw ConfigError("missing attr '" + k + "'");
  if (auto* p = std::get_if<std::vector<double>>(&it->second)) return *p;
  throw ConfigError("attr '" + k + "' is not a real list");
}

namespace {

void need_inputs(const std::string& op, const std::vector<Tensor>& in,
                 std::size_t lo, std::size_t hi) {
  if (in.size() < lo || in.size() > hi)
    throw ShapeError("primitive '" + op + "': expected " + std::to_string(lo) +
                     (hi != lo ? ".." + std::to_string(hi) : "") +
                     " inputs, got " + std::to_string(in.size()));
}

std::vector<std::size_t> to_index(const std::vector<std::int64_t>& v) {
  std::vector<std::size_t> out;
  out.reserve(v.size());
  for (std::int64_t x : v) {
    if (x < 0) throw ConfigError("negative index attr");
    out.push_back(static_cast<std::size_t>(x));
  }
  return out;
}

}  // namespace

Tensor primitive_forward(const std::string& op, const std::vector<Tensor>& in,
                         const Attrs& attrs) {
  if (op == "add" || op == "sub" || op == "mul" || op == "div") {
    need_inputs(op, in, 2, 2);
    if (op == "add") return add(in[0], in[1]);
    if (op == "sub") return sub(in[0], in[1]);
    if (op == "mul") return mul(in[0], in[1]);
    return divide(in[0], in[1]);
  }
  if (op == "matmul") {
    need_inputs(op, in, 2, 2);
    return matmul(in[0], in[1]);
  }
  if (op == "relu") {
    need_inputs(op, in, 1, 1);
    return relu(in[0]);
  }
  if (op == "sigmoid") {
    need_inputs(op, in, 1, 1);
    return sigmoid(in[0]);
  }
  if (op == "softmax") {
    need_inputs(op, in, 1, 1);
    return softmax_last(in[0]);
  }
  if (op == "layernorm") {
    need_inputs(op, in, 1, 1);
    return layernorm_last(in[0], attrs.get_real("eps", 1e-5));
  }
  if (op == "conv3d") {
    need_inputs(op, in, 2, 3);
    const auto stride = static_cast<std::size_t>(attrs.get_int("stride", 1));
    const auto pad = static_cast<std::size_t>(attrs.get_int("pad", 0));
    return conv3d(in[0], in[1], in.size() == 3 ? in[2] : Tensor(), stride, pad);
  }
  if (op == "transpose") {
    need_inputs(op, in, 1, 1);
    return transpose(in[0], to_index(attrs.get_ints("perm")));
  }
  if (op == "reshape") {
    need_inputs(op, in, 1, 1);
    return reshape(in[0], Shape(to_index(attrs.get_ints("shape"))));
  }
  if (op == "concat") {
    need_inputs(op, in, 1, in.size() < 1 ? 1 : in.size());
    return concat(in, static_cast<std::size_t>(attrs.get_int("axis")));
  }
  if (op == "slice") {
    need_inputs(op, in, 1, 1);
    return slice(in[0], static_cast<std::size_t>(attrs.get_int("axis")),
                 static_cast<std::size_t>(attrs.get_int("start")),
                 static_cast<std::size_t>(attrs.get_int("len")));
  }
  if (op == "sum") {
    need_inputs(op, in, 1, 1);
    if (!attrs.has("axis")) return sum_all(in[0]);
    return sum_axis(in[0], static_cast<std::size_t>(attrs.get_int("axis")),
                    attrs.get_int("keepdim", 0) != 0);
  }
  if (op == "mean") {
    need_inputs(op, in, 1, 1);
    return mean_axis(in[0], static_cast<std::size_t>(attrs.get_int("axis")),
                     attrs.get_int("keepdim", 0) != 0);
  }
  if (op == "upsample2x") {
    need_inputs(op, in, 1, 1);
    return upsample_nearest2x(in[0]);
  }
  if (op == "gather") {
    need_inputs(op, in, 1, 1);
    return gather_rows(in[0], to_index(attrs.get_ints("idx")));
  }
  if (op == "scatter") {
    need_inputs(op, in, 1, 1);
    return scatter_rows(in[0], to_index(attrs.get_ints("idx")),
                        static_cast<std::size_t>(attrs.get_int("rows")));
  }
  if (op == "straight_through") {
    need_inputs(op, in, 1, 1);
    return straight_through(in[0], attrs.get_reals("hard"));
  }
  throw ConfigError("unknown primitive id '" + op + "'");
}

const std::vector<std::string>& primitive_ids() {
  static const std::vector<std::string> ids = {
      "add",     "sub",     "mul",        "div",      "matmul",
      "relu",    "sigmoid", "softmax",    "layernorm", "conv3d",
      "transpose", "reshape", "concat",   "slice",    "sum",
      "mean",    "upsample2x", "gather",  "scatter",  "straight_through"};
  return ids;
}

}  // namespace masm
