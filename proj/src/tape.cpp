#include "svddip/tape.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstring>

namespace svddip {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

void require_chw(const Tensor& t, const char* op) {
  if (t.rank() != 3)
    throw std::invalid_argument(std::string(op) + ": expected [C,H,W] tensor");
}

// Gathers K x K patches into a (Cin*K*K) x (Ho*Wo) matrix, zero outside.
void im2col(const Tensor& x, int k, int stride, int pad, size_t ho, size_t wo,
            double* out) {
  const size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const size_t cols = ho * wo;
  size_t row = 0;
  for (size_t m = 0; m < cin; ++m) {
    const double* xm = x.data() + m * h * w;
    for (int k1 = 0; k1 < k; ++k1) {
      for (int k2 = 0; k2 < k; ++k2, ++row) {
        double* dst = out + row * cols;
        for (size_t j1 = 0; j1 < ho; ++j1) {
          const long i1 = static_cast<long>(j1) * stride + k1 - pad;
          if (i1 < 0 || i1 >= static_cast<long>(h)) {
            std::memset(dst + j1 * wo, 0, wo * sizeof(double));
            continue;
          }
          const double* src = xm + static_cast<size_t>(i1) * w;
          for (size_t j2 = 0; j2 < wo; ++j2) {
            const long i2 = static_cast<long>(j2) * stride + k2 - pad;
            dst[j1 * wo + j2] =
                (i2 < 0 || i2 >= static_cast<long>(w)) ? 0.0 : src[i2];
          }
        }
      }
    }
  }
}

// Transpose scatter of im2col: accumulates column-matrix gradients back into
// the input gradient image.
void col2im_add(const double* cols_grad, int k, int stride, int pad, size_t ho,
                size_t wo, Tensor& gx) {
  const size_t cin = gx.dim(0), h = gx.dim(1), w = gx.dim(2);
  const size_t cols = ho * wo;
  size_t row = 0;
  for (size_t m = 0; m < cin; ++m) {
    double* gm = gx.data() + m * h * w;
    for (int k1 = 0; k1 < k; ++k1) {
      for (int k2 = 0; k2 < k; ++k2, ++row) {
        const double* src = cols_grad + row * cols;
        for (size_t j1 = 0; j1 < ho; ++j1) {
          const long i1 = static_cast<long>(j1) * stride + k1 - pad;
          if (i1 < 0 || i1 >= static_cast<long>(h)) continue;
          double* dstrow = gm + static_cast<size_t>(i1) * w;
          for (size_t j2 = 0; j2 < wo; ++j2) {
            const long i2 = static_cast<long>(j2) * stride + k2 - pad;
            if (i2 < 0 || i2 >= static_cast<long>(w)) continue;
            dstrow[i2] += src[j1 * wo + j2];
          }
        }
      }
    }
  }
}

}  // namespace

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

void Tape::add_grad(size_t idx, const Tensor& g) {
  Node& n = nodes_[idx];
  if (!n.needs_grad) return;
  if (n.grad.numel() == 0) n.grad = Tensor::zeros(n.value.shape());
  for (size_t i = 0; i < g.numel(); ++i) n.grad[i] += g[i];
}

Var Tape::constant(Tensor t) {
  Node n;
  n.value = std::move(t);
  n.needs_grad = false;
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  Node n;
  n.value = p.value;
  n.needs_grad = true;
  n.param = &p;
  return push(std::move(n));
}

Var Tape::make_node(Tensor value, std::vector<Var> inputs,
                    std::function<void(Tape&, Node&, std::vector<Node*>&)> backward) {
  Node n;
  n.value = std::move(value);
  std::vector<size_t> in_idx;
  in_idx.reserve(inputs.size());
  for (Var v : inputs) {
    if (v.tape != this) throw std::invalid_argument("make_node: foreign Var");
    in_idx.push_back(v.idx);
    n.needs_grad = n.needs_grad || nodes_[v.idx].needs_grad;
  }
  if (n.needs_grad && backward) {
    n.backprop = [in_idx, backward](Tape& t, Node& out) {
      std::vector<Node*> ins;
      ins.reserve(in_idx.size());
      for (size_t i : in_idx) ins.push_back(&t.nodes_[i]);
      backward(t, out, ins);
    };
  }
  return push(std::move(n));
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw std::invalid_argument("backward: foreign Var");
  Node& ln = nodes_.at(loss.idx);
  if (ln.value.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar");
  if (nodes_.empty()) throw std::invalid_argument("backward: empty tape");
  ln.grad = Tensor::full(ln.value.shape(), 1.0);
  for (size_t i = loss.idx + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.numel() == 0) continue;
    if (n.backprop) n.backprop(*this, n);
    if (n.param) {
      for (size_t j = 0; j < n.grad.numel(); ++j) n.param->grad[j] += n.grad[j];
    }
  }
}

// ---- pointwise ops ----

Var Tape::add(Var a, Var b) {
  require_same_shape(value(a), value(b), "add");
  Tensor out = value(a);
  const Tensor& vb = value(b);
  for (size_t i = 0; i < out.numel(); ++i) out[i] += vb[i];
  const size_t ia = a.idx, ib = b.idx;
  return make_node(std::move(out), {a, b},
                   [ia, ib](Tape& t, Node& o, std::vector<Node*>&) {
                     t.add_grad(ia, o.grad);
                     t.add_grad(ib, o.grad);
                   });
}

Var Tape::sub(Var a, Var b) {
  require_same_shape(value(a), value(b), "sub");
  Tensor out = value(a);
  const Tensor& vb = value(b);
  for (size_t i = 0; i < out.numel(); ++i) out[i] -= vb[i];
  const size_t ia = a.idx, ib = b.idx;
  return make_node(std::move(out), {a, b},
                   [ia, ib](Tape& t, Node& o, std::vector<Node*>&) {
                     t.add_grad(ia, o.grad);
                     Tensor neg = o.grad;
                     for (size_t i = 0; i < neg.numel(); ++i) neg[i] = -neg[i];
                     t.add_grad(ib, neg);
                   });
}

Var Tape::mul(Var a, Var b) {
  require_same_shape(value(a), value(b), "mul");
  Tensor out = value(a);
  const Tensor& vb = value(b);
  for (size_t i = 0; i < out.numel(); ++i) out[i] *= vb[i];
  const size_t ia = a.idx, ib = b.idx;
  return make_node(std::move(out), {a, b},
                   [ia, ib](Tape& t, Node& o, std::vector<Node*>&) {
                     const Tensor& va = t.nodes_[ia].value;
                     const Tensor& vb2 = t.nodes_[ib].value;
                     Tensor ga = o.grad, gb = o.grad;
                     for (size_t i = 0; i < ga.numel(); ++i) {
                       ga[i] *= vb2[i];
                       gb[i] *= va[i];
                     }
                     t.add_grad(ia, ga);
                     t.add_grad(ib, gb);
                   });
}

Var Tape::scale(Var a, double c) {
  Tensor out = value(a);
  for (size_t i = 0; i < out.numel(); ++i) out[i] *= c;
  const size_t ia = a.idx;
  return make_node(std::move(out), {a},
                   [ia, c](Tape& t, Node& o, std::vector<Node*>&) {
                     Tensor g = o.grad;
                     for (size_t i = 0; i < g.numel(); ++i) g[i] *= c;
                     t.add_grad(ia, g);
                   });
}

Var Tape::add_scalar(Var a, double c) {
  Tensor out = value(a);
  for (size_t i = 0; i < out.numel(); ++i) out[i] += c;
  const size_t ia = a.idx;
  return make_node(std::move(out), {a},
                   [ia](Tape& t, Node& o, std::vector<Node*>&) {
                     t.add_grad(ia, o.grad);
                   });
}

Var Tape::leaky_relu(Var a, double slope) {
  Tensor out = value(a);
  for (size_t i = 0; i < out.numel(); ++i)
    if (out[i] < 0) out[i] *= slope;
  const size_t ia = a.idx;
  return make_node(std::move(out), {a},
                   [ia, slope](Tape& t, Node& o, std::vector<Node*>&) {
                     const Tensor& x = t.nodes_[ia].value;
                     Tensor g = o.grad;
                     for (size_t i = 0; i < g.numel(); ++i)
                       if (x[i] < 0) g[i] *= slope;
                     t.add_grad(ia, g);
                   });
}

Var Tape::sigmoid(Var a) {
  Tensor out = value(a);
  for (size_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  const size_t ia = a.idx;
  return make_node(std::move(out), {a},
                   [ia](Tape& t, Node& o, std::vector<Node*>&) {
                     Tensor g = o.grad;
                     for (size_t i = 0; i < g.numel(); ++i)
                       g[i] *= o.value[i] * (1.0 - o.value[i]);
                     t.add_grad(ia, g);
                   });
}

Var Tape::abs(Var a) {
  Tensor out = value(a);
  for (size_t i = 0; i < out.numel(); ++i) out[i] = std::fabs(out[i]);
  const size_t ia = a.idx;
  return make_node(std::move(out), {a},
                   [ia](Tape& t, Node& o, std::vector<Node*>&) {
                     const Tensor& x = t.nodes_[ia].value;
                     Tensor g = o.grad;
                     for (size_t i = 0; i < g.numel(); ++i) {
                       // subgradient 0 at 0
                       g[i] *= (x[i] > 0) ? 1.0 : (x[i] < 0 ? -1.0 : 0.0);
                     }
                     t.add_grad(ia, g);
                   });
}

Var Tape::sum(Var a) {
  double s = 0.0;
  const Tensor& va = value(a);
  for (size_t i = 0; i < va.numel(); ++i) s += va[i];
  const size_t ia = a.idx;
  return make_node(Tensor::scalar(s), {a},
                   [ia](Tape& t, Node& o, std::vector<Node*>&) {
                     t.add_grad(ia, Tensor::full(t.nodes_[ia].value.shape(), o.grad[0]));
                   });
}

Var Tape::mean(Var a) {
  double s = 0.0;
  const Tensor& va = value(a);
  for (size_t i = 0; i < va.numel(); ++i) s += va[i];
  const double n = static_cast<double>(va.numel());
  const size_t ia = a.idx;
  return make_node(Tensor::scalar(s / n), {a},
                   [ia, n](Tape& t, Node& o, std::vector<Node*>&) {
                     t.add_grad(ia, Tensor::full(t.nodes_[ia].value.shape(), o.grad[0] / n));
                   });
}

// ---- layer ops ----

Var Tape::conv2d(Var input, Var weight, std::optional<Var> bias, int stride, int pad) {
  const Tensor& x = value(input);
  const Tensor& w = value(weight);
  require_chw(x, "conv2d");
  if (w.rank() != 4) throw std::invalid_argument("conv2d: weight must be [Cout,Cin,K,K]");
  if (w.dim(2) != w.dim(3)) throw std::invalid_argument("conv2d: kernel must be square");
  if (w.dim(1) != x.dim(0)) throw std::invalid_argument("conv2d: channel mismatch");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  const int k = static_cast<int>(w.dim(2));
  const long h = static_cast<long>(x.dim(1)), wd = static_cast<long>(x.dim(2));
  if (h + 2 * pad < k || wd + 2 * pad < k)
    throw std::invalid_argument("conv2d: spatial dims too small for kernel");
  const size_t cout = w.dim(0), cin = w.dim(1);
  const size_t ho = static_cast<size_t>((h + 2 * pad - k) / stride + 1);
  const size_t wo = static_cast<size_t>((wd + 2 * pad - k) / stride + 1);
  const size_t krows = cin * k * k, cols = ho * wo;

  auto colbuf = std::make_shared<std::vector<double>>(krows * cols);
  im2col(x, k, stride, pad, ho, wo, colbuf->data());

  Tensor out({cout, ho, wo});
  {
    CMapMat wm(w.data(), static_cast<long>(cout), static_cast<long>(krows));
    CMapMat cm(colbuf->data(), static_cast<long>(krows), static_cast<long>(cols));
    MapMat om(out.data(), static_cast<long>(cout), static_cast<long>(cols));
    om.noalias() = wm * cm;
  }
  if (bias) {
    const Tensor& b = value(*bias);
    if (b.rank() != 1 || b.dim(0) != cout)
      throw std::invalid_argument("conv2d: bias must be [Cout]");
    for (size_t c = 0; c < cout; ++c)
      for (size_t j = 0; j < cols; ++j) out[c * cols + j] += b[c];
  }

  std::vector<Var> ins = {input, weight};
  if (bias) ins.push_back(*bias);
  const size_t ix = input.idx, iw = weight.idx;
  const size_t ib = bias ? bias->idx : static_cast<size_t>(-1);
  return make_node(
      std::move(out), ins,
      [ix, iw, ib, k, stride, pad, ho, wo, krows, cols, cout, colbuf](
          Tape& t, Node& o, std::vector<Node*>&) {
        const Tensor& w2 = t.nodes_[iw].value;
        CMapMat go(o.grad.data(), static_cast<long>(cout), static_cast<long>(cols));
        if (t.nodes_[iw].needs_grad) {
          Tensor gw = Tensor::zeros(w2.shape());
          CMapMat cm(colbuf->data(), static_cast<long>(krows), static_cast<long>(cols));
          MapMat gwm(gw.data(), static_cast<long>(cout), static_cast<long>(krows));
          gwm.noalias() = go * cm.transpose();
          t.add_grad(iw, gw);
        }
        if (t.nodes_[ix].needs_grad) {
          std::vector<double> gcols(krows * cols);
          CMapMat wm(w2.data(), static_cast<long>(cout), static_cast<long>(krows));
          MapMat gcm(gcols.data(), static_cast<long>(krows), static_cast<long>(cols));
          gcm.noalias() = wm.transpose() * go;
          Tensor gx = Tensor::zeros(t.nodes_[ix].value.shape());
          col2im_add(gcols.data(), k, stride, pad, ho, wo, gx);
          t.add_grad(ix, gx);
        }
        if (ib != static_cast<size_t>(-1) && t.nodes_[ib].needs_grad) {
          Tensor gb({cout});
          for (size_t c = 0; c < cout; ++c) {
            double s = 0.0;
            for (size_t j = 0; j < cols; ++j) s += o.grad[c * cols + j];
            gb[c] = s;
          }
          t.add_grad(ib, gb);
        }
      });
}

Var Tape::upsample_bilinear2x(Var input) {
  const Tensor& x = value(input);
  require_chw(x, "upsample_bilinear2x");
  const size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const size_t ho = 2 * h, wo = 2 * w;

  // align_corners = false: output i samples input at (i + 0.5)/2 - 0.5
  auto make_axis = [](size_t n_in, size_t n_out) {
    std::vector<size_t> i0(n_out), i1(n_out);
    std::vector<double> w1(n_out);
    for (size_t i = 0; i < n_out; ++i) {
      double s = (static_cast<double>(i) + 0.5) / 2.0 - 0.5;
      if (s < 0) s = 0;
      if (s > static_cast<double>(n_in - 1)) s = static_cast<double>(n_in - 1);
      size_t lo = static_cast<size_t>(s);
      if (lo >= n_in - 1) lo = n_in - 1;
      size_t hi = (lo + 1 < n_in) ? lo + 1 : lo;
      i0[i] = lo;
      i1[i] = hi;
      w1[i] = s - static_cast<double>(lo);
    }
    return std::make_tuple(i0, i1, w1);
  };
  auto [r0, r1, rw] = make_axis(h, ho);
  auto [c0, c1, cw] = make_axis(w, wo);

  Tensor out({c, ho, wo});
  for (size_t ch = 0; ch < c; ++ch) {
    const double* src = x.data() + ch * h * w;
    double* dst = out.data() + ch * ho * wo;
    for (size_t i = 0; i < ho; ++i)
      for (size_t j = 0; j < wo; ++j) {
        const double a = src[r0[i] * w + c0[j]], b = src[r0[i] * w + c1[j]];
        const double d = src[r1[i] * w + c0[j]], e = src[r1[i] * w + c1[j]];
        const double top = a + cw[j] * (b - a), bot = d + cw[j] * (e - d);
        dst[i * wo + j] = top + rw[i] * (bot - top);
      }
  }
  const size_t ix = input.idx;
  return make_node(
      std::move(out), {input},
      [ix, c, h, w, ho, wo, r0 = r0, r1 = r1, rw = rw, c0 = c0, c1 = c1,
       cw = cw](Tape& t, Node& o, std::vector<Node*>&) {
        Tensor gx = Tensor::zeros({c, h, w});
        for (size_t ch = 0; ch < c; ++ch) {
          double* g = gx.data() + ch * h * w;
          const double* go = o.grad.data() + ch * ho * wo;
          for (size_t i = 0; i < ho; ++i)
            for (size_t j = 0; j < wo; ++j) {
              const double v = go[i * wo + j];
              const double wr = rw[i], wc = cw[j];
              g[r0[i] * w + c0[j]] += v * (1 - wr) * (1 - wc);
              g[r0[i] * w + c1[j]] += v * (1 - wr) * wc;
              g[r1[i] * w + c0[j]] += v * wr * (1 - wc);
              g[r1[i] * w + c1[j]] += v * wr * wc;
            }
        }
        t.add_grad(ix, gx);
      });
}

Var Tape::group_norm(Var input, Var gamma, Var beta, size_t groups, double eps) {
  const Tensor& x = value(input);
  require_chw(x, "group_norm");
  const size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (groups == 0 || c % groups != 0)
    throw std::invalid_argument("group_norm: channel count not divisible by groups");
  const Tensor& ga = value(gamma);
  const Tensor& be = value(beta);
  if (ga.rank() != 1 || ga.dim(0) != c || be.rank() != 1 || be.dim(0) != c)
    throw std::invalid_argument("group_norm: affine params must be [C]");
  const size_t cpg = c / groups, gsz = cpg * h * w;

  auto xhat = std::make_shared<Tensor>(Tensor::zeros({c, h, w}));
  auto inv_sd = std::make_shared<std::vector<double>>(groups);
  Tensor out({c, h, w});
  for (size_t g = 0; g < groups; ++g) {
    const double* xs = x.data() + g * gsz;
    double mu = 0.0;
    for (size_t i = 0; i < gsz; ++i) mu += xs[i];
    mu /= static_cast<double>(gsz);
    double var = 0.0;
    for (size_t i = 0; i < gsz; ++i) var += (xs[i] - mu) * (xs[i] - mu);
    var /= static_cast<double>(gsz);
    const double isd = 1.0 / std::sqrt(var + eps);
    (*inv_sd)[g] = isd;
    for (size_t i = 0; i < gsz; ++i) {
      const size_t flat = g * gsz + i;
      const size_t ch = flat / (h * w);
      const double xh = (xs[i] - mu) * isd;
      (*xhat)[flat] = xh;
      out[flat] = ga[ch] * xh + be[ch];
    }
  }
  const size_t ix = input.idx, ig = gamma.idx, ibt = beta.idx;
  return make_node(
      std::move(out), {input, gamma, beta},
      [ix, ig, ibt, groups, c, h, w, cpg, gsz, xhat, inv_sd](
          Tape& t, Node& o, std::vector<Node*>&) {
        const Tensor& ga2 = t.nodes_[ig].value;
        if (t.nodes_[ig].needs_grad || t.nodes_[ibt].needs_grad) {
          Tensor gga({c}), gbe({c});
          for (size_t ch = 0; ch < c; ++ch) {
            double sg = 0.0, sb = 0.0;
            for (size_t i = 0; i < h * w; ++i) {
              const size_t flat = ch * h * w + i;
              sg += o.grad[flat] * (*xhat)[flat];
              sb += o.grad[flat];
            }
            gga[ch] = sg;
            gbe[ch] = sb;
          }
          t.add_grad(ig, gga);
          t.add_grad(ibt, gbe);
        }
        if (t.nodes_[ix].needs_grad) {
          Tensor gx = Tensor::zeros({c, h, w});
          for (size_t g = 0; g < groups; ++g) {
            double sum_dxh = 0.0, sum_dxh_xh = 0.0;
            for (size_t i = 0; i < gsz; ++i) {
              const size_t flat = g * gsz + i;
              const size_t ch = flat / (h * w);
              const double dxh = o.grad[flat] * ga2[ch];
              sum_dxh += dxh;
              sum_dxh_xh += dxh * (*xhat)[flat];
            }
            const double n = static_cast<double>(gsz);
            for (size_t i = 0; i < gsz; ++i) {
              const size_t flat = g * gsz + i;
              const size_t ch = flat / (h * w);
              const double dxh = o.grad[flat] * ga2[ch];
              gx[flat] = (*inv_sd)[g] *
                         (dxh - sum_dxh / n - (*xhat)[flat] * sum_dxh_xh / n);
            }
          }
          t.add_grad(ix, gx);
        }
      });
}

Var Tape::concat_channels(Var a, Var b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  require_chw(va, "concat_channels");
  require_chw(vb, "concat_channels");
  if (va.dim(1) != vb.dim(1) || va.dim(2) != vb.dim(2))
    throw std::invalid_argument("concat_channels: spatial mismatch");
  const size_t ca = va.dim(0), cb = vb.dim(0), h = va.dim(1), w = va.dim(2);
  Tensor out({ca + cb, h, w});
  std::memcpy(out.data(), va.data(), ca * h * w * sizeof(double));
  std::memcpy(out.data() + ca * h * w, vb.data(), cb * h * w * sizeof(double));
  const size_t ia = a.idx, ib = b.idx;
  return make_node(std::move(out), {a, b},
                   [ia, ib, ca, cb, h, w](Tape& t, Node& o, std::vector<Node*>&) {
                     Tensor g1({ca, h, w}), g2({cb, h, w});
                     std::memcpy(g1.data(), o.grad.data(), ca * h * w * sizeof(double));
                     std::memcpy(g2.data(), o.grad.data() + ca * h * w,
                                 cb * h * w * sizeof(double));
                     t.add_grad(ia, g1);
                     t.add_grad(ib, g2);
                   });
}

Var Tape::scale_channels(Var input, Var s) {
  const Tensor& x = value(input);
  const Tensor& sv = value(s);
  require_chw(x, "scale_channels");
  if (sv.rank() != 1 || sv.dim(0) != x.dim(0))
    throw std::invalid_argument("scale_channels: scale vector must be [C]");
  const size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  Tensor out = x;
  for (size_t ch = 0; ch < c; ++ch)
    for (size_t i = 0; i < hw; ++i) out[ch * hw + i] *= sv[ch];
  const size_t ix = input.idx, is = s.idx;
  return make_node(std::move(out), {input, s},
                   [ix, is, c, hw](Tape& t, Node& o, std::vector<Node*>&) {
                     const Tensor& x2 = t.nodes_[ix].value;
                     const Tensor& s2 = t.nodes_[is].value;
                     if (t.nodes_[ix].needs_grad) {
                       Tensor gx = o.grad;
                       for (size_t ch = 0; ch < c; ++ch)
                         for (size_t i = 0; i < hw; ++i) gx[ch * hw + i] *= s2[ch];
                       t.add_grad(ix, gx);
                     }
                     if (t.nodes_[is].needs_grad) {
                       Tensor gs({c});
                       for (size_t ch = 0; ch < c; ++ch) {
                         double acc = 0.0;
                         for (size_t i = 0; i < hw; ++i)
                           acc += o.grad[ch * hw + i] * x2[ch * hw + i];
                         gs[ch] = acc;
                       }
                       t.add_grad(is, gs);
                     }
                   });
}

Var Tape::apply_linear(const LinearOp& op, Var x) {
  Tensor out = op.apply(value(x));
  const size_t ix = x.idx;
  const LinearOp* p = &op;  // caller keeps the operator alive through backward
  return make_node(std::move(out), {x},
                   [ix, p](Tape& t, Node& o, std::vector<Node*>&) {
                     t.add_grad(ix, p->apply_adjoint(o.grad));
                   });
}

}  // namespace svddip
