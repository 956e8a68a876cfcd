#pragma once

// Minimal reverse-mode automatic differentiation over dtpsr::Tensor.
//
// A Graph records every node whose value depends on a parameter, in
// creation order, so reverse creation order is a valid topological order.
// Parameters are long-lived leaf nodes; their gradients accumulate across
// backward passes until zeroed by the optimiser. A Graph constructed with
// record=false evaluates values only.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <utility>
#include <vector>

#include "dtpsr/tensor.hpp"

namespace dtpsr::ad {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Tensor&)> backward;

  Tensor& ensure_grad() {
    if (grad.shape() != value.shape()) grad = Tensor(value.shape());
    return grad;
  }
};

using Var = std::shared_ptr<Node>;

inline Var make_leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor t) const { return make_leaf(std::move(t), false); }

  /// Seeds d(loss)/d(loss) and propagates to every recorded node and
  /// parameter leaf. The tape is consumed.
  void backward(const Var& loss, double seed = 1.0) {
    if (loss->value.size() != 1) throw ShapeError("backward: loss must be a scalar");
    if (!loss->requires_grad) {
      tape_.clear();
      return;
    }
    loss->ensure_grad()[0] += seed;
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
      Node& n = **it;
      if (n.backward && n.grad.size() == n.value.size()) n.backward(n.grad);
    }
    tape_.clear();
  }

  // ---- elementwise -------------------------------------------------------

  Var add(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "add");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
    return make(std::move(out), {a, b}, [pa = a.get(), pb = b.get()](const Tensor& g) {
      accumulate(pa, g);
      accumulate(pb, g);
    });
  }

  Var sub(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "sub");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
    return make(std::move(out), {a, b}, [pa = a.get(), pb = b.get()](const Tensor& g) {
      accumulate(pa, g);
      if (pb->requires_grad) {
        Tensor& gb = pb->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }

  Var mul(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "mul");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
    return make(std::move(out), {a, b}, [pa = a.get(), pb = b.get()](const Tensor& g) {
      if (pa->requires_grad) {
        Tensor& ga = pa->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb->value[i];
      }
      if (pb->requires_grad) {
        Tensor& gb = pb->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa->value[i];
      }
    });
  }

  Var scale(const Var& a, double s) {
    Tensor out = a->value;
    for (double& v : out.vec()) v *= s;
    return make(std::move(out), {a}, [pa = a.get(), s](const Tensor& g) {
      if (!pa->requires_grad) return;
      Tensor& ga = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
  }

  /// x * s[k]: scales by one element of s (residual gates, output gains).
  Var scale_by(const Var& x, const Var& s, std::size_t k = 0) {
    if (k >= s->value.size()) throw ShapeError("scale_by: gate index out of range");
    const double sv = s->value[k];
    Tensor out = x->value;
    for (double& v : out.vec()) v *= sv;
    return make(std::move(out), {x, s}, [px = x.get(), ps = s.get(), k](const Tensor& g) {
      const double sv = ps->value[k];
      if (px->requires_grad) {
        Tensor& gx = px->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += sv * g[i];
      }
      if (ps->requires_grad) {
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * px->value[i];
        ps->ensure_grad()[k] += acc;
      }
    });
  }

  Var silu(const Var& a) {
    Tensor out = a->value;
    for (double& v : out.vec()) v = v / (1.0 + std::exp(-v));
    return make(std::move(out), {a}, [pa = a.get()](const Tensor& g) {
      if (!pa->requires_grad) return;
      Tensor& ga = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = pa->value[i];
        const double sg = 1.0 / (1.0 + std::exp(-x));
        ga[i] += g[i] * sg * (1.0 + x * (1.0 - sg));
      }
    });
  }

  /// Mean of squared differences against a constant target; returns shape (1).
  Var mse(const Var& a, const Tensor& target) {
    require_same_shape(a->value, target, "mse");
    const double n = static_cast<double>(target.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
      const double d = a->value[i] - target[i];
      acc += d * d;
    }
    return make(Tensor({1}, std::vector<double>{acc / n}), {a},
                [pa = a.get(), target, n](const Tensor& g) {
                  if (!pa->requires_grad) return;
                  Tensor& ga = pa->ensure_grad();
                  const double k = 2.0 * g[0] / n;
                  for (std::size_t i = 0; i < target.size(); ++i)
                    ga[i] += k * (pa->value[i] - target[i]);
                });
  }

  // ---- shape ------------------------------------------------------------

  /// Concatenation along the leading dimension.
  Var concat0(const Var& a, const Var& b) {
    const Shape& sa = a->value.shape();
    const Shape& sb = b->value.shape();
    if (sa.size() != sb.size() || !std::equal(sa.begin() + 1, sa.end(), sb.begin() + 1))
      throw ShapeError("concat0: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
    Shape so = sa;
    so[0] += sb[0];
    std::vector<double> d(a->value.vec());
    d.insert(d.end(), b->value.vec().begin(), b->value.vec().end());
    const std::size_t na = a->value.size();
    return make(Tensor(so, std::move(d)), {a, b}, [pa = a.get(), pb = b.get(), na](const Tensor& g) {
      if (pa->requires_grad) {
        Tensor& ga = pa->ensure_grad();
        for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
      }
      if (pb->requires_grad) {
        Tensor& gb = pb->ensure_grad();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
      }
    });
  }

  /// (C,H,W) feature map -> (H*W, C) token matrix.
  Var to_tokens(const Var& x) {
    require_latent(x->value, "to_tokens");
    const std::size_t c = x->value.dim(0), hw = x->value.dim(1) * x->value.dim(2);
    Tensor out({hw, c});
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < hw; ++p) out[p * c + ch] = x->value[ch * hw + p];
    return make(std::move(out), {x}, [px = x.get(), c, hw](const Tensor& g) {
      if (!px->requires_grad) return;
      Tensor& gx = px->ensure_grad();
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < hw; ++p) gx[ch * hw + p] += g[p * c + ch];
    });
  }

  /// (H*W, C) token matrix -> (C,H,W) feature map.
  Var from_tokens(const Var& t, std::size_t h, std::size_t w) {
    if (t->value.rank() != 2 || t->value.dim(0) != h * w)
      throw ShapeError("from_tokens: bad token shape " + shape_str(t->value.shape()));
    const std::size_t c = t->value.dim(1), hw = h * w;
    Tensor out({c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < hw; ++p) out[ch * hw + p] = t->value[p * c + ch];
    return make(std::move(out), {t}, [pt = t.get(), c, hw](const Tensor& g) {
      if (!pt->requires_grad) return;
      Tensor& gt = pt->ensure_grad();
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < hw; ++p) gt[p * c + ch] += g[ch * hw + p];
    });
  }

  Var upsample_nearest2(const Var& x) {
    require_latent(x->value, "upsample_nearest2");
    const std::size_t c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
    Tensor out({c, 2 * h, 2 * w});
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < 2 * h; ++y)
        for (std::size_t xx = 0; xx < 2 * w; ++xx) out.at(ch, y, xx) = x->value.at(ch, y / 2, xx / 2);
    return make(std::move(out), {x}, [px = x.get(), c, h, w](const Tensor& g) {
      if (!px->requires_grad) return;
      Tensor& gx = px->ensure_grad();
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < 2 * h; ++y)
          for (std::size_t xx = 0; xx < 2 * w; ++xx)
            gx.at(ch, y / 2, xx / 2) += g[(ch * 2 * h + y) * 2 * w + xx];
    });
  }

  // ---- linear algebra ---------------------------------------------------

  /// (N,K) x (K,M) -> (N,M)
  Var matmul(const Var& a, const Var& b) {
    const Tensor& A = a->value;
    const Tensor& B = b->value;
    if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0))
      throw ShapeError("matmul: " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
    const std::size_t n = A.dim(0), k = A.dim(1), m = B.dim(1);
    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double av = A[i * k + p];
        if (av == 0.0) continue;
        const double* brow = &B[p * m];
        double* orow = &out[i * m];
        for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
      }
    return make(std::move(out), {a, b}, [pa = a.get(), pb = b.get(), n, k, m](const Tensor& g) {
      const Tensor& A = pa->value;
      const Tensor& B = pb->value;
      if (pa->requires_grad) {
        Tensor& ga = pa->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += g[i * m + j] * B[p * m + j];
            ga[i * k + p] += acc;
          }
      }
      if (pb->requires_grad) {
        Tensor& gb = pb->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += av * g[i * m + j];
          }
      }
    });
  }

  /// (N,M) + bias (M) broadcast over rows.
  Var add_row_bias(const Var& a, const Var& bias) {
    const Tensor& A = a->value;
    if (A.rank() != 2 || bias->value.size() != A.dim(1))
      throw ShapeError("add_row_bias: " + shape_str(A.shape()) + " + " + shape_str(bias->value.shape()));
    const std::size_t n = A.dim(0), m = A.dim(1);
    Tensor out = A;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] += bias->value[j];
    return make(std::move(out), {a, bias}, [pa = a.get(), pb = bias.get(), n, m](const Tensor& g) {
      accumulate(pa, g);
      if (pb->requires_grad) {
        Tensor& gb = pb->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) gb[j] += g[i * m + j];
      }
    });
  }

  /// (C,H,W) + v (C) broadcast over spatial positions.
  Var add_channel(const Var& x, const Var& v) {
    require_latent(x->value, "add_channel");
    const std::size_t c = x->value.dim(0), hw = x->value.dim(1) * x->value.dim(2);
    if (v->value.size() != c) throw ShapeError("add_channel: channel count mismatch");
    Tensor out = x->value;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < hw; ++p) out[ch * hw + p] += v->value[ch];
    return make(std::move(out), {x, v}, [px = x.get(), pv = v.get(), c, hw](const Tensor& g) {
      accumulate(px, g);
      if (pv->requires_grad) {
        Tensor& gv = pv->ensure_grad();
        for (std::size_t ch = 0; ch < c; ++ch) {
          double acc = 0.0;
          for (std::size_t p = 0; p < hw; ++p) acc += g[ch * hw + p];
          gv[ch] += acc;
        }
      }
    });
  }

  /// 2-D convolution of a (C,H,W) map with weights (O,C,K,K) and optional bias (O).
  Var conv2d(const Var& x, const Var& w, const Var& b, std::size_t stride, std::size_t pad) {
    const Tensor& X = x->value;
    const Tensor& W = w->value;
    require_latent(X, "conv2d");
    if (W.rank() != 4 || W.dim(1) != X.dim(0) || W.dim(2) != W.dim(3))
      throw ShapeError("conv2d: weight " + shape_str(W.shape()) + " incompatible with input " +
                       shape_str(X.shape()));
    const std::size_t cin = X.dim(0), h = X.dim(1), wd = X.dim(2);
    const std::size_t cout = W.dim(0), k = W.dim(2);
    if (h + 2 * pad < k || wd + 2 * pad < k) throw ShapeError("conv2d: input smaller than kernel");
    const std::size_t ho = (h + 2 * pad - k) / stride + 1;
    const std::size_t wo = (wd + 2 * pad - k) / stride + 1;
    if (b && b->value.size() != cout) throw ShapeError("conv2d: bias size mismatch");
    Tensor out({cout, ho, wo});
    const Geometry geo{cin, h, wd, cout, k, ho, wo, stride, pad};
    for (std::size_t o = 0; o < cout; ++o) {
      double* oplane = &out[o * ho * wo];
      if (b) std::fill(oplane, oplane + ho * wo, b->value[o]);
      for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx) {
            const double wv = W[((o * cin + c) * k + ky) * k + kx];
            geo.for_each(ky, kx, [&](std::size_t op, std::size_t ip) {
              oplane[op] += wv * X[c * h * wd + ip];
            });
          }
    }
    std::vector<Var> parents{x, w};
    if (b) parents.push_back(b);
    return make(std::move(out), std::move(parents),
                [px = x.get(), pw = w.get(), pb = b ? b.get() : nullptr, geo](const Tensor& g) {
                  const Tensor& X = px->value;
                  const Tensor& W = pw->value;
                  const std::size_t cin = geo.cin, k = geo.k, hw = geo.h * geo.w,
                                    ohw = geo.ho * geo.wo;
                  Tensor* gx = px->requires_grad ? &px->ensure_grad() : nullptr;
                  Tensor* gw = pw->requires_grad ? &pw->ensure_grad() : nullptr;
                  for (std::size_t o = 0; o < geo.cout; ++o) {
                    const double* gplane = &g[o * ohw];
                    for (std::size_t c = 0; c < cin; ++c)
                      for (std::size_t ky = 0; ky < k; ++ky)
                        for (std::size_t kx = 0; kx < k; ++kx) {
                          const std::size_t widx = ((o * cin + c) * k + ky) * k + kx;
                          const double wv = W[widx];
                          double acc = 0.0;
                          geo.for_each(ky, kx, [&](std::size_t op, std::size_t ip) {
                            if (gx) (*gx)[c * hw + ip] += wv * gplane[op];
                            acc += gplane[op] * X[c * hw + ip];
                          });
                          if (gw) (*gw)[widx] += acc;
                        }
                  }
                  if (pb && pb->requires_grad) {
                    Tensor& gb = pb->ensure_grad();
                    for (std::size_t o = 0; o < geo.cout; ++o) {
                      double acc = 0.0;
                      for (std::size_t p = 0; p < ohw; ++p) acc += g[o * ohw + p];
                      gb[o] += acc;
                    }
                  }
                });
  }

  /// Row-wise layer normalisation of (N,C) with affine (C) parameters.
  Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
    const Tensor& X = x->value;
    if (X.rank() != 2 || gamma->value.size() != X.dim(1) || beta->value.size() != X.dim(1))
      throw ShapeError("layer_norm_rows: shape mismatch");
    const std::size_t n = X.dim(0), c = X.dim(1);
    Tensor xhat({n, c});
    std::vector<double> inv_std(n);
    Tensor out({n, c});
    for (std::size_t i = 0; i < n; ++i) {
      double mu = 0.0;
      for (std::size_t j = 0; j < c; ++j) mu += X[i * c + j];
      mu /= static_cast<double>(c);
      double var = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        const double d = X[i * c + j] - mu;
        var += d * d;
      }
      var /= static_cast<double>(c);
      inv_std[i] = 1.0 / std::sqrt(var + eps);
      for (std::size_t j = 0; j < c; ++j) {
        xhat[i * c + j] = (X[i * c + j] - mu) * inv_std[i];
        out[i * c + j] = gamma->value[j] * xhat[i * c + j] + beta->value[j];
      }
    }
    return make(std::move(out), {x, gamma, beta},
                [px = x.get(), pg = gamma.get(), pb = beta.get(), xhat = std::move(xhat),
                 inv_std = std::move(inv_std), n, c](const Tensor& g) {
                  if (pg->requires_grad || pb->requires_grad) {
                    Tensor& gg = pg->ensure_grad();
                    Tensor& gb = pb->ensure_grad();
                    for (std::size_t i = 0; i < n; ++i)
                      for (std::size_t j = 0; j < c; ++j) {
                        gg[j] += g[i * c + j] * xhat[i * c + j];
                        gb[j] += g[i * c + j];
                      }
                  }
                  if (!px->requires_grad) return;
                  Tensor& gx = px->ensure_grad();
                  const double inv_c = 1.0 / static_cast<double>(c);
                  for (std::size_t i = 0; i < n; ++i) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t j = 0; j < c; ++j) {
                      const double dxh = g[i * c + j] * pg->value[j];
                      m1 += dxh;
                      m2 += dxh * xhat[i * c + j];
                    }
                    m1 *= inv_c;
                    m2 *= inv_c;
                    for (std::size_t j = 0; j < c; ++j) {
                      const double dxh = g[i * c + j] * pg->value[j];
                      gx[i * c + j] += inv_std[i] * (dxh - m1 - xhat[i * c + j] * m2);
                    }
                  }
                });
  }

  /// Multi-head scaled dot-product attention. q: (N,D), k and v: (M,D).
  /// Keys with mask[j] == false are excluded from the softmax; an empty mask
  /// means every key is valid. Rows with no valid key produce zeros.
  Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads,
                const std::vector<bool>& mask = {}) {
    const Tensor& Q = q->value;
    const Tensor& K = k->value;
    const Tensor& V = v->value;
    if (Q.rank() != 2 || K.rank() != 2 || V.rank() != 2 || K.dim(1) != Q.dim(1) ||
        V.shape() != K.shape())
      throw ShapeError("attention: incompatible q/k/v shapes");
    const std::size_t n = Q.dim(0), m = K.dim(0), d = Q.dim(1);
    if (heads == 0 || d % heads != 0) throw ShapeError("attention: dim not divisible by heads");
    if (!mask.empty() && mask.size() != m) throw ShapeError("attention: mask length mismatch");
    const std::size_t dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<bool> valid = mask.empty() ? std::vector<bool>(m, true) : mask;

    // probs[h][i][j]
    std::vector<double> probs(heads * n * m, 0.0);
    Tensor out({n, d});
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const std::size_t off = hd * dh;
      for (std::size_t i = 0; i < n; ++i) {
        double* p = &probs[(hd * n + i) * m];
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < m; ++j) {
          if (!valid[j]) continue;
          double s = 0.0;
          for (std::size_t e = 0; e < dh; ++e) s += Q[i * d + off + e] * K[j * d + off + e];
          p[j] = s * inv_sqrt;
          mx = std::max(mx, p[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
          if (!valid[j]) continue;
          p[j] = std::exp(p[j] - mx);
          z += p[j];
        }
        if (z == 0.0) continue;
        for (std::size_t j = 0; j < m; ++j) {
          if (!valid[j]) continue;
          p[j] /= z;
          for (std::size_t e = 0; e < dh; ++e) out[i * d + off + e] += p[j] * V[j * d + off + e];
        }
      }
    }
    return make(std::move(out), {q, k, v},
                [pq = q.get(), pk = k.get(), pv = v.get(), probs = std::move(probs),
                 valid = std::move(valid), n, m, d, dh, heads, inv_sqrt](const Tensor& g) {
                  const Tensor& Q = pq->value;
                  const Tensor& K = pk->value;
                  const Tensor& V = pv->value;
                  Tensor* gq = pq->requires_grad ? &pq->ensure_grad() : nullptr;
                  Tensor* gk = pk->requires_grad ? &pk->ensure_grad() : nullptr;
                  Tensor* gv = pv->requires_grad ? &pv->ensure_grad() : nullptr;
                  std::vector<double> dp(m), ds(m);
                  for (std::size_t hd = 0; hd < heads; ++hd) {
                    const std::size_t off = hd * dh;
                    for (std::size_t i = 0; i < n; ++i) {
                      const double* p = &probs[(hd * n + i) * m];
                      double dot = 0.0;
                      for (std::size_t j = 0; j < m; ++j) {
                        dp[j] = 0.0;
                        if (!valid[j]) continue;
                        for (std::size_t e = 0; e < dh; ++e) {
                          const double go = g[i * d + off + e];
                          dp[j] += go * V[j * d + off + e];
                          if (gv) (*gv)[j * d + off + e] += p[j] * go;
                        }
                        dot += dp[j] * p[j];
                      }
                      for (std::size_t j = 0; j < m; ++j) {
                        if (!valid[j]) continue;
                        ds[j] = p[j] * (dp[j] - dot) * inv_sqrt;
                        for (std::size_t e = 0; e < dh; ++e) {
                          if (gq) (*gq)[i * d + off + e] += ds[j] * K[j * d + off + e];
                          if (gk) (*gk)[j * d + off + e] += ds[j] * Q[i * d + off + e];
                        }
                      }
                    }
                  }
                });
  }

 private:
  struct Geometry {
    std::size_t cin, h, w, cout, k, ho, wo, stride, pad;
    // Calls fn(output_index, input_index) for every in-bounds tap (ky, kx).
    template <typename F>
    void for_each(std::size_t ky, std::size_t kx, F&& fn) const {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                  static_cast<std::ptrdiff_t>(pad);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                    static_cast<std::ptrdiff_t>(pad);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
          fn(oy * wo + ox, static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix));
        }
      }
    }
  };

  static void accumulate(Node* p, const Tensor& g) {
    if (!p->requires_grad) return;
    Tensor& gp = p->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
  }

  Var make(Tensor value, std::vector<Var> parents, std::function<void(const Tensor&)> fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    if (record_ && std::any_of(parents.begin(), parents.end(),
                               [](const Var& p) { return p->requires_grad; })) {
      n->requires_grad = true;
      n->parents = std::move(parents);
      n->backward = std::move(fn);
      tape_.push_back(n);
    }
    return n;
  }

  bool record_;
  std::vector<Var> tape_;
};

}  // namespace dtpsr::ad
