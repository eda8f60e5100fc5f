#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "vinil/tensor.hpp"

namespace vinil {

/// Reverse-mode tape. Nodes are appended in forward order, so the list is
/// topologically ordered by construction; backward() walks it once in
/// reverse. A tape is rebuilt for every training step and consumed by
/// backward(). Outputs are only recorded when at least one input is
/// tracked, so inference needs no special mode: just don't watch anything.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a leaf. After backward(), grad(t) holds dLoss/dt.
  void watch(Tensor& t) {
    check(!consumed_, "Tape: already consumed by backward()");
    check(t.node < 0, "Tape::watch: tensor is already tracked");
    t.node = push(t.size(), nullptr);
  }

  bool tracked(const Tensor& t) const { return t.node >= 0; }

  void backward(const Tensor& loss) {
    check(!consumed_, "Tape::backward: tape already consumed");
    check(is_scalar(loss), "Tape::backward: loss must be a scalar, got shape ",
          shape_str(loss.shape));
    check(loss.node >= 0, "Tape::backward: loss does not depend on any watched tensor");
    consumed_ = true;
    nodes_[static_cast<size_t>(loss.node)].grad[0] = 1.0;
    for (size_t i = nodes_.size(); i-- > 0;) {
      if (nodes_[i].backprop) nodes_[i].backprop(*this);
    }
  }

  const std::vector<double>& grad(const Tensor& t) const {
    check(consumed_, "Tape::grad: call backward() first");
    check(t.node >= 0, "Tape::grad: tensor is not tracked");
    return nodes_[static_cast<size_t>(t.node)].grad;
  }

  // ---- ops -------------------------------------------------------------

  /// y = x.w + b with x (B,I), w (I,O), b (O) or empty.
  Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    check(x.rank() == 2 && w.rank() == 2 && x.shape[1] == w.shape[0],
          "affine: incompatible shapes x", shape_str(x.shape), " w", shape_str(w.shape));
    const bool bias = !b.values.empty();
    if (bias)
      check(b.rank() == 1 && b.shape[0] == w.shape[1], "affine: bias shape ", shape_str(b.shape),
            " does not match w", shape_str(w.shape));
    const int B = x.shape[0], I = x.shape[1], O = w.shape[1];
    Tensor out({B, O});
    for (int r = 0; r < B; ++r) {
      double* orow = &out.values[static_cast<size_t>(r) * O];
      if (bias) std::copy(b.values.begin(), b.values.end(), orow);
      const double* xrow = &x.values[static_cast<size_t>(r) * I];
      for (int i = 0; i < I; ++i) {
        const double xv = xrow[i];
        if (xv == 0.0) continue;
        const double* wrow = &w.values[static_cast<size_t>(i) * O];
        for (int o = 0; o < O; ++o) orow[o] += xv * wrow[o];
      }
    }
    if (!recording(x, w, b)) return out;
    out.node = push(out.size(), [xn = x.node, wn = w.node, bn = bias ? b.node : -1,
                                 on = next_node(), xv = x.values, wv = w.values, B, I,
                                 O](Tape& t) {
      const std::vector<double>& go = t.node_grad(on);
      if (xn >= 0) {
        std::vector<double>& gx = t.node_grad(xn);
        for (int r = 0; r < B; ++r)
          for (int i = 0; i < I; ++i) {
            const double* wrow = &wv[static_cast<size_t>(i) * O];
            const double* grow = &go[static_cast<size_t>(r) * O];
            double acc = 0.0;
            for (int o = 0; o < O; ++o) acc += grow[o] * wrow[o];
            gx[static_cast<size_t>(r) * I + i] += acc;
          }
      }
      if (wn >= 0) {
        std::vector<double>& gw = t.node_grad(wn);
        for (int r = 0; r < B; ++r) {
          const double* xrow = &xv[static_cast<size_t>(r) * I];
          const double* grow = &go[static_cast<size_t>(r) * O];
          for (int i = 0; i < I; ++i) {
            const double xvi = xrow[i];
            if (xvi == 0.0) continue;
            double* gwrow = &gw[static_cast<size_t>(i) * O];
            for (int o = 0; o < O; ++o) gwrow[o] += xvi * grow[o];
          }
        }
      }
      if (bn >= 0) {
        std::vector<double>& gb = t.node_grad(bn);
        for (int r = 0; r < B; ++r)
          for (int o = 0; o < O; ++o) gb[static_cast<size_t>(o)] += go[static_cast<size_t>(r) * O + o];
      }
    });
    return out;
  }

  /// C = scale * a^T b with a (B,D), b (B,E) -> (D,E).
  Tensor matmul_tn(const Tensor& a, const Tensor& b, double scale) {
    check(a.rank() == 2 && b.rank() == 2 && a.shape[0] == b.shape[0],
          "matmul_tn: incompatible shapes a", shape_str(a.shape), " b", shape_str(b.shape));
    const int B = a.shape[0], D = a.shape[1], E = b.shape[1];
    Tensor out({D, E});
    for (int r = 0; r < B; ++r) {
      const double* arow = &a.values[static_cast<size_t>(r) * D];
      const double* brow = &b.values[static_cast<size_t>(r) * E];
      for (int d = 0; d < D; ++d) {
        const double av = scale * arow[d];
        if (av == 0.0) continue;
        double* orow = &out.values[static_cast<size_t>(d) * E];
        for (int e = 0; e < E; ++e) orow[e] += av * brow[e];
      }
    }
    if (!recording(a, b)) return out;
    out.node = push(out.size(), [an = a.node, bn = b.node, on = next_node(), av = a.values,
                                 bv = b.values, scale, B, D, E](Tape& t) {
      const std::vector<double>& go = t.node_grad(on);
      if (an >= 0) {
        std::vector<double>& ga = t.node_grad(an);
        for (int r = 0; r < B; ++r)
          for (int d = 0; d < D; ++d) {
            const double* grow = &go[static_cast<size_t>(d) * E];
            const double* brow = &bv[static_cast<size_t>(r) * E];
            double acc = 0.0;
            for (int e = 0; e < E; ++e) acc += grow[e] * brow[e];
            ga[static_cast<size_t>(r) * D + d] += scale * acc;
          }
      }
      if (bn >= 0) {
        std::vector<double>& gb = t.node_grad(bn);
        for (int r = 0; r < B; ++r)
          for (int d = 0; d < D; ++d) {
            const double avd = scale * av[static_cast<size_t>(r) * D + d];
            if (avd == 0.0) continue;
            const double* grow = &go[static_cast<size_t>(d) * E];
            double* gbrow = &gb[static_cast<size_t>(r) * E];
            for (int e = 0; e < E; ++e) gbrow[e] += avd * grow[e];
          }
      }
    });
    return out;
  }

  /// 2-D convolution, zero padding, stride >= 1. x (B,C,H,W), k (O,C,kh,kw),
  /// b (O) or empty -> (B,O,Ho,Wo). Direct loops.
  Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& b, int stride, int pad) {
    check(x.rank() == 4 && k.rank() == 4 && x.shape[1] == k.shape[1],
          "conv2d: incompatible shapes x", shape_str(x.shape), " k", shape_str(k.shape));
    check(stride >= 1, "conv2d: stride must be >= 1");
    check(pad >= 0, "conv2d: pad must be >= 0");
    const bool bias = !b.values.empty();
    if (bias)
      check(b.rank() == 1 && b.shape[0] == k.shape[0], "conv2d: bias shape ", shape_str(b.shape),
            " does not match k", shape_str(k.shape));
    const int B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int O = k.shape[0], kh = k.shape[2], kw = k.shape[3];
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    check(H + 2 * pad >= kh && W + 2 * pad >= kw, "conv2d: kernel ", shape_str(k.shape),
          " larger than padded input ", shape_str(x.shape));
    Tensor out({B, O, Ho, Wo});
    auto xat = [&](int n, int c, int i, int j) {
      return x.values[((static_cast<size_t>(n) * C + c) * H + i) * W + j];
    };
    for (int n = 0; n < B; ++n)
      for (int o = 0; o < O; ++o)
        for (int i = 0; i < Ho; ++i)
          for (int j = 0; j < Wo; ++j) {
            double acc = bias ? b.values[static_cast<size_t>(o)] : 0.0;
            for (int c = 0; c < C; ++c)
              for (int u = 0; u < kh; ++u) {
                const int ii = i * stride - pad + u;
                if (ii < 0 || ii >= H) continue;
                for (int v = 0; v < kw; ++v) {
                  const int jj = j * stride - pad + v;
                  if (jj < 0 || jj >= W) continue;
                  acc += xat(n, c, ii, jj) *
                         k.values[((static_cast<size_t>(o) * C + c) * kh + u) * kw + v];
                }
              }
            out.values[((static_cast<size_t>(n) * O + o) * Ho + i) * Wo + j] = acc;
          }
    if (!recording(x, k, b)) return out;
    out.node = push(out.size(), [xn = x.node, kn = k.node, bn = bias ? b.node : -1,
                                 on = next_node(), xv = x.values, kv = k.values, B, C, H, W, O,
                                 kh, kw, Ho, Wo, stride, pad](Tape& t) {
      const std::vector<double>& go = t.node_grad(on);
      std::vector<double>* gx = xn >= 0 ? &t.node_grad(xn) : nullptr;
      std::vector<double>* gk = kn >= 0 ? &t.node_grad(kn) : nullptr;
      std::vector<double>* gb = bn >= 0 ? &t.node_grad(bn) : nullptr;
      for (int n = 0; n < B; ++n)
        for (int o = 0; o < O; ++o)
          for (int i = 0; i < Ho; ++i)
            for (int j = 0; j < Wo; ++j) {
              const double g = go[((static_cast<size_t>(n) * O + o) * Ho + i) * Wo + j];
              if (g == 0.0) continue;
              if (gb) (*gb)[static_cast<size_t>(o)] += g;
              for (int c = 0; c < C; ++c)
                for (int u = 0; u < kh; ++u) {
                  const int ii = i * stride - pad + u;
                  if (ii < 0 || ii >= H) continue;
                  for (int v = 0; v < kw; ++v) {
                    const int jj = j * stride - pad + v;
                    if (jj < 0 || jj >= W) continue;
                    const size_t xi = ((static_cast<size_t>(n) * C + c) * H + ii) * W + jj;
                    const size_t ki = ((static_cast<size_t>(o) * C + c) * kh + u) * kw + v;
                    if (gx) (*gx)[xi] += g * kv[ki];
                    if (gk) (*gk)[ki] += g * xv[xi];
                  }
                }
            }
    });
    return out;
  }

  Tensor relu(const Tensor& x) {
    Tensor out(x.shape);
    for (size_t i = 0; i < x.values.size(); ++i) out.values[i] = x.values[i] > 0.0 ? x.values[i] : 0.0;
    if (!recording(x)) return out;
    out.node = push(out.size(), [xn = x.node, on = next_node(), xv = x.values](Tape& t) {
      const std::vector<double>& go = t.node_grad(on);
      std::vector<double>& gx = t.node_grad(xn);
      for (size_t i = 0; i < xv.size(); ++i)
        if (xv[i] > 0.0) gx[i] += go[i];
    });
    return out;
  }

  Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, "add", 0); }
  Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(a, b, "sub", 1); }
  Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, "mul", 2); }

  /// out = c * x for a plain constant c.
  Tensor scale(const Tensor& x, double c) {
    Tensor out(x.shape);
    for (size_t i = 0; i < x.values.size(); ++i) out.values[i] = c * x.values[i];
    if (!recording(x)) return out;
    out.node = push(out.size(), [xn = x.node, on = next_node(), c, n = x.values.size()](Tape& t) {
      const std::vector<double>& go = t.node_grad(on);
      std::vector<double>& gx = t.node_grad(xn);
      for (size_t i = 0; i < n; ++i) gx[i] += c * go[i];
    });
    return out;
  }

  Tensor sum(const Tensor& x) { return reduce(x, false); }
  Tensor mean(const Tensor& x) { return reduce(x, true); }

  /// Column means of x (B,D) -> (D).
  Tensor batch_mean(const Tensor& x) {
    check(x.rank() == 2, "batch_mean: expected rank-2 input, got ", shape_str(x.shape));
    const int B = x.shape[0], D = x.shape[1];
    Tensor out({D});
    for (int r = 0; r < B; ++r)
      for (int d = 0; d < D; ++d) out.values[static_cast<size_t>(d)] += x.at(r, d);
    for (auto& v : out.values) v /= B;
    if (!recording(x)) return out;
    out.node = push(out.size(), [xn = x.node, on = next_node(), B, D](Tape& t) {
      const std::vector<double>& go = t.node_grad(on);
      std::vector<double>& gx = t.node_grad(xn);
      for (int r = 0; r < B; ++r)
        for (int d = 0; d < D; ++d) gx[static_cast<size_t>(r) * D + d] += go[static_cast<size_t>(d)] / B;
    });
    return out;
  }

  /// Column standard deviations (population) of x (B,D) -> (D), with eps
  /// added under the square root to keep zero-variance columns finite.
  Tensor batch_std(const Tensor& x, double eps = 1e-5) {
    check(x.rank() == 2, "batch_std: expected rank-2 input, got ", shape_str(x.shape));
    check(x.shape[0] >= 2, "batch_std: batch must have >= 2 rows, got ", shape_str(x.shape));
    const int B = x.shape[0], D = x.shape[1];
    std::vector<double> mu(static_cast<size_t>(D), 0.0);
    for (int r = 0; r < B; ++r)
      for (int d = 0; d < D; ++d) mu[static_cast<size_t>(d)] += x.at(r, d);
    for (auto& v : mu) v /= B;
    Tensor out({D});
    for (int r = 0; r < B; ++r)
      for (int d = 0; d < D; ++d) {
        const double c = x.at(r, d) - mu[static_cast<size_t>(d)];
        out.values[static_cast<size_t>(d)] += c * c;
      }
    for (auto& v : out.values) v = std::sqrt(v / B + eps);
    if (!recording(x)) return out;
    out.node = push(out.size(), [xn = x.node, on = next_node(), xv = x.values, mu,
                                 sigma = out.values, B, D](Tape& t) {
      const std::vector<double>& go = t.node_grad(on);
      std::vector<double>& gx = t.node_grad(xn);
      // d sigma_d / d x_rd = (x_rd - mu_d) / (B * sigma_d); the mu term cancels.
      for (int r = 0; r < B; ++r)
        for (int d = 0; d < D; ++d) {
          const double s = sigma[static_cast<size_t>(d)];
          if (s == 0.0) continue;
          gx[static_cast<size_t>(r) * D + d] +=
              go[static_cast<size_t>(d)] * (xv[static_cast<size_t>(r) * D + d] - mu[static_cast<size_t>(d)]) / (B * s);
        }
    });
    return out;
  }

  /// Column-wise standardization of x (B,D): subtract mean, divide by the
  /// exact population std. A column whose spread is at cancellation-noise
  /// level (or exactly zero) maps to zeros instead of amplified noise;
  /// such columns also pass no gradient.
  Tensor batch_normalize(const Tensor& x) {
    check(x.rank() == 2, "batch_normalize: expected rank-2 input, got ", shape_str(x.shape));
    check(x.shape[0] >= 2, "batch_normalize: batch must have >= 2 rows, got ",
          shape_str(x.shape));
    const int B = x.shape[0], D = x.shape[1];
    std::vector<double> mu(static_cast<size_t>(D), 0.0), sigma(static_cast<size_t>(D), 0.0);
    std::vector<char> dead(static_cast<size_t>(D), 0);
    for (int r = 0; r < B; ++r)
      for (int d = 0; d < D; ++d) mu[static_cast<size_t>(d)] += x.at(r, d);
    for (auto& v : mu) v /= B;
    for (int d = 0; d < D; ++d) {
      double var = 0.0, maxdev = 0.0, maxabs = 0.0;
      for (int r = 0; r < B; ++r) {
        const double c = x.at(r, d) - mu[static_cast<size_t>(d)];
        var += c * c;
        maxdev = std::max(maxdev, std::abs(c));
        maxabs = std::max(maxabs, std::abs(x.at(r, d)));
      }
      sigma[static_cast<size_t>(d)] = std::sqrt(var / B);
      if (maxdev <= 1e-12 * maxabs || sigma[static_cast<size_t>(d)] == 0.0) dead[static_cast<size_t>(d)] = 1;
    }
    Tensor out({B, D});
    for (int r = 0; r < B; ++r)
      for (int d = 0; d < D; ++d)
        out.at(r, d) = dead[static_cast<size_t>(d)]
                           ? 0.0
                           : (x.at(r, d) - mu[static_cast<size_t>(d)]) / sigma[static_cast<size_t>(d)];
    if (!recording(x)) return out;
    out.node = push(out.size(), [xn = x.node, on = next_node(), xhat = out.values, sigma, dead,
                                 B, D](Tape& t) {
      const std::vector<double>& go = t.node_grad(on);
      std::vector<double>& gx = t.node_grad(xn);
      // Standard batch-norm backward with population statistics:
      // dx = (g - mean_b(g) - xhat * mean_b(g .* xhat)) / sigma
      for (int d = 0; d < D; ++d) {
        if (dead[static_cast<size_t>(d)]) continue;
        double gmean = 0.0, gxmean = 0.0;
        for (int r = 0; r < B; ++r) {
          const size_t i = static_cast<size_t>(r) * D + d;
          gmean += go[i];
          gxmean += go[i] * xhat[i];
        }
        gmean /= B;
        gxmean /= B;
        const double s = sigma[static_cast<size_t>(d)];
        for (int r = 0; r < B; ++r) {
          const size_t i = static_cast<size_t>(r) * D + d;
          gx[i] += (go[i] - gmean - xhat[i] * gxmean) / s;
        }
      }
    });
    return out;
  }

  /// Mean over the spatial dims of x (B,C,H,W) -> (B,C).
  Tensor spatial_mean(const Tensor& x) {
    check(x.rank() == 4, "spatial_mean: expected rank-4 input, got ", shape_str(x.shape));
    const int B = x.shape[0], C = x.shape[1], HW = x.shape[2] * x.shape[3];
    Tensor out({B, C});
    for (int n = 0; n < B; ++n)
      for (int c = 0; c < C; ++c) {
        const double* p = &x.values[(static_cast<size_t>(n) * C + c) * HW];
        double acc = 0.0;
        for (int i = 0; i < HW; ++i) acc += p[i];
        out.at(n, c) = acc / HW;
      }
    if (!recording(x)) return out;
    out.node = push(out.size(), [xn = x.node, on = next_node(), B, C, HW](Tape& t) {
      const std::vector<double>& go = t.node_grad(on);
      std::vector<double>& gx = t.node_grad(xn);
      for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c) {
          const double g = go[static_cast<size_t>(n) * C + c] / HW;
          double* p = &gx[(static_cast<size_t>(n) * C + c) * HW];
          for (int i = 0; i < HW; ++i) p[i] += g;
        }
    });
    return out;
  }

  /// Row-wise log-softmax of x (B,N).
  Tensor log_softmax(const Tensor& x) {
    check(x.rank() == 2, "log_softmax: expected rank-2 input, got ", shape_str(x.shape));
    const int B = x.shape[0], N = x.shape[1];
    Tensor out({B, N});
    std::vector<double> soft(x.values.size());
    for (int r = 0; r < B; ++r) {
      const double* row = &x.values[static_cast<size_t>(r) * N];
      double m = row[0];
      for (int i = 1; i < N; ++i) m = std::max(m, row[i]);
      double lse = 0.0;
      for (int i = 0; i < N; ++i) lse += std::exp(row[i] - m);
      lse = m + std::log(lse);
      for (int i = 0; i < N; ++i) {
        const double v = row[i] - lse;
        out.values[static_cast<size_t>(r) * N + i] = v;
        soft[static_cast<size_t>(r) * N + i] = std::exp(v);
      }
    }
    if (!recording(x)) return out;
    out.node = push(out.size(), [xn = x.node, on = next_node(), soft = std::move(soft), B,
                                 N](Tape& t) {
      const std::vector<double>& go = t.node_grad(on);
      std::vector<double>& gx = t.node_grad(xn);
      for (int r = 0; r < B; ++r) {
        double gsum = 0.0;
        for (int i = 0; i < N; ++i) gsum += go[static_cast<size_t>(r) * N + i];
        for (int i = 0; i < N; ++i) {
          const size_t idx = static_cast<size_t>(r) * N + i;
          gx[idx] += go[idx] - soft[idx] * gsum;
        }
      }
    });
    return out;
  }

  /// Mean negative log-likelihood: -(1/B) sum_b logp[b, labels[b]].
  Tensor nll(const Tensor& logp, const std::vector<int>& labels) {
    check(logp.rank() == 2, "nll: expected rank-2 log-probs, got ", shape_str(logp.shape));
    const int B = logp.shape[0], N = logp.shape[1];
    check(static_cast<int>(labels.size()) == B, "nll: ", labels.size(), " labels for batch of ", B);
    for (int b = 0; b < B; ++b)
      check(labels[static_cast<size_t>(b)] >= 0 && labels[static_cast<size_t>(b)] < N,
            "nll: label ", labels[static_cast<size_t>(b)], " out of range [0, ", N, ")");
    double acc = 0.0;
    for (int b = 0; b < B; ++b) acc -= logp.at(b, labels[static_cast<size_t>(b)]);
    Tensor out = Tensor::scalar(acc / B);
    if (!recording(logp)) return out;
    out.node = push(1, [ln = logp.node, on = next_node(), labels, B, N](Tape& t) {
      const double g = t.node_grad(on)[0];
      std::vector<double>& gl = t.node_grad(ln);
      for (int b = 0; b < B; ++b)
        gl[static_cast<size_t>(b) * N + labels[static_cast<size_t>(b)]] -= g / B;
    });
    return out;
  }

  /// sum_i (1 - C_ii)^2 + w_b * sum_{i != j} C_ij^2 for square C.
  Tensor barlow_penalty(const Tensor& corr, double w_b) {
    check(corr.rank() == 2 && corr.shape[0] == corr.shape[1],
          "barlow_penalty: expected a square matrix, got ", shape_str(corr.shape));
    const int D = corr.shape[0];
    double acc = 0.0;
    for (int i = 0; i < D; ++i)
      for (int j = 0; j < D; ++j) {
        const double c = corr.at(i, j);
        acc += i == j ? (1.0 - c) * (1.0 - c) : w_b * c * c;
      }
    Tensor out = Tensor::scalar(acc);
    if (!recording(corr)) return out;
    out.node = push(1, [cn = corr.node, on = next_node(), cv = corr.values, w_b, D](Tape& t) {
      const double g = t.node_grad(on)[0];
      std::vector<double>& gc = t.node_grad(cn);
      for (int i = 0; i < D; ++i)
        for (int j = 0; j < D; ++j) {
          const size_t idx = static_cast<size_t>(i) * D + j;
          gc[idx] += g * (i == j ? -2.0 * (1.0 - cv[idx]) : 2.0 * w_b * cv[idx]);
        }
    });
    return out;
  }

  Tensor reshape(const Tensor& x, std::vector<int> new_shape) {
    check(numel(new_shape) == x.size(), "reshape: cannot view ", shape_str(x.shape), " as ",
          shape_str(new_shape));
    Tensor out(std::move(new_shape), x.values);
    if (!recording(x)) return out;
    out.node = push(out.size(), [xn = x.node, on = next_node(), n = x.values.size()](Tape& t) {
      const std::vector<double>& go = t.node_grad(on);
      std::vector<double>& gx = t.node_grad(xn);
      for (size_t i = 0; i < n; ++i) gx[i] += go[i];
    });
    return out;
  }

  /// (B, ...) -> (B, product of the rest).
  Tensor flatten(const Tensor& x) {
    check(x.rank() >= 2, "flatten: expected rank >= 2, got ", shape_str(x.shape));
    return reshape(x, {x.shape[0], static_cast<int>(x.size() / x.shape[0])});
  }

  size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    std::vector<double> grad;
    std::function<void(Tape&)> backprop;
  };

  std::vector<Node> nodes_;
  bool consumed_ = false;

  int next_node() const { return static_cast<int>(nodes_.size()); }

  int push(int64_t size, std::function<void(Tape&)> fn) {
    Node n;
    n.grad.assign(static_cast<size_t>(size), 0.0);
    n.backprop = std::move(fn);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<double>& node_grad(int node) { return nodes_[static_cast<size_t>(node)].grad; }

  template <typename... Ts>
  bool recording(const Ts&... ts) {
    check(!consumed_, "Tape: already consumed by backward()");
    return ((ts.node >= 0) || ...);
  }

  Tensor elementwise(const Tensor& a, const Tensor& b, const char* name, int kind) {
    check(same_shape(a, b), name, ": shape mismatch ", shape_str(a.shape), " vs ",
          shape_str(b.shape));
    Tensor out(a.shape);
    for (size_t i = 0; i < a.values.size(); ++i) {
      switch (kind) {
        case 0: out.values[i] = a.values[i] + b.values[i]; break;
        case 1: out.values[i] = a.values[i] - b.values[i]; break;
        default: out.values[i] = a.values[i] * b.values[i]; break;
      }
    }
    if (!recording(a, b)) return out;
    out.node = push(out.size(), [an = a.node, bn = b.node, on = next_node(), kind,
                                 av = a.values, bv = b.values](Tape& t) {
      const std::vector<double>& go = t.node_grad(on);
      if (an >= 0) {
        std::vector<double>& ga = t.node_grad(an);
        for (size_t i = 0; i < go.size(); ++i) ga[i] += kind == 2 ? go[i] * bv[i] : go[i];
      }
      if (bn >= 0) {
        std::vector<double>& gb = t.node_grad(bn);
        for (size_t i = 0; i < go.size(); ++i)
          gb[i] += kind == 2 ? go[i] * av[i] : (kind == 1 ? -go[i] : go[i]);
      }
    });
    return out;
  }

  Tensor reduce(const Tensor& x, bool take_mean) {
    double acc = 0.0;
    for (double v : x.values) acc += v;
    const double denom = take_mean ? static_cast<double>(x.values.size()) : 1.0;
    Tensor out = Tensor::scalar(acc / denom);
    if (!recording(x)) return out;
    out.node = push(1, [xn = x.node, on = next_node(), denom, n = x.values.size()](Tape& t) {
      const double g = t.node_grad(on)[0] / denom;
      std::vector<double>& gx = t.node_grad(xn);
      for (size_t i = 0; i < n; ++i) gx[i] += g;
    });
    return out;
  }
};

}  // namespace vinil
