#include "umami/autograd.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "umami/common.hpp"

namespace umami::ag {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapC = Eigen::Map<const MatRM>;

namespace {

MapC view(const Tensor& t) { return MapC(t.data.data(), t.rows(), t.cols()); }
MapM view(Tensor& t) { return MapM(t.data.data(), t.rows(), t.cols()); }
MapC view(const Tensor& t, long r, long c) { return MapC(t.data.data(), r, c); }
MapM view(Tensor& t, long r, long c) { return MapM(t.data.data(), r, c); }

void require(bool ok, const char* msg) {
  if (!ok) throw NumericError(std::string("autograd: ") + msg);
}

}  // namespace

NodeId make_node(Tape& t, Tensor value, std::vector<NodeId> /*parents*/,
                 std::function<void(Tape&, NodeId)> back);

NodeId Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, false, false, {}});
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, false, true, {}});
  return static_cast<NodeId>(nodes_.size() - 1);
}

const Tensor& Tape::grad(NodeId id) {
  // allocate-on-demand so "did not influence the root" reads as zeros
  return grad_buffer(id);
}

Tensor& Tape::grad_buffer(NodeId id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.has_grad) {
    n.grad = Tensor::zeros(n.value.shape);
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(NodeId id, const Tensor& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.is_constant) return;
  Tensor& buf = grad_buffer(id);
  require(buf.numel() == g.numel(), "gradient shape mismatch");
  for (long i = 0; i < g.numel(); ++i) buf[i] += g[i];
}

void Tape::backward(NodeId root) {
  require(!swept_, "backward called twice on one tape");
  swept_ = true;
  Node& r = nodes_[static_cast<std::size_t>(root)];
  require(r.value.is_scalar(), "backward root must be scalar");
  grad_buffer(root)[0] = 1.0;
  for (NodeId i = root; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.has_grad || !n.back) continue;
    n.back(*this, i);
  }
}

NodeId make_node(Tape& t, Tensor value, std::vector<NodeId> /*parents*/,
                 std::function<void(Tape&, NodeId)> back) {
  // parents are captured inside `back`; the list argument documents intent
  // at call sites but the tape itself only needs the closure.
  t.nodes_.push_back({std::move(value), Tensor{}, false, false, std::move(back)});
  return static_cast<NodeId>(t.nodes_.size() - 1);
}

// ---- elementwise ---------------------------------------------------------

NodeId add(Tape& t, NodeId a, NodeId b) {
  require(t.val(a).same_shape(t.val(b)), "add: shape mismatch");
  Tensor out = t.val(a);
  for (long i = 0; i < out.numel(); ++i) out[i] += t.val(b)[i];
  return make_node(t, std::move(out), {a, b}, [a, b](Tape& tp, NodeId self) {
    OpAccess::accumulate(tp, a, tp.grad(self));
    OpAccess::accumulate(tp, b, tp.grad(self));
  });
}

NodeId sub(Tape& t, NodeId a, NodeId b) {
  require(t.val(a).same_shape(t.val(b)), "sub: shape mismatch");
  Tensor out = t.val(a);
  for (long i = 0; i < out.numel(); ++i) out[i] -= t.val(b)[i];
  return make_node(t, std::move(out), {a, b}, [a, b](Tape& tp, NodeId self) {
    OpAccess::accumulate(tp, a, tp.grad(self));
    Tensor neg = tp.grad(self);
    for (double& x : neg.data) x = -x;
    OpAccess::accumulate(tp, b, neg);
  });
}

NodeId mul(Tape& t, NodeId a, NodeId b) {
  require(t.val(a).same_shape(t.val(b)), "mul: shape mismatch");
  Tensor out = t.val(a);
  for (long i = 0; i < out.numel(); ++i) out[i] *= t.val(b)[i];
  return make_node(t, std::move(out), {a, b}, [a, b](Tape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    Tensor ga = g, gb = g;
    for (long i = 0; i < g.numel(); ++i) {
      ga[i] = g[i] * tp.val(b)[i];
      gb[i] = g[i] * tp.val(a)[i];
    }
    OpAccess::accumulate(tp, a, ga);
    OpAccess::accumulate(tp, b, gb);
  });
}

NodeId div(Tape& t, NodeId a, NodeId b) {
  require(t.val(a).same_shape(t.val(b)), "div: shape mismatch");
  Tensor out = t.val(a);
  for (long i = 0; i < out.numel(); ++i) out[i] /= t.val(b)[i];
  return make_node(t, std::move(out), {a, b}, [a, b](Tape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    Tensor ga = g, gb = g;
    for (long i = 0; i < g.numel(); ++i) {
      double bi = tp.val(b)[i];
      ga[i] = g[i] / bi;
      gb[i] = -g[i] * tp.val(a)[i] / (bi * bi);
    }
    OpAccess::accumulate(tp, a, ga);
    OpAccess::accumulate(tp, b, gb);
  });
}

NodeId add_scalar(Tape& t, NodeId a, double c) {
  Tensor out = t.val(a);
  for (double& x : out.data) x += c;
  return make_node(t, std::move(out), {a}, [a](Tape& tp, NodeId self) {
    OpAccess::accumulate(tp, a, tp.grad(self));
  });
}

NodeId scale(Tape& t, NodeId a, double c) {
  Tensor out = t.val(a);
  for (double& x : out.data) x *= c;
  return make_node(t, std::move(out), {a}, [a, c](Tape& tp, NodeId self) {
    Tensor g = tp.grad(self);
    for (double& x : g.data) x *= c;
    OpAccess::accumulate(tp, a, g);
  });
}

NodeId add_bias(Tape& t, NodeId a, NodeId bias) {
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(bias);
  require(bv.numel() == av.cols(), "add_bias: bias length != cols");
  Tensor out = av;
  long R = av.rows(), C = av.cols();
  for (long r = 0; r < R; ++r)
    for (long c = 0; c < C; ++c) out.at(r, c) += bv[c];
  return make_node(t, std::move(out), {a, bias}, [a, bias](Tape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    OpAccess::accumulate(tp, a, g);
    Tensor gb = Tensor::zeros(tp.val(bias).shape);
    long R = g.rows(), C = g.cols();
    for (long r = 0; r < R; ++r)
      for (long c = 0; c < C; ++c) gb[c] += g.at(r, c);
    OpAccess::accumulate(tp, bias, gb);
  });
}

// ---- matmul ---------------------------------------------------------------

NodeId matmul(Tape& t, NodeId a, NodeId b) {
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  require(av.cols() == bv.rows(), "matmul: inner dims differ");
  Tensor out({av.rows(), bv.cols()});
  view(out) = view(av) * view(bv);
  return make_node(t, std::move(out), {a, b}, [a, b](Tape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    const Tensor& av = tp.val(a);
    const Tensor& bv = tp.val(b);
    if (!OpAccess::is_constant(tp, a)) {
      Tensor ga({av.rows(), av.cols()});
      view(ga) = view(g) * view(bv).transpose();
      OpAccess::accumulate(tp, a, ga);
    }
    if (!OpAccess::is_constant(tp, b)) {
      Tensor gb({bv.rows(), bv.cols()});
      view(gb) = view(av).transpose() * view(g);
      OpAccess::accumulate(tp, b, gb);
    }
  });
}

NodeId matmul_nt(Tape& t, NodeId a, NodeId b) {
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  require(av.cols() == bv.cols(), "matmul_nt: inner dims differ");
  Tensor out({av.rows(), bv.rows()});
  view(out) = view(av) * view(bv).transpose();
  return make_node(t, std::move(out), {a, b}, [a, b](Tape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    const Tensor& av = tp.val(a);
    const Tensor& bv = tp.val(b);
    if (!OpAccess::is_constant(tp, a)) {
      Tensor ga({av.rows(), av.cols()});
      view(ga) = view(g) * view(bv);
      OpAccess::accumulate(tp, a, ga);
    }
    if (!OpAccess::is_constant(tp, b)) {
      Tensor gb({bv.rows(), bv.cols()});
      view(gb) = view(g).transpose() * view(av);
      OpAccess::accumulate(tp, b, gb);
    }
  });
}

// ---- nonlinearities ---------------------------------------------------------

NodeId gelu(Tape& t, NodeId a) {
  Tensor out = t.val(a);
  for (double& x : out.data) x = 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
  return make_node(t, std::move(out), {a}, [a](Tape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    const Tensor& x = tp.val(a);
    Tensor ga = g;
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (long i = 0; i < g.numel(); ++i) {
      double xi = x[i];
      double d = 0.5 * (1.0 + std::erf(xi * M_SQRT1_2)) + xi * inv_sqrt_2pi * std::exp(-0.5 * xi * xi);
      ga[i] = g[i] * d;
    }
    OpAccess::accumulate(tp, a, ga);
  });
}

NodeId sigmoid(Tape& t, NodeId a) {
  Tensor out = t.val(a);
  for (double& x : out.data) x = (x >= 0.0) ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  NodeId id = make_node(t, std::move(out), {a}, [a](Tape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    const Tensor& y = tp.val(self);
    Tensor ga = g;
    for (long i = 0; i < g.numel(); ++i) ga[i] = g[i] * y[i] * (1.0 - y[i]);
    OpAccess::accumulate(tp, a, ga);
  });
  return id;
}

NodeId log_(Tape& t, NodeId a) {
  Tensor out = t.val(a);
  for (double& x : out.data) x = std::log(x);
  return make_node(t, std::move(out), {a}, [a](Tape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    Tensor ga = g;
    for (long i = 0; i < g.numel(); ++i) ga[i] = g[i] / tp.val(a)[i];
    OpAccess::accumulate(tp, a, ga);
  });
}

NodeId abs_(Tape& t, NodeId a) {
  Tensor out = t.val(a);
  for (double& x : out.data) x = std::abs(x);
  return make_node(t, std::move(out), {a}, [a](Tape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    Tensor ga = g;
    // subgradient 0 at exactly 0
    for (long i = 0; i < g.numel(); ++i) {
      double xi = tp.val(a)[i];
      ga[i] = g[i] * (xi > 0.0 ? 1.0 : (xi < 0.0 ? -1.0 : 0.0));
    }
    OpAccess::accumulate(tp, a, ga);
  });
}

NodeId square(Tape& t, NodeId a) {
  Tensor out = t.val(a);
  for (double& x : out.data) x = x * x;
  return make_node(t, std::move(out), {a}, [a](Tape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    Tensor ga = g;
    for (long i = 0; i < g.numel(); ++i) ga[i] = g[i] * 2.0 * tp.val(a)[i];
    OpAccess::accumulate(tp, a, ga);
  });
}

NodeId clip(Tape& t, NodeId a, double lo, double hi) {
  Tensor out = t.val(a);
  for (double& x : out.data) x = std::min(hi, std::max(lo, x));
  return make_node(t, std::move(out), {a}, [a, lo, hi](Tape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    Tensor ga = g;
    for (long i = 0; i < g.numel(); ++i) {
      double xi = tp.val(a)[i];
      ga[i] = (xi >= lo && xi <= hi) ? g[i] : 0.0;
    }
    OpAccess::accumulate(tp, a, ga);
  });
}

// ---- normalization / softmax --------------------------------------------

NodeId layer_norm(Tape& t, NodeId a, NodeId gain, NodeId bias, double eps) {
  const Tensor& x = t.val(a);
  long R = x.rows(), C = x.cols();
  require(t.val(gain).numel() == C && t.val(bias).numel() == C, "layer_norm: gain/bias length");
  Tensor out = x;
  for (long r = 0; r < R; ++r) {
    double mean = 0.0;
    for (long c = 0; c < C; ++c) mean += x.at(r, c);
    mean /= static_cast<double>(C);
    double var = 0.0;
    for (long c = 0; c < C; ++c) {
      double d = x.at(r, c) - mean;
      var += d * d;
    }
    var /= static_cast<double>(C);
    double inv = 1.0 / std::sqrt(var + eps);
    for (long c = 0; c < C; ++c)
      out.at(r, c) = (x.at(r, c) - mean) * inv * t.val(gain)[c] + t.val(bias)[c];
  }
  return make_node(t, std::move(out), {a, gain, bias}, [a, gain, bias, eps](Tape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    const Tensor& x = tp.val(a);
    long R = x.rows(), C = x.cols();
    Tensor ga = Tensor::zeros(x.shape);
    Tensor gg = Tensor::zeros(tp.val(gain).shape);
    Tensor gb = Tensor::zeros(tp.val(bias).shape);
    for (long r = 0; r < R; ++r) {
      double mean = 0.0;
      for (long c = 0; c < C; ++c) mean += x.at(r, c);
      mean /= static_cast<double>(C);
      double var = 0.0;
      for (long c = 0; c < C; ++c) {
        double d = x.at(r, c) - mean;
        var += d * d;
      }
      var /= static_cast<double>(C);
      double inv = 1.0 / std::sqrt(var + eps);
      // dL/dxhat, plus reductions for the mean/var terms
      double sum_gxh = 0.0, sum_gxh_xh = 0.0;
      for (long c = 0; c < C; ++c) {
        double xh = (x.at(r, c) - mean) * inv;
        double gxh = g.at(r, c) * tp.val(gain)[c];
        sum_gxh += gxh;
        sum_gxh_xh += gxh * xh;
        gg[c] += g.at(r, c) * xh;
        gb[c] += g.at(r, c);
      }
      double invC = 1.0 / static_cast<double>(C);
      for (long c = 0; c < C; ++c) {
        double xh = (x.at(r, c) - mean) * inv;
        double gxh = g.at(r, c) * tp.val(gain)[c];
        ga.at(r, c) = inv * (gxh - invC * sum_gxh - xh * invC * sum_gxh_xh);
      }
    }
    OpAccess::accumulate(tp, a, ga);
    OpAccess::accumulate(tp, gain, gg);
    OpAccess::accumulate(tp, bias, gb);
  });
}

NodeId softmax_rows(Tape& t, NodeId a) {
  const Tensor& x = t.val(a);
  long R = x.rows(), C = x.cols();
  Tensor out = x;
  for (long r = 0; r < R; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (long c = 0; c < C; ++c) mx = std::max(mx, x.at(r, c));
    double denom = 0.0;
    for (long c = 0; c < C; ++c) {
      double e = std::exp(x.at(r, c) - mx);
      out.at(r, c) = e;
      denom += e;
    }
    for (long c = 0; c < C; ++c) out.at(r, c) /= denom;
  }
  return make_node(t, std::move(out), {a}, [a](Tape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    const Tensor& y = tp.val(self);
    long R = y.rows(), C = y.cols();
    Tensor ga = Tensor::zeros(y.shape);
    for (long r = 0; r < R; ++r) {
      double dot = 0.0;
      for (long c = 0; c < C; ++c) dot += g.at(r, c) * y.at(r, c);
      for (long c = 0; c < C; ++c) ga.at(r, c) = y.at(r, c) * (g.at(r, c) - dot);
    }
    OpAccess::accumulate(tp, a, ga);
  });
}

// ---- shape / indexing -----------------------------------------------------

NodeId gather_rows(Tape& t, NodeId a, std::vector<long> idx) {
  const Tensor& x = t.val(a);
  long C = x.cols();
  for (long i : idx) require(i >= 0 && i < x.rows(), "gather_rows: index out of range");
  Tensor out({static_cast<long>(idx.size()), C});
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (long c = 0; c < C; ++c) out.at(static_cast<long>(r), c) = x.at(idx[r], c);
  return make_node(t, std::move(out), {a}, [a, idx = std::move(idx)](Tape& tp, NodeId self) {
    if (OpAccess::is_constant(tp, a)) return;
    const Tensor& g = tp.grad(self);
    long C = g.cols();
    Tensor ga = Tensor::zeros(tp.val(a).shape);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (long c = 0; c < C; ++c) ga.at(idx[r], c) += g.at(static_cast<long>(r), c);
    OpAccess::accumulate(tp, a, ga);
  });
}

NodeId slice_cols(Tape& t, NodeId a, long c0, long c1) {
  const Tensor& x = t.val(a);
  require(0 <= c0 && c0 < c1 && c1 <= x.cols(), "slice_cols: bad range");
  long R = x.rows(), W = c1 - c0;
  Tensor out({R, W});
  for (long r = 0; r < R; ++r)
    for (long c = 0; c < W; ++c) out.at(r, c) = x.at(r, c0 + c);
  return make_node(t, std::move(out), {a}, [a, c0, c1](Tape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    Tensor ga = Tensor::zeros(tp.val(a).shape);
    long R = g.rows(), W = c1 - c0;
    for (long r = 0; r < R; ++r)
      for (long c = 0; c < W; ++c) ga.at(r, c0 + c) = g.at(r, c);
    OpAccess::accumulate(tp, a, ga);
  });
}

NodeId concat_cols(Tape& t, const std::vector<NodeId>& parts) {
  require(!parts.empty(), "concat_cols: empty");
  long R = t.val(parts[0]).rows(), C = 0;
  for (NodeId p : parts) {
    require(t.val(p).rows() == R, "concat_cols: row mismatch");
    C += t.val(p).cols();
  }
  Tensor out({R, C});
  long off = 0;
  for (NodeId p : parts) {
    const Tensor& x = t.val(p);
    for (long r = 0; r < R; ++r)
      for (long c = 0; c < x.cols(); ++c) out.at(r, off + c) = x.at(r, c);
    off += x.cols();
  }
  return make_node(t, std::move(out), parts, [parts](Tape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    long R = g.rows(), off = 0;
    for (NodeId p : parts) {
      const Tensor& x = tp.val(p);
      Tensor gp = Tensor::zeros(x.shape);
      for (long r = 0; r < R; ++r)
        for (long c = 0; c < x.cols(); ++c) gp.at(r, c) = g.at(r, off + c);
      OpAccess::accumulate(tp, p, gp);
      off += x.cols();
    }
  });
}

NodeId concat_rows(Tape& t, const std::vector<NodeId>& parts) {
  require(!parts.empty(), "concat_rows: empty");
  long C = t.val(parts[0]).cols(), R = 0;
  for (NodeId p : parts) {
    require(t.val(p).cols() == C, "concat_rows: col mismatch");
    R += t.val(p).rows();
  }
  std::vector<long> shape = t.val(parts[0]).shape;
  shape[0] = R;
  Tensor out(shape);
  long off = 0;
  for (NodeId p : parts) {
    const Tensor& x = t.val(p);
    for (long i = 0; i < x.numel(); ++i) out[off + i] = x[i];
    off += x.numel();
  }
  return make_node(t, std::move(out), parts, [parts](Tape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    long off = 0;
    for (NodeId p : parts) {
      const Tensor& x = tp.val(p);
      Tensor gp = Tensor::zeros(x.shape);
      for (long i = 0; i < x.numel(); ++i) gp[i] = g[off + i];
      OpAccess::accumulate(tp, p, gp);
      off += x.numel();
    }
  });
}

NodeId reshape(Tape& t, NodeId a, std::vector<long> shape) {
  Tensor out = t.val(a);
  long n = 1;
  for (long d : shape) n *= d;
  require(n == out.numel(), "reshape: numel mismatch");
  out.shape = std::move(shape);
  return make_node(t, std::move(out), {a}, [a](Tape& tp, NodeId self) {
    Tensor g = tp.grad(self);
    g.shape = tp.val(a).shape;
    OpAccess::accumulate(tp, a, g);
  });
}

NodeId transpose(Tape& t, NodeId a) {
  const Tensor& x = t.val(a);
  long R = x.rows(), C = x.cols();
  Tensor out({C, R});
  for (long r = 0; r < R; ++r)
    for (long c = 0; c < C; ++c) out.at(c, r) = x.at(r, c);
  return make_node(t, std::move(out), {a}, [a](Tape& tp, NodeId self) {
    const Tensor& g = tp.grad(self);
    long R = g.rows(), C = g.cols();
    Tensor ga({C, R});
    for (long r = 0; r < R; ++r)
      for (long c = 0; c < C; ++c) ga.at(c, r) = g.at(r, c);
    OpAccess::accumulate(tp, a, ga);
  });
}

// ---- reductions -----------------------------------------------------------

NodeId sum_all(Tape& t, NodeId a) {
  double s = 0.0;
  for (double x : t.val(a).data) s += x;
  return make_node(t, Tensor::scalar(s), {a}, [a](Tape& tp, NodeId self) {
    double g = tp.grad(self)[0];
    Tensor ga = Tensor::full(tp.val(a).shape, g);
    OpAccess::accumulate(tp, a, ga);
  });
}

NodeId mean_all(Tape& t, NodeId a) {
  long n = t.val(a).numel();
  require(n > 0, "mean_all: empty tensor");
  double s = 0.0;
  for (double x : t.val(a).data) s += x;
  return make_node(t, Tensor::scalar(s / static_cast<double>(n)), {a}, [a, n](Tape& tp, NodeId self) {
    double g = tp.grad(self)[0] / static_cast<double>(n);
    Tensor ga = Tensor::full(tp.val(a).shape, g);
    OpAccess::accumulate(tp, a, ga);
  });
}

NodeId ce_mean(Tape& t, NodeId logits, std::vector<long> targets) {
  const Tensor& z = t.val(logits);
  long N = z.rows(), V = z.cols();
  require(static_cast<long>(targets.size()) == N, "ce_mean: target count != rows");
  require(N > 0, "ce_mean: empty");
  for (long y : targets) require(y >= 0 && y < V, "ce_mean: target id out of vocab");
  double loss = 0.0;
  for (long r = 0; r < N; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (long c = 0; c < V; ++c) mx = std::max(mx, z.at(r, c));
    double lse = 0.0;
    for (long c = 0; c < V; ++c) lse += std::exp(z.at(r, c) - mx);
    lse = mx + std::log(lse);
    loss += lse - z.at(r, targets[static_cast<std::size_t>(r)]);
  }
  loss /= static_cast<double>(N);
  return make_node(t, Tensor::scalar(loss), {logits},
                   [logits, targets = std::move(targets)](Tape& tp, NodeId self) {
                     double g = tp.grad(self)[0];
                     const Tensor& z = tp.val(logits);
                     long N = z.rows(), V = z.cols();
                     Tensor gz = Tensor::zeros(z.shape);
                     double invN = 1.0 / static_cast<double>(N);
                     for (long r = 0; r < N; ++r) {
                       double mx = -std::numeric_limits<double>::infinity();
                       for (long c = 0; c < V; ++c) mx = std::max(mx, z.at(r, c));
                       double denom = 0.0;
                       for (long c = 0; c < V; ++c) denom += std::exp(z.at(r, c) - mx);
                       for (long c = 0; c < V; ++c)
                         gz.at(r, c) = g * invN * std::exp(z.at(r, c) - mx) / denom;
                       gz.at(r, targets[static_cast<std::size_t>(r)]) -= g * invN;
                     }
                     OpAccess::accumulate(tp, logits, gz);
                   });
}

NodeId mean_of(Tape& t, const std::vector<NodeId>& scalars) {
  require(!scalars.empty(), "mean_of: empty");
  NodeId acc = scalars[0];
  for (std::size_t i = 1; i < scalars.size(); ++i) acc = add(t, acc, scalars[i]);
  return scale(t, acc, 1.0 / static_cast<double>(scalars.size()));
}

}  // namespace umami::ag
