#include "piars/tape.hpp"

#include <cmath>

#include "piars/kernels.hpp"

namespace piars::grad {

Tape::Id Tape::push(Tensor val, std::function<void()> back) {
  nodes_.push_back(Node{std::move(val), Tensor{}, std::move(back), false});
  return static_cast<Id>(nodes_.size()) - 1;
}

Tape::Id Tape::leaf(Tensor t) { return push(std::move(t)); }

Tape::Id Tape::matmul(Id a, Id b) {
  Tensor out;
  kernels::matmul(val(a), val(b), out);
  Id y = push(std::move(out));
  nodes_[y].back = [this, a, b, y] {
    const Tensor &av = val(a), &bv = val(b), &gy = g(y);
    Tensor& ga = g(a);
    Tensor& gb = g(b);
    const int m = av.shape[0], k = av.shape[1], n = bv.shape[1];
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        const double gv = gy.at(i, j);
        if (gv == 0.0) continue;
        for (int p = 0; p < k; ++p) {
          ga.at(i, p) += gv * bv.at(p, j);
          gb.at(p, j) += av.at(i, p) * gv;
        }
      }
  };
  return y;
}

Tape::Id Tape::matmul_nt(Id a, Id b) {
  Tensor out;
  kernels::matmul_nt(val(a), val(b), out);
  Id y = push(std::move(out));
  nodes_[y].back = [this, a, b, y] {
    const Tensor &av = val(a), &bv = val(b), &gy = g(y);
    Tensor& ga = g(a);
    Tensor& gb = g(b);
    const int m = av.shape[0], k = av.shape[1], n = bv.shape[0];
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        const double gv = gy.at(i, j);
        if (gv == 0.0) continue;
        for (int p = 0; p < k; ++p) {
          ga.at(i, p) += gv * bv.at(j, p);
          gb.at(j, p) += gv * av.at(i, p);
        }
      }
  };
  return y;
}

Tape::Id Tape::conv2d(Id img, Id ker, Id bias) {
  Tensor out;
  kernels::conv2d(val(img), val(ker), val(bias), out);
  Id y = push(std::move(out));
  nodes_[y].back = [this, img, ker, bias, y] {
    kernels::conv2d_backward(val(img), val(ker), g(y), g(img), g(ker), g(bias));
  };
  return y;
}

Tape::Id Tape::relu(Id x) {
  Tensor out = val(x);
  for (double& e : out.v) e = e > 0.0 ? e : 0.0;
  Id y = push(std::move(out));
  nodes_[y].back = [this, x, y] {
    const Tensor& xv = val(x);
    const Tensor& gy = g(y);
    Tensor& gx = g(x);
    for (std::size_t i = 0; i < xv.numel(); ++i)
      if (xv.v[i] > 0.0) gx.v[i] += gy.v[i];
  };
  return y;
}

Tape::Id Tape::tanh(Id x) {
  Tensor out = val(x);
  for (double& e : out.v) e = std::tanh(e);
  Id y = push(std::move(out));
  nodes_[y].back = [this, x, y] {
    const Tensor& yv = val(y);
    const Tensor& gy = g(y);
    Tensor& gx = g(x);
    for (std::size_t i = 0; i < yv.numel(); ++i) gx.v[i] += (1.0 - yv.v[i] * yv.v[i]) * gy.v[i];
  };
  return y;
}

Tape::Id Tape::l2_normalize(Id x) {
  const Tensor& xv = val(x);
  require(xv.rank() == 1, "l2_normalize: expects a vector");
  Tensor out(xv.shape);
  const bool clamped = kernels::l2_normalize(xv.v.data(), static_cast<int>(xv.numel()), out.v.data());
  Id y = push(std::move(out));
  nodes_[y].flag = clamped;
  if (!clamped) {
    nodes_[y].back = [this, x, y] {
      const Tensor& xv2 = val(x);
      const Tensor& yv = val(y);
      const Tensor& gy = g(y);
      Tensor& gx = g(x);
      double norm = 0.0;
      for (double e : xv2.v) norm += e * e;
      norm = std::sqrt(norm);
      double dotv = 0.0;
      for (std::size_t i = 0; i < yv.numel(); ++i) dotv += gy.v[i] * yv.v[i];
      for (std::size_t i = 0; i < yv.numel(); ++i)
        gx.v[i] += (gy.v[i] - yv.v[i] * dotv) / norm;
    };
  }
  // clamp path: output is a constant, gradient stops
  return y;
}

Tape::Id Tape::logsumexp(Id x) {
  const Tensor& xv = val(x);
  require(xv.rank() == 1 && xv.numel() >= 1, "logsumexp: expects a nonempty vector");
  Id y = push(Tensor::scalar(kernels::logsumexp(xv.v.data(), static_cast<int>(xv.numel()))));
  nodes_[y].back = [this, x, y] {
    const Tensor& xv2 = val(x);
    const double lse = val(y).v[0];
    const double gy = g(y).v[0];
    Tensor& gx = g(x);
    for (std::size_t i = 0; i < xv2.numel(); ++i) gx.v[i] += gy * std::exp(xv2.v[i] - lse);
  };
  return y;
}

Tape::Id Tape::logsumexp_rows(Id x) {
  const Tensor& xv = val(x);
  require(xv.rank() == 2, "logsumexp_rows: expects a matrix");
  const int m = xv.shape[0], n = xv.shape[1];
  Tensor out({m});
  for (int i = 0; i < m; ++i) out.at(i) = kernels::logsumexp(&xv.v[static_cast<std::size_t>(i) * n], n);
  Id y = push(std::move(out));
  nodes_[y].back = [this, x, y, m, n] {
    const Tensor& xv2 = val(x);
    const Tensor& yv = val(y);
    const Tensor& gy = g(y);
    Tensor& gx = g(x);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        gx.at(i, j) += gy.at(i) * std::exp(xv2.at(i, j) - yv.at(i));
  };
  return y;
}

Tape::Id Tape::add(Id a, Id b) {
  require(val(a).same_shape(val(b)), "add: shape mismatch");
  Tensor out = val(a);
  for (std::size_t i = 0; i < out.numel(); ++i) out.v[i] += val(b).v[i];
  Id y = push(std::move(out));
  nodes_[y].back = [this, a, b, y] {
    const Tensor& gy = g(y);
    for (std::size_t i = 0; i < gy.numel(); ++i) {
      g(a).v[i] += gy.v[i];
      g(b).v[i] += gy.v[i];
    }
  };
  return y;
}

Tape::Id Tape::sub(Id a, Id b) {
  require(val(a).same_shape(val(b)), "sub: shape mismatch");
  Tensor out = val(a);
  for (std::size_t i = 0; i < out.numel(); ++i) out.v[i] -= val(b).v[i];
  Id y = push(std::move(out));
  nodes_[y].back = [this, a, b, y] {
    const Tensor& gy = g(y);
    for (std::size_t i = 0; i < gy.numel(); ++i) {
      g(a).v[i] += gy.v[i];
      g(b).v[i] -= gy.v[i];
    }
  };
  return y;
}

Tape::Id Tape::mul(Id a, Id b) {
  require(val(a).same_shape(val(b)), "mul: shape mismatch");
  Tensor out = val(a);
  for (std::size_t i = 0; i < out.numel(); ++i) out.v[i] *= val(b).v[i];
  Id y = push(std::move(out));
  nodes_[y].back = [this, a, b, y] {
    const Tensor& gy = g(y);
    for (std::size_t i = 0; i < gy.numel(); ++i) {
      g(a).v[i] += gy.v[i] * val(b).v[i];
      g(b).v[i] += gy.v[i] * val(a).v[i];
    }
  };
  return y;
}

Tape::Id Tape::scale(Id x, double c) {
  Tensor out = val(x);
  for (double& e : out.v) e *= c;
  Id y = push(std::move(out));
  nodes_[y].back = [this, x, y, c] {
    const Tensor& gy = g(y);
    for (std::size_t i = 0; i < gy.numel(); ++i) g(x).v[i] += c * gy.v[i];
  };
  return y;
}

Tape::Id Tape::add_const(Id x, double c) {
  Tensor out = val(x);
  for (double& e : out.v) e += c;
  Id y = push(std::move(out));
  nodes_[y].back = [this, x, y] {
    const Tensor& gy = g(y);
    for (std::size_t i = 0; i < gy.numel(); ++i) g(x).v[i] += gy.v[i];
  };
  return y;
}

Tape::Id Tape::affine(Id w, Id b, Id x) {
  const Tensor& wv = val(w);
  const Tensor& xv = val(x);
  require(wv.rank() == 2 && xv.rank() == 1, "affine: expects W matrix and x vector");
  require(wv.shape[1] == xv.shape[0], "affine: W columns " + shape_str(wv.shape) +
                                          " do not match x " + shape_str(xv.shape));
  Tensor out({wv.shape[0]});
  kernels::affine(wv, val(b), xv.v.data(), out.v.data());
  Id y = push(std::move(out));
  nodes_[y].back = [this, w, b, x, y] {
    const Tensor& wv2 = val(w);
    const Tensor& xv2 = val(x);
    const Tensor& gy = g(y);
    Tensor& gw = g(w);
    Tensor& gb = g(b);
    Tensor& gx = g(x);
    const int out_n = wv2.shape[0], in_n = wv2.shape[1];
    for (int i = 0; i < out_n; ++i) {
      const double gv = gy.at(i);
      gb.at(i) += gv;
      if (gv == 0.0) continue;
      for (int j = 0; j < in_n; ++j) {
        gw.at(i, j) += gv * xv2.at(j);
        gx.at(j) += wv2.at(i, j) * gv;
      }
    }
  };
  return y;
}

Tape::Id Tape::concat(const std::vector<Id>& parts) {
  require(!parts.empty(), "concat: empty part list");
  int n = 0;
  for (Id p : parts) {
    require(val(p).rank() == 1, "concat: parts must be vectors");
    n += val(p).shape[0];
  }
  Tensor out({n});
  int off = 0;
  for (Id p : parts) {
    const Tensor& pv = val(p);
    std::copy(pv.v.begin(), pv.v.end(), out.v.begin() + off);
    off += pv.shape[0];
  }
  Id y = push(std::move(out));
  nodes_[y].back = [this, parts, y] {
    const Tensor& gy = g(y);
    int o = 0;
    for (Id p : parts) {
      Tensor& gp = g(p);
      for (std::size_t i = 0; i < gp.numel(); ++i) gp.v[i] += gy.v[o + i];
      o += static_cast<int>(gp.numel());
    }
  };
  return y;
}

Tape::Id Tape::stack_rows(const std::vector<Id>& rows) {
  require(!rows.empty(), "stack_rows: empty row list");
  const int d = val(rows[0]).shape[0];
  const int m = static_cast<int>(rows.size());
  Tensor out({m, d});
  for (int i = 0; i < m; ++i) {
    const Tensor& rv = val(rows[i]);
    require(rv.rank() == 1 && rv.shape[0] == d, "stack_rows: inconsistent row widths");
    std::copy(rv.v.begin(), rv.v.end(), out.v.begin() + static_cast<std::size_t>(i) * d);
  }
  Id y = push(std::move(out));
  nodes_[y].back = [this, rows, y, d] {
    const Tensor& gy = g(y);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      Tensor& gr = g(rows[i]);
      for (int j = 0; j < d; ++j) gr.at(static_cast<int>(j)) += gy.v[i * d + j];
    }
  };
  return y;
}

Tape::Id Tape::diag(Id m) {
  const Tensor& mv = val(m);
  require(mv.rank() == 2 && mv.shape[0] == mv.shape[1], "diag: expects a square matrix");
  const int n = mv.shape[0];
  Tensor out({n});
  for (int i = 0; i < n; ++i) out.at(i) = mv.at(i, i);
  Id y = push(std::move(out));
  nodes_[y].back = [this, m, y, n] {
    const Tensor& gy = g(y);
    for (int i = 0; i < n; ++i) g(m).at(i, i) += gy.at(i);
  };
  return y;
}

Tape::Id Tape::sum(Id x) {
  double acc = 0.0;
  for (double e : val(x).v) acc += e;
  Id y = push(Tensor::scalar(acc));
  nodes_[y].back = [this, x, y] {
    const double gv = g(y).v[0];
    for (double& e : g(x).v) e += gv;
  };
  return y;
}

Tape::Id Tape::mean(Id x) {
  const double n = static_cast<double>(val(x).numel());
  double acc = 0.0;
  for (double e : val(x).v) acc += e;
  Id y = push(Tensor::scalar(acc / n));
  nodes_[y].back = [this, x, y, n] {
    const double gv = g(y).v[0] / n;
    for (double& e : g(x).v) e += gv;
  };
  return y;
}

Tape::Id Tape::square(Id x) {
  Tensor out = val(x);
  for (double& e : out.v) e *= e;
  Id y = push(std::move(out));
  nodes_[y].back = [this, x, y] {
    const Tensor& gy = g(y);
    for (std::size_t i = 0; i < gy.numel(); ++i) g(x).v[i] += 2.0 * val(x).v[i] * gy.v[i];
  };
  return y;
}

Tape::Id Tape::dot(Id a, Id b) {
  require(val(a).same_shape(val(b)), "dot: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < val(a).numel(); ++i) acc += val(a).v[i] * val(b).v[i];
  Id y = push(Tensor::scalar(acc));
  nodes_[y].back = [this, a, b, y] {
    const double gv = g(y).v[0];
    for (std::size_t i = 0; i < val(a).numel(); ++i) {
      g(a).v[i] += gv * val(b).v[i];
      g(b).v[i] += gv * val(a).v[i];
    }
  };
  return y;
}

Tape::Id Tape::reshape(Id x, std::vector<int> shape) {
  require(Tensor::numel_of(shape) == val(x).numel(), "reshape: element count mismatch");
  Tensor out(shape, val(x).v);
  Id y = push(std::move(out));
  nodes_[y].back = [this, x, y] {
    const Tensor& gy = g(y);
    for (std::size_t i = 0; i < gy.numel(); ++i) g(x).v[i] += gy.v[i];
  };
  return y;
}

Tape::Id Tape::stopgrad(Id x) {
  return push(val(x));  // no backward: identity forward, zero backward
}

void Tape::backward(Id loss) {
  require(loss >= 0 && loss < size(), "backward: loss id out of range");
  require(val(loss).is_scalar(), "backward: loss must be a scalar node");
  for (auto& n : nodes_) {
    n.grd = Tensor(n.val.shape);  // zeros
  }
  nodes_[loss].grd.v[0] = 1.0;
  for (Id i = loss; i >= 0; --i) {
    if (nodes_[i].back) nodes_[i].back();
  }
}

}  // namespace piars::grad
