#include "hgrec/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "hgrec/error.hpp"

namespace hgrec::ad {

const Matrix& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), nullptr, {}, nullptr, false, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant_view(const Matrix& value) {
  nodes_.push_back(Node{{}, &value, {}, nullptr, false, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(const Matrix& value, Matrix* grad_sink) {
  if (grad_sink != nullptr && !grad_sink->same_shape(value)) {
    throw ShapeError("gradient sink " + shape_string(*grad_sink) + " for parameter " +
                     shape_string(value));
  }
  nodes_.push_back(Node{{}, &value, {}, grad_sink, false, grad_sink != nullptr, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, bool requires_grad, Backward backward) {
  Node node{std::move(value), nullptr, {}, nullptr, false, requires_grad, {}};
  if (requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Matrix& Tape::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.external != nullptr ? *n.external : n.value;
}

Matrix& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad_sink != nullptr) {
    n.grad_ready = true;
    return *n.grad_sink;
  }
  if (!n.grad_ready) {
    const Matrix& v = value(id);
    n.grad = Matrix(v.rows(), v.cols());
    n.grad_ready = true;
  }
  return n.grad;
}

bool Tape::has_grad(std::size_t id) const { return nodes_[id].grad_ready; }

void Tape::backward(Var root, double seed) {
  if (root.tape() != this) throw InvalidArgument("backward root belongs to another tape");
  if (!requires_grad(root.id())) return;
  Matrix& g = grad(root.id());
  for (double& v : g.values()) v += seed;
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.backward && n.grad_ready) n.backward(*this, id);
  }
}

namespace {

Tape& same_tape(Var a, Var b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw InvalidArgument("operands recorded on different tapes");
  }
  return *a.tape();
}

template <class F, class D>
Var unary_elementwise(Var a, F forward, D derivative_from_output) {
  Tape& t = *a.tape();
  Matrix out = a.value();
  for (double& v : out.values()) v = forward(v);
  const std::size_t in = a.id();
  return t.record(std::move(out), a.requires_grad(), [in, derivative_from_output](Tape& tp, std::size_t self) {
    const Matrix& y = tp.value(self);
    const Matrix& g = tp.grad(self);
    const Matrix& x = tp.value(in);
    Matrix& gi = tp.grad(in);
    for (std::size_t i = 0; i < g.size(); ++i) {
      gi.values()[i] += g.values()[i] * derivative_from_output(x.values()[i], y.values()[i]);
    }
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(hgrec::matmul(a.value(), b.value()), a.requires_grad() || b.requires_grad(),
                  [ia, ib](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.grad(self);
                    if (tp.requires_grad(ia)) tp.grad(ia) += hgrec::matmul_nt(g, tp.value(ib));
                    if (tp.requires_grad(ib)) tp.grad(ib) += hgrec::matmul_tn(tp.value(ia), g);
                  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(hgrec::matmul_nt(a.value(), b.value()), a.requires_grad() || b.requires_grad(),
                  [ia, ib](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.grad(self);
                    if (tp.requires_grad(ia)) tp.grad(ia) += hgrec::matmul(g, tp.value(ib));
                    if (tp.requires_grad(ib)) tp.grad(ib) += hgrec::matmul_tn(g, tp.value(ia));
                  });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(a.value() + b.value(), a.requires_grad() || b.requires_grad(),
                  [ia, ib](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.grad(self);
                    if (tp.requires_grad(ia)) tp.grad(ia) += g;
                    if (tp.requires_grad(ib)) tp.grad(ib) += g;
                  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(a.value() - b.value(), a.requires_grad() || b.requires_grad(),
                  [ia, ib](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.grad(self);
                    if (tp.requires_grad(ia)) tp.grad(ia) += g;
                    if (tp.requires_grad(ib)) tp.grad(ib) -= g;
                  });
}

Var add_row(Var a, Var row) {
  Tape& t = same_tape(a, row);
  const Matrix& x = a.value();
  const Matrix& r = row.value();
  if (r.rows() != 1 || r.cols() != x.cols()) {
    throw ShapeError("add_row: " + shape_string(x) + " + " + shape_string(r));
  }
  Matrix out = x;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += r(0, j);
  }
  const std::size_t ia = a.id(), ir = row.id();
  return t.record(std::move(out), a.requires_grad() || row.requires_grad(),
                  [ia, ir](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.grad(self);
                    if (tp.requires_grad(ia)) tp.grad(ia) += g;
                    if (tp.requires_grad(ir)) {
                      Matrix& gr = tp.grad(ir);
                      for (std::size_t i = 0; i < g.rows(); ++i)
                        for (std::size_t j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j);
                    }
                  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape();
  const std::size_t ia = a.id();
  return t.record(a.value() * s, a.requires_grad(), [ia, s](Tape& tp, std::size_t self) {
    tp.grad(ia) += tp.grad(self) * s;
  });
}

namespace {
thread_local KinkProbe* active_probe = nullptr;
}

KinkProbe::KinkProbe() : previous_(active_probe) { active_probe = this; }
KinkProbe::~KinkProbe() { active_probe = previous_; }

void KinkProbe::record(const Matrix& input) {
  if (active_probe == nullptr) return;
  for (double v : input.values()) active_probe->signs_.push_back(v > 0.0);
}

Var relu(Var a) {
  KinkProbe::record(a.value());
  return unary_elementwise(
      a, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var a) {
  return unary_elementwise(
      a, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary_elementwise(
      a,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var softmax_rows(Var a) {
  Tape& t = *a.tape();
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double total = 0.0;
    for (double& v : r) {
      v = std::exp(v - mx);
      total += v;
    }
    for (double& v : r) v /= total;
  }
  const std::size_t ia = a.id();
  return t.record(std::move(out), a.requires_grad(), [ia](Tape& tp, std::size_t self) {
    const Matrix& y = tp.value(self);
    const Matrix& g = tp.grad(self);
    Matrix& gi = tp.grad(ia);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) gi(i, j) += y(i, j) * (g(i, j) - dot);
    }
  });
}

Var layer_norm_rows(Var x, Var gain, Var bias, double epsilon) {
  Tape& t = same_tape(x, gain);
  same_tape(x, bias);
  const Matrix& in = x.value();
  const Matrix& gm = gain.value();
  const Matrix& bm = bias.value();
  const std::size_t c = in.cols();
  if (gm.rows() != 1 || gm.cols() != c || !gm.same_shape(bm)) {
    throw ShapeError("layer_norm: input " + shape_string(in) + ", gain " + shape_string(gm) +
                     ", bias " + shape_string(bm));
  }
  Matrix normed(in.rows(), c);
  Matrix inv_std(in.rows(), 1);
  Matrix out(in.rows(), c);
  for (std::size_t i = 0; i < in.rows(); ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += in(i, j);
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (in(i, j) - mean) * (in(i, j) - mean);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + epsilon);
    inv_std(i, 0) = inv;
    for (std::size_t j = 0; j < c; ++j) {
      normed(i, j) = (in(i, j) - mean) * inv;
      out(i, j) = normed(i, j) * gm(0, j) + bm(0, j);
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  const bool needs = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
  return t.record(std::move(out), needs,
                  [ix, ig, ib, normed = std::move(normed), inv_std = std::move(inv_std)](
                      Tape& tp, std::size_t self) {
                    const Matrix& g = tp.grad(self);
                    const Matrix& gm = tp.value(ig);
                    const std::size_t rows = g.rows(), cols = g.cols();
                    if (tp.requires_grad(ig)) {
                      Matrix& gg = tp.grad(ig);
                      for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t j = 0; j < cols; ++j) gg(0, j) += g(i, j) * normed(i, j);
                    }
                    if (tp.requires_grad(ib)) {
                      Matrix& gb = tp.grad(ib);
                      for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t j = 0; j < cols; ++j) gb(0, j) += g(i, j);
                    }
                    if (tp.requires_grad(ix)) {
                      Matrix& gx = tp.grad(ix);
                      const double n = static_cast<double>(cols);
                      for (std::size_t i = 0; i < rows; ++i) {
                        double mean_d = 0.0, mean_dn = 0.0;
                        for (std::size_t j = 0; j < cols; ++j) {
                          const double d = g(i, j) * gm(0, j);
                          mean_d += d;
                          mean_dn += d * normed(i, j);
                        }
                        mean_d /= n;
                        mean_dn /= n;
                        for (std::size_t j = 0; j < cols; ++j) {
                          const double d = g(i, j) * gm(0, j);
                          gx(i, j) += inv_std(i, 0) * (d - mean_d - normed(i, j) * mean_dn);
                        }
                      }
                    }
                  });
}

Var mean_rows(Var a) {
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  if (x.rows() == 0) throw ShapeError("mean_rows of an empty matrix");
  Matrix out(1, x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(0, j) += x(i, j);
  const double inv = 1.0 / static_cast<double>(x.rows());
  out *= inv;
  const std::size_t ia = a.id();
  return t.record(std::move(out), a.requires_grad(), [ia, inv](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    Matrix& gi = tp.grad(ia);
    for (std::size_t i = 0; i < gi.rows(); ++i)
      for (std::size_t j = 0; j < gi.cols(); ++j) gi(i, j) += g(0, j) * inv;
  });
}

Var sum(Var a) {
  Tape& t = *a.tape();
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  const std::size_t ia = a.id();
  return t.record(Matrix(1, 1, total), a.requires_grad(), [ia](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)(0, 0);
    for (double& v : tp.grad(ia).values()) v += g;
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  Tape& t = *parts.front().tape();
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  bool needs = false;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw InvalidArgument("operands recorded on different tapes");
    if (p.cols() != cols) {
      throw ShapeError("concat_rows: width " + std::to_string(p.cols()) + " vs " +
                       std::to_string(cols));
    }
    rows += p.rows();
    needs = needs || p.requires_grad();
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> ids;
  std::size_t at = 0;
  for (const Var& p : parts) {
    const Matrix& v = p.value();
    std::copy(v.values().begin(), v.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(at * cols));
    at += v.rows();
    ids.push_back(p.id());
  }
  return t.record(std::move(out), needs, [ids = std::move(ids)](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    std::size_t at = 0;
    for (std::size_t id : ids) {
      const std::size_t r = tp.value(id).rows();
      if (tp.requires_grad(id)) {
        Matrix& gi = tp.grad(id);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) gi(i, j) += g(at + i, j);
      }
      at += r;
    }
  });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  Matrix out(rows.size(), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " of " + shape_string(x));
    }
    std::copy(x.row(rows[i]).begin(), x.row(rows[i]).end(), out.row(i).begin());
  }
  const std::size_t ia = a.id();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return t.record(std::move(out), a.requires_grad(), [ia, idx = std::move(idx)](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    Matrix& gi = tp.grad(ia);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto dst = gi.row(idx[i]);
      auto src = g.row(i);
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    }
  });
}

Var stop_gradient(Var a) { return a.tape()->constant(a.value()); }

}  // namespace hgrec::ad
