#include "mhr/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace mhr::ad {

namespace {

long next_id() {
  static long counter = 0;  // graph building is single-threaded by contract
  return ++counter;
}

Var make_node(MatX value, std::vector<std::shared_ptr<Node>> parents,
              std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->id = next_id();
  for (const auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  n->parents = std::move(parents);
  if (n->requires_grad) n->backprop = std::move(backprop);
  return Var(std::move(n));
}

void accumulate(const std::shared_ptr<Node>& p, const MatX& g) {
  if (p->requires_grad) p->grad += g;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InputError(std::string(op) + ": shape mismatch");
}

}  // namespace

Var constant(MatX v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->id = next_id();
  return Var(std::move(n));
}

Var param(MatX v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->id = next_id();
  n->requires_grad = true;
  return Var(std::move(n));
}

void backward(const Var& loss) {
  if (loss.rows() != 1 || loss.cols() != 1)
    throw InputError("backward: loss must be a 1x1 node");

  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<Node*> seen;
  std::vector<std::shared_ptr<Node>> stack{loss.node()};
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    if (!seen.insert(n.get()).second) continue;
    n->grad = MatX::Zero(n->value.rows(), n->value.cols());
    order.push_back(n);
    for (const auto& p : n->parents) stack.push_back(p);
  }
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a->id > b->id; });

  loss.node()->grad(0, 0) = 1.0;
  for (const auto& n : order)
    if (n->backprop) n->backprop(*n);
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return make_node(a.value() + b.value(), {a.node(), b.node()}, [](Node& self) {
    accumulate(self.parents[0], self.grad);
    accumulate(self.parents[1], self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return make_node(a.value() - b.value(), {a.node(), b.node()}, [](Node& self) {
    accumulate(self.parents[0], self.grad);
    accumulate(self.parents[1], -self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  return make_node(a.value().cwiseProduct(b.value()), {a.node(), b.node()}, [](Node& self) {
    accumulate(self.parents[0], self.grad.cwiseProduct(self.parents[1]->value));
    accumulate(self.parents[1], self.grad.cwiseProduct(self.parents[0]->value));
  });
}

Var scale(const Var& a, double k) {
  return make_node(k * a.value(), {a.node()},
                   [k](Node& self) { accumulate(self.parents[0], k * self.grad); });
}

Var add_scalar(const Var& a, double k) {
  return make_node(a.value().array() + k, {a.node()},
                   [](Node& self) { accumulate(self.parents[0], self.grad); });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw InputError("matmul: inner dimensions differ");
  return make_node(a.value() * b.value(), {a.node(), b.node()}, [](Node& self) {
    accumulate(self.parents[0], self.grad * self.parents[1]->value.transpose());
    accumulate(self.parents[1], self.parents[0]->value.transpose() * self.grad);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) throw InputError("matmul_nt: inner dimensions differ");
  return make_node(a.value() * b.value().transpose(), {a.node(), b.node()}, [](Node& self) {
    accumulate(self.parents[0], self.grad * self.parents[1]->value);
    accumulate(self.parents[1], self.grad.transpose() * self.parents[0]->value);
  });
}

Var add_rowvec(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw InputError("add_rowvec: bad row shape");
  return make_node(a.value().rowwise() + row.value().row(0), {a.node(), row.node()},
                   [](Node& self) {
                     accumulate(self.parents[0], self.grad);
                     accumulate(self.parents[1], self.grad.colwise().sum());
                   });
}

Var mul_rowvec(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw InputError("mul_rowvec: bad row shape");
  MatX v = a.value().array().rowwise() * row.value().row(0).array();
  return make_node(std::move(v), {a.node(), row.node()}, [](Node& self) {
    const MatX& av = self.parents[0]->value;
    const MatX& rv = self.parents[1]->value;
    accumulate(self.parents[0], self.grad.array().rowwise() * rv.row(0).array());
    accumulate(self.parents[1], self.grad.cwiseProduct(av).colwise().sum());
  });
}

Var slice_rows(const Var& a, long r0, long n) {
  if (r0 < 0 || n < 0 || r0 + n > a.rows()) throw InputError("slice_rows: out of range");
  return make_node(a.value().middleRows(r0, n), {a.node()}, [r0, n](Node& self) {
    if (self.parents[0]->requires_grad)
      self.parents[0]->grad.middleRows(r0, n) += self.grad;
  });
}

Var slice_cols(const Var& a, long c0, long n) {
  if (c0 < 0 || n < 0 || c0 + n > a.cols()) throw InputError("slice_cols: out of range");
  return make_node(a.value().middleCols(c0, n), {a.node()}, [c0, n](Node& self) {
    if (self.parents[0]->requires_grad)
      self.parents[0]->grad.middleCols(c0, n) += self.grad;
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw InputError("concat_cols: no parts");
  long rows = parts[0].rows();
  long cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw InputError("concat_cols: row counts differ");
    cols += p.cols();
  }
  MatX v(rows, cols);
  std::vector<std::shared_ptr<Node>> parents;
  long c = 0;
  for (const Var& p : parts) {
    v.middleCols(c, p.cols()) = p.value();
    c += p.cols();
    parents.push_back(p.node());
  }
  return make_node(std::move(v), std::move(parents), [](Node& self) {
    long c = 0;
    for (auto& p : self.parents) {
      long w = p->value.cols();
      if (p->requires_grad) p->grad += self.grad.middleCols(c, w);
      c += w;
    }
  });
}

Var softmax_rows(const Var& a) {
  MatX y(a.rows(), a.cols());
  for (long r = 0; r < a.rows(); ++r) {
    VecX row = a.value().row(r).transpose();
    double m = row.maxCoeff();
    VecX e = (row.array() - m).exp();
    y.row(r) = (e / e.sum()).transpose();
  }
  return make_node(std::move(y), {a.node()}, [](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    const MatX& y = self.value;
    MatX dx(y.rows(), y.cols());
    for (long r = 0; r < y.rows(); ++r) {
      double dot = self.grad.row(r).dot(y.row(r));
      dx.row(r) = (y.row(r).array() * (self.grad.row(r).array() - dot)).matrix();
    }
    self.parents[0]->grad += dx;
  });
}

Var layernorm_rows(const Var& a, double eps) {
  const long c = a.cols();
  MatX y(a.rows(), c);
  VecX invstd(a.rows());
  for (long r = 0; r < a.rows(); ++r) {
    double mean = a.value().row(r).mean();
    double var = (a.value().row(r).array() - mean).square().sum() / double(c);
    invstd[r] = 1.0 / std::sqrt(var + eps);
    y.row(r) = (a.value().row(r).array() - mean) * invstd[r];
  }
  return make_node(std::move(y), {a.node()}, [invstd](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    const MatX& y = self.value;
    const long c = y.cols();
    MatX dx(y.rows(), c);
    for (long r = 0; r < y.rows(); ++r) {
      double gmean = self.grad.row(r).mean();
      double gymean = self.grad.row(r).cwiseProduct(y.row(r)).mean();
      dx.row(r) =
          (invstd[r] * (self.grad.row(r).array() - gmean - y.row(r).array() * gymean))
              .matrix();
    }
    self.parents[0]->grad += dx;
  });
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Var gelu(const Var& a) {
  MatX y = a.value().unaryExpr(
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); });
  return make_node(std::move(y), {a.node()}, [](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    const MatX& x = self.parents[0]->value;
    MatX d = x.unaryExpr([](double v) {
      return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
    });
    self.parents[0]->grad += self.grad.cwiseProduct(d);
  });
}

Var sigmoid(const Var& a) {
  MatX y = a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  return make_node(std::move(y), {a.node()}, [](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    MatX d = self.value.cwiseProduct(MatX::Ones(self.value.rows(), self.value.cols()) -
                                     self.value);
    self.parents[0]->grad += self.grad.cwiseProduct(d);
  });
}

Var abs(const Var& a) {
  return make_node(a.value().cwiseAbs(), {a.node()}, [](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    // Sign subgradient, 0 at exactly 0.
    MatX s = self.parents[0]->value.unaryExpr(
        [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
    self.parents[0]->grad += self.grad.cwiseProduct(s);
  });
}

Var sum(const Var& a) {
  MatX v(1, 1);
  v(0, 0) = a.value().sum();
  return make_node(std::move(v), {a.node()}, [](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    self.parents[0]->grad.array() += self.grad(0, 0);
  });
}

Var row_sums(const Var& a) {
  return make_node(a.value().rowwise().sum(), {a.node()}, [](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    self.parents[0]->grad +=
        self.grad * MatX::Ones(1, self.parents[0]->value.cols());
  });
}

Var row_norms(const Var& a) {
  return make_node(a.value().rowwise().norm(), {a.node()}, [](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    const MatX& x = self.parents[0]->value;
    MatX dx(x.rows(), x.cols());
    for (long r = 0; r < x.rows(); ++r) {
      double n = self.value(r, 0);
      if (n > 0.0)
        dx.row(r) = (self.grad(r, 0) / n) * x.row(r);
      else
        dx.row(r).setZero();
    }
    self.parents[0]->grad += dx;
  });
}

Var normalize_rows(const Var& a) {
  MatX y(a.rows(), a.cols());
  VecX inv_norm(a.rows());
  for (long r = 0; r < a.rows(); ++r) {
    double n = a.value().row(r).norm();
    if (!(n > 0.0) || !std::isfinite(n))
      throw NumericError("normalize_rows: zero or non-finite row norm");
    inv_norm[r] = 1.0 / n;
    y.row(r) = a.value().row(r) * inv_norm[r];
  }
  return make_node(std::move(y), {a.node()}, [inv_norm](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    const MatX& y = self.value;
    MatX dx(y.rows(), y.cols());
    for (long r = 0; r < y.rows(); ++r) {
      double dot = self.grad.row(r).dot(y.row(r));
      dx.row(r) = inv_norm[r] * (self.grad.row(r) - dot * y.row(r));
    }
    self.parents[0]->grad += dx;
  });
}

Var quat_mul_rows(const Var& a, const Var& b) {
  check_same_shape(a, b, "quat_mul_rows");
  if (a.cols() != 4) throw InputError("quat_mul_rows: rows must be quaternions");
  const MatX& av = a.value();
  const MatX& bv = b.value();
  MatX c(a.rows(), 4);
  for (long r = 0; r < a.rows(); ++r) {
    double aw = av(r, 0), ax = av(r, 1), ay = av(r, 2), az = av(r, 3);
    double bw = bv(r, 0), bx = bv(r, 1), by = bv(r, 2), bz = bv(r, 3);
    c(r, 0) = aw * bw - ax * bx - ay * by - az * bz;
    c(r, 1) = aw * bx + ax * bw + ay * bz - az * by;
    c(r, 2) = aw * by - ax * bz + ay * bw + az * bx;
    c(r, 3) = aw * bz + ax * by - ay * bx + az * bw;
  }
  return make_node(std::move(c), {a.node(), b.node()}, [](Node& self) {
    const MatX& av = self.parents[0]->value;
    const MatX& bv = self.parents[1]->value;
    const MatX& g = self.grad;
    MatX ga = MatX::Zero(av.rows(), 4), gb = MatX::Zero(av.rows(), 4);
    for (long r = 0; r < av.rows(); ++r) {
      double aw = av(r, 0), ax = av(r, 1), ay = av(r, 2), az = av(r, 3);
      double bw = bv(r, 0), bx = bv(r, 1), by = bv(r, 2), bz = bv(r, 3);
      double g0 = g(r, 0), g1 = g(r, 1), g2 = g(r, 2), g3 = g(r, 3);
      ga(r, 0) = g0 * bw + g1 * bx + g2 * by + g3 * bz;
      ga(r, 1) = -g0 * bx + g1 * bw + g2 * -bz + g3 * by;
      ga(r, 2) = -g0 * by + g1 * bz + g2 * bw + g3 * -bx;
      ga(r, 3) = -g0 * bz + g1 * -by + g2 * bx + g3 * bw;
      gb(r, 0) = g0 * aw + g1 * ax + g2 * ay + g3 * az;
      gb(r, 1) = -g0 * ax + g1 * aw + g2 * az + g3 * -ay;
      gb(r, 2) = -g0 * ay + g1 * -az + g2 * aw + g3 * ax;
      gb(r, 3) = -g0 * az + g1 * ay + g2 * -ax + g3 * aw;
    }
    accumulate(self.parents[0], ga);
    accumulate(self.parents[1], gb);
  });
}

Var quat_conj_rows(const Var& a) {
  if (a.cols() != 4) throw InputError("quat_conj_rows: rows must be quaternions");
  MatX flip(1, 4);
  flip << 1, -1, -1, -1;
  return mul_rowvec(a, constant(flip));
}

Var quat_rotate_rows(const Var& q, const Var& v) {
  if (q.cols() != 4 || v.cols() != 3 || q.rows() != v.rows())
    throw InputError("quat_rotate_rows: expected T x 4 quaternions and T x 3 vectors");
  Var v4 = concat_cols({constant(MatX::Zero(v.rows(), 1)), v});
  Var out4 = quat_mul_rows(quat_mul_rows(q, v4), quat_conj_rows(q));
  return slice_cols(out4, 1, 3);
}

Var group_maxpool(const Var& a, const std::vector<int>& group, int k) {
  if (long(group.size()) != a.rows()) throw InputError("group_maxpool: assignment size mismatch");
  for (int g : group)
    if (g < 0 || g >= k) throw InputError("group_maxpool: group id out of range");
  const long cols = a.cols();
  MatX v = MatX::Zero(k, cols);
  // argmax row per (group, column); -1 marks an empty group.
  std::vector<long> arg(std::size_t(k) * std::size_t(cols), -1);
  for (long r = 0; r < a.rows(); ++r) {
    int g = group[std::size_t(r)];
    for (long c = 0; c < cols; ++c) {
      long& slot = arg[std::size_t(g) * std::size_t(cols) + std::size_t(c)];
      double x = a.value()(r, c);
      if (slot < 0 || x > v(g, c)) {
        slot = r;
        v(g, c) = x;
      }
    }
  }
  return make_node(std::move(v), {a.node()}, [arg, k, cols](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    for (int g = 0; g < k; ++g) {
      for (long c = 0; c < cols; ++c) {
        long r = arg[std::size_t(g) * std::size_t(cols) + std::size_t(c)];
        if (r >= 0) self.parents[0]->grad(r, c) += self.grad(g, c);
      }
    }
  });
}

}  // namespace mhr::ad
