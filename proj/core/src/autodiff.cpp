#include "dualroute/autodiff.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>
#include <utility>

#include "dualroute/common.hpp"

namespace dualroute {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

std::atomic<std::uint64_t>& Tape::clamp_events() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

Tape::NodeId Tape::leaf(const Mat* external, bool requires_grad) {
  Node n;
  n.vptr = external;
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

Tape::NodeId Tape::constant(Mat value) {
  return push(std::move(value), false, {});
}

Tape::NodeId Tape::push(Mat value, bool requires_grad,
                        std::function<void(Tape&, Node&)> back) {
  Node n;
  n.value = std::move(value);
  n.vptr = nullptr;
  n.requires_grad = requires_grad;
  if (requires_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

const Mat& Tape::grad(NodeId id) {
  Node& n = node(id);
  if (!n.grad_live) {
    const Mat& v = val(id);
    n.grad = Mat::Zero(v.rows(), v.cols());
    n.grad_live = true;
  }
  return n.grad;
}

Mat& Tape::grad_buffer(NodeId id) {
  Node& n = node(id);
  if (!n.grad_live) {
    const Mat& v = val(id);
    n.grad = Mat::Zero(v.rows(), v.cols());
    n.grad_live = true;
  }
  return n.grad;
}

void Tape::backward(NodeId scalar) {
  const Mat& v = val(scalar);
  if (v.rows() != 1 || v.cols() != 1) {
    throw NumericError("backward() requires a 1x1 scalar node");
  }
  grad_buffer(scalar).setConstant(1.0);
  for (NodeId id = scalar; id >= 0; --id) {
    Node& n = node(id);
    if (n.grad_live && n.requires_grad && n.back) n.back(*this, n);
  }
}

// --- binary/linear ops -------------------------------------------------------

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
  Mat v = val(a) * val(b);
  const bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(v), rg, [a, b](Tape& t, Node& self) {
    if (t.requires_grad(a)) t.grad_buffer(a).noalias() += self.grad * t.val(b).transpose();
    if (t.requires_grad(b)) t.grad_buffer(b).noalias() += t.val(a).transpose() * self.grad;
  });
}

Tape::NodeId Tape::matmul_nt(NodeId a, NodeId b) {
  Mat v = val(a) * val(b).transpose();
  const bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(v), rg, [a, b](Tape& t, Node& self) {
    if (t.requires_grad(a)) t.grad_buffer(a).noalias() += self.grad * t.val(b);
    if (t.requires_grad(b)) t.grad_buffer(b).noalias() += self.grad.transpose() * t.val(a);
  });
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  Mat v = val(a) + val(b);
  const bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(v), rg, [a, b](Tape& t, Node& self) {
    if (t.requires_grad(a)) t.grad_buffer(a) += self.grad;
    if (t.requires_grad(b)) t.grad_buffer(b) += self.grad;
  });
}

Tape::NodeId Tape::sub(NodeId a, NodeId b) {
  Mat v = val(a) - val(b);
  const bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(v), rg, [a, b](Tape& t, Node& self) {
    if (t.requires_grad(a)) t.grad_buffer(a) += self.grad;
    if (t.requires_grad(b)) t.grad_buffer(b) -= self.grad;
  });
}

Tape::NodeId Tape::add_rowvec(NodeId a, NodeId row) {
  const Mat& r = val(row);
  Mat v = val(a).rowwise() + r.row(0);
  const bool rg = requires_grad(a) || requires_grad(row);
  return push(std::move(v), rg, [a, row](Tape& t, Node& self) {
    if (t.requires_grad(a)) t.grad_buffer(a) += self.grad;
    if (t.requires_grad(row)) t.grad_buffer(row).row(0) += self.grad.colwise().sum();
  });
}

Tape::NodeId Tape::scale(NodeId a, double s) {
  Mat v = val(a) * s;
  return push(std::move(v), requires_grad(a), [a, s](Tape& t, Node& self) {
    if (t.requires_grad(a)) t.grad_buffer(a) += self.grad * s;
  });
}

Tape::NodeId Tape::hadamard(NodeId a, NodeId b) {
  Mat v = val(a).cwiseProduct(val(b));
  const bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(v), rg, [a, b](Tape& t, Node& self) {
    if (t.requires_grad(a)) t.grad_buffer(a) += self.grad.cwiseProduct(t.val(b));
    if (t.requires_grad(b)) t.grad_buffer(b) += self.grad.cwiseProduct(t.val(a));
  });
}

Tape::NodeId Tape::mul_const(NodeId a, Mat mask) {
  Mat v = val(a).cwiseProduct(mask);
  return push(std::move(v), requires_grad(a),
              [a, m = std::move(mask)](Tape& t, Node& self) {
                if (t.requires_grad(a)) t.grad_buffer(a) += self.grad.cwiseProduct(m);
              });
}

Tape::NodeId Tape::add_const(NodeId a, Mat c) {
  Mat v = val(a) + c;
  return push(std::move(v), requires_grad(a), [a](Tape& t, Node& self) {
    if (t.requires_grad(a)) t.grad_buffer(a) += self.grad;
  });
}

// --- shape ops ---------------------------------------------------------------

Tape::NodeId Tape::gather_rows(NodeId a, std::vector<int> rows) {
  const Mat& src = val(a);
  Mat v = Mat::Zero(static_cast<int>(rows.size()), src.cols());
  for (int i = 0; i < static_cast<int>(rows.size()); ++i) {
    if (rows[static_cast<std::size_t>(i)] >= 0) {
      v.row(i) = src.row(rows[static_cast<std::size_t>(i)]);
    }
  }
  return push(std::move(v), requires_grad(a),
              [a, r = std::move(rows)](Tape& t, Node& self) {
                if (!t.requires_grad(a)) return;
                Mat& g = t.grad_buffer(a);
                for (int i = 0; i < static_cast<int>(r.size()); ++i) {
                  if (r[static_cast<std::size_t>(i)] >= 0) {
                    g.row(r[static_cast<std::size_t>(i)]) += self.grad.row(i);
                  }
                }
              });
}

Tape::NodeId Tape::slice_rows(NodeId a, int row0, int n) {
  Mat v = val(a).middleRows(row0, n);
  return push(std::move(v), requires_grad(a), [a, row0, n](Tape& t, Node& self) {
    if (t.requires_grad(a)) t.grad_buffer(a).middleRows(row0, n) += self.grad;
  });
}

Tape::NodeId Tape::slice_cols(NodeId a, int col0, int n) {
  Mat v = val(a).middleCols(col0, n);
  return push(std::move(v), requires_grad(a), [a, col0, n](Tape& t, Node& self) {
    if (t.requires_grad(a)) t.grad_buffer(a).middleCols(col0, n) += self.grad;
  });
}

Tape::NodeId Tape::vstack(const std::vector<NodeId>& parts) {
  if (parts.empty()) throw NumericError("vstack of zero parts");
  int rows = 0;
  const int cols = static_cast<int>(val(parts[0]).cols());
  bool rg = false;
  for (NodeId p : parts) {
    rows += static_cast<int>(val(p).rows());
    rg = rg || requires_grad(p);
  }
  Mat v(rows, cols);
  int r = 0;
  for (NodeId p : parts) {
    const Mat& pv = val(p);
    v.middleRows(r, static_cast<int>(pv.rows())) = pv;
    r += static_cast<int>(pv.rows());
  }
  return push(std::move(v), rg, [ps = parts](Tape& t, Node& self) {
    int r0 = 0;
    for (NodeId p : ps) {
      const int n = static_cast<int>(t.val(p).rows());
      if (t.requires_grad(p)) t.grad_buffer(p) += self.grad.middleRows(r0, n);
      r0 += n;
    }
  });
}

Tape::NodeId Tape::hstack(const std::vector<NodeId>& parts) {
  if (parts.empty()) throw NumericError("hstack of zero parts");
  int cols = 0;
  const int rows = static_cast<int>(val(parts[0]).rows());
  bool rg = false;
  for (NodeId p : parts) {
    cols += static_cast<int>(val(p).cols());
    rg = rg || requires_grad(p);
  }
  Mat v(rows, cols);
  int c = 0;
  for (NodeId p : parts) {
    const Mat& pv = val(p);
    v.middleCols(c, static_cast<int>(pv.cols())) = pv;
    c += static_cast<int>(pv.cols());
  }
  return push(std::move(v), rg, [ps = parts](Tape& t, Node& self) {
    int c0 = 0;
    for (NodeId p : ps) {
      const int n = static_cast<int>(t.val(p).cols());
      if (t.requires_grad(p)) t.grad_buffer(p) += self.grad.middleCols(c0, n);
      c0 += n;
    }
  });
}

// --- nonlinearities ------------------------------------------------------------

Tape::NodeId Tape::layer_norm(NodeId a, NodeId gamma, NodeId beta, double eps) {
  const Mat& x = val(a);
  const int n = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());
  Mat xhat(n, d);
  Eigen::VectorXd inv_std(n);
  for (int i = 0; i < n; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().sum() / d;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    xhat.row(i) = (x.row(i).array() - mu) * is;
  }
  Mat v = (xhat.array().rowwise() * val(gamma).row(0).array()).rowwise() +
          val(beta).row(0).array();
  const bool rg = requires_grad(a) || requires_grad(gamma) || requires_grad(beta);
  return push(std::move(v), rg,
              [a, gamma, beta, xh = std::move(xhat), is = std::move(inv_std)](
                  Tape& t, Node& self) {
                const Mat& g = self.grad;
                if (t.requires_grad(beta)) {
                  t.grad_buffer(beta).row(0) += g.colwise().sum();
                }
                if (t.requires_grad(gamma)) {
                  t.grad_buffer(gamma).row(0) += g.cwiseProduct(xh).colwise().sum();
                }
                if (t.requires_grad(a)) {
                  const auto gamma_row = t.val(gamma).row(0).array();
                  Mat& ga = t.grad_buffer(a);
                  const int rows = static_cast<int>(g.rows());
                  const int d2 = static_cast<int>(g.cols());
                  for (int i = 0; i < rows; ++i) {
                    const auto dxhat = g.row(i).array() * gamma_row;
                    const double m1 = dxhat.mean();
                    const double m2 = (dxhat * xh.row(i).array()).mean();
                    ga.row(i).array() +=
                        is[i] * (dxhat - m1 - xh.row(i).array() * m2);
                    (void)d2;
                  }
                }
              });
}

Tape::NodeId Tape::gelu(NodeId a) {
  Mat v = val(a).unaryExpr(
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); });
  return push(std::move(v), requires_grad(a), [a](Tape& t, Node& self) {
    if (!t.requires_grad(a)) return;
    const Mat d = t.val(a).unaryExpr([](double x) {
      return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) +
             x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
    });
    t.grad_buffer(a).array() += self.grad.array() * d.array();
  });
}

Tape::NodeId Tape::relu(NodeId a) {
  Mat v = val(a).cwiseMax(0.0);
  return push(std::move(v), requires_grad(a), [a](Tape& t, Node& self) {
    if (!t.requires_grad(a)) return;
    t.grad_buffer(a).array() +=
        self.grad.array() * (t.val(a).array() > 0.0).cast<double>();
  });
}

Tape::NodeId Tape::sigmoid(NodeId a) {
  Mat v = (1.0 / (1.0 + (-val(a).array()).exp()));
  return push(std::move(v), requires_grad(a), [a](Tape& t, Node& self) {
    if (!t.requires_grad(a)) return;
    const Mat& y = self.vptr != nullptr ? *self.vptr : self.value;
    t.grad_buffer(a).array() += self.grad.array() * y.array() * (1.0 - y.array());
  });
}

Tape::NodeId Tape::log(NodeId a) {
  Mat v = val(a).array().log();
  return push(std::move(v), requires_grad(a), [a](Tape& t, Node& self) {
    if (!t.requires_grad(a)) return;
    t.grad_buffer(a).array() += self.grad.array() / t.val(a).array();
  });
}

Tape::NodeId Tape::one_minus(NodeId a) {
  Mat v = 1.0 - val(a).array();
  return push(std::move(v), requires_grad(a), [a](Tape& t, Node& self) {
    if (t.requires_grad(a)) t.grad_buffer(a) -= self.grad;
  });
}

Tape::NodeId Tape::clamp(NodeId a, double lo, double hi) {
  const Mat& x = val(a);
  const std::uint64_t clamped =
      static_cast<std::uint64_t>((x.array() < lo || x.array() > hi).count());
  if (clamped > 0) clamp_events().fetch_add(clamped, std::memory_order_relaxed);
  Mat v = x.cwiseMax(lo).cwiseMin(hi);
  return push(std::move(v), requires_grad(a), [a, lo, hi](Tape& t, Node& self) {
    if (!t.requires_grad(a)) return;
    const auto x = t.val(a).array();
    t.grad_buffer(a).array() +=
        self.grad.array() * (x >= lo && x <= hi).cast<double>();
  });
}

Tape::NodeId Tape::softmax_rows(NodeId a, Mat additive_mask) {
  const Mat& x = val(a);
  Mat v(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    const auto row = x.row(i).array() + additive_mask.row(i).array();
    const double mx = row.maxCoeff();
    const auto e = (row - mx).exp();
    v.row(i) = e / e.sum();
  }
  return push(std::move(v), requires_grad(a), [a](Tape& t, Node& self) {
    if (!t.requires_grad(a)) return;
    const Mat& y = self.vptr ? *self.vptr : self.value;
    Mat& ga = t.grad_buffer(a);
    for (int i = 0; i < y.rows(); ++i) {
      const double dot = self.grad.row(i).cwiseProduct(y.row(i)).sum();
      ga.row(i).array() += y.row(i).array() * (self.grad.row(i).array() - dot);
    }
  });
}

// --- reductions ---------------------------------------------------------------

Tape::NodeId Tape::sum_weighted(NodeId a, Mat weights) {
  Mat v(1, 1);
  v(0, 0) = val(a).cwiseProduct(weights).sum();
  return push(std::move(v), requires_grad(a),
              [a, w = std::move(weights)](Tape& t, Node& self) {
                if (t.requires_grad(a)) t.grad_buffer(a) += self.grad(0, 0) * w;
              });
}

Tape::NodeId Tape::sum_all(NodeId a) {
  Mat v(1, 1);
  v(0, 0) = val(a).sum();
  return push(std::move(v), requires_grad(a), [a](Tape& t, Node& self) {
    if (t.requires_grad(a)) {
      t.grad_buffer(a).array() += self.grad(0, 0);
    }
  });
}

}  // namespace dualroute
