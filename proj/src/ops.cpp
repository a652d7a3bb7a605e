#include "misder/ops.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <vector>

namespace misder::ops {
namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                std::to_string(b.cols()) + ")");
  }
}

template <typename Expr>
void accumulate(Graph& g, Var in, const Expr& expr) {
  if (g.requires_grad(in.id)) g.grad(in.id) += expr;
}

Graph& graph_of(Var a) {
  if (a.graph == nullptr) throw Error("op on a detached Var");
  return *a.graph;
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a);
  if (a.cols() != b.rows()) {
    throw Error("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                std::to_string(b.rows()) + ")");
  }
  const Var in[] = {a, b};
  return g.push(a.value() * b.value(), in, [a, b](Graph& g, int self) {
    const Matrix& d = g.grad(self);
    if (g.requires_grad(a.id)) g.grad(a.id).noalias() += d * g.value(b.id).transpose();
    if (g.requires_grad(b.id)) g.grad(b.id).noalias() += g.value(a.id).transpose() * d;
  });
}

Var add(Var a, Var b) {
  Graph& g = graph_of(a);
  require_same_shape(a.value(), b.value(), "add");
  const Var in[] = {a, b};
  return g.push(a.value() + b.value(), in, [a, b](Graph& g, int self) {
    accumulate(g, a, g.grad(self));
    accumulate(g, b, g.grad(self));
  });
}

Var sub(Var a, Var b) {
  Graph& g = graph_of(a);
  require_same_shape(a.value(), b.value(), "sub");
  const Var in[] = {a, b};
  return g.push(a.value() - b.value(), in, [a, b](Graph& g, int self) {
    accumulate(g, a, g.grad(self));
    if (g.requires_grad(b.id)) g.grad(b.id) -= g.grad(self);
  });
}

Var mul(Var a, Var b) {
  Graph& g = graph_of(a);
  require_same_shape(a.value(), b.value(), "mul");
  const Var in[] = {a, b};
  return g.push(a.value().cwiseProduct(b.value()), in, [a, b](Graph& g, int self) {
    const Matrix& d = g.grad(self);
    accumulate(g, a, d.cwiseProduct(g.value(b.id)));
    accumulate(g, b, d.cwiseProduct(g.value(a.id)));
  });
}

Var scale(Var a, double s) {
  Graph& g = graph_of(a);
  const Var in[] = {a};
  return g.push(a.value() * s, in, [a, s](Graph& g, int self) { accumulate(g, a, g.grad(self) * s); });
}

Var lincomb(std::span<const Var> terms, std::span<const double> coeffs) {
  if (terms.empty() || terms.size() != coeffs.size()) throw Error("lincomb: need one coefficient per term");
  Graph& g = graph_of(terms[0]);
  Matrix out = terms[0].value() * coeffs[0];
  for (std::size_t i = 1; i < terms.size(); ++i) {
    require_same_shape(out, terms[i].value(), "lincomb");
    if (coeffs[i] != 0.0) out.noalias() += terms[i].value() * coeffs[i];
  }
  std::vector<Var> ts(terms.begin(), terms.end());
  std::vector<double> cs(coeffs.begin(), coeffs.end());
  return g.push(std::move(out), terms, [ts = std::move(ts), cs = std::move(cs)](Graph& g, int self) {
    for (std::size_t i = 0; i < ts.size(); ++i) {
      if (cs[i] != 0.0) accumulate(g, ts[i], g.grad(self) * cs[i]);
    }
  });
}

Var add_row(Var a, Var row) {
  Graph& g = graph_of(a);
  if (row.rows() != 1 || row.cols() != a.cols()) throw Error("add_row: bias must be 1 x cols");
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  const Var in[] = {a, row};
  return g.push(std::move(out), in, [a, row](Graph& g, int self) {
    const Matrix& d = g.grad(self);
    accumulate(g, a, d);
    accumulate(g, row, d.colwise().sum());
  });
}

Var tanh(Var a) {
  Graph& g = graph_of(a);
  Matrix out = a.value().array().tanh().matrix();
  const Var in[] = {a};
  return g.push(std::move(out), in, [a](Graph& g, int self) {
    const Matrix& y = g.value(self);
    accumulate(g, a, (g.grad(self).array() * (1.0 - y.array().square())).matrix());
  });
}

Var relu(Var a) {
  Graph& g = graph_of(a);
  Matrix out = a.value().cwiseMax(0.0);
  const Var in[] = {a};
  return g.push(std::move(out), in, [a](Graph& g, int self) {
    const Matrix& x = g.value(a.id);
    accumulate(g, a, (g.grad(self).array() * (x.array() > 0.0).cast<double>()).matrix());
  });
}

Var sigmoid(Var a) {
  Graph& g = graph_of(a);
  Matrix out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  const Var in[] = {a};
  return g.push(std::move(out), in, [a](Graph& g, int self) {
    const Matrix& y = g.value(self);
    accumulate(g, a, (g.grad(self).array() * y.array() * (1.0 - y.array())).matrix());
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error("concat_cols: no inputs");
  Graph& g = graph_of(parts[0]);
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw Error("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return g.push(std::move(out), parts, [saved](Graph& g, int self) {
    Eigen::Index at = 0;
    for (const Var& p : saved) {
      const Eigen::Index c = g.value(p.id).cols();
      accumulate(g, p, g.grad(self).middleCols(at, c));
      at += c;
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw Error("concat_rows: no inputs");
  Graph& g = graph_of(parts[0]);
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw Error("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return g.push(std::move(out), parts, [saved](Graph& g, int self) {
    Eigen::Index at = 0;
    for (const Var& p : saved) {
      const Eigen::Index r = g.value(p.id).rows();
      accumulate(g, p, g.grad(self).middleRows(at, r));
      at += r;
    }
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  Graph& g = graph_of(a);
  if (start < 0 || count < 0 || start + count > a.rows()) throw Error("slice_rows: out of range");
  const Var in[] = {a};
  return g.push(a.value().middleRows(start, count), in, [a, start, count](Graph& g, int self) {
    if (g.requires_grad(a.id)) g.grad(a.id).middleRows(start, count) += g.grad(self);
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  Graph& g = graph_of(a);
  if (start < 0 || count < 0 || start + count > a.cols()) throw Error("slice_cols: out of range");
  const Var in[] = {a};
  return g.push(a.value().middleCols(start, count), in, [a, start, count](Graph& g, int self) {
    if (g.requires_grad(a.id)) g.grad(a.id).middleCols(start, count) += g.grad(self);
  });
}

Var reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
  Graph& g = graph_of(a);
  if (rows * cols != a.value().size()) throw Error("reshape: element count differs");
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  const Var in[] = {a};
  return g.push(std::move(out), in, [a](Graph& g, int self) {
    if (!g.requires_grad(a.id)) return;
    const Matrix& d = g.grad(self);
    Matrix& ga = g.grad(a.id);
    ga += Eigen::Map<const Matrix>(d.data(), ga.rows(), ga.cols());
  });
}

Var shift_rows(Var a, Eigen::Index offset) {
  Graph& g = graph_of(a);
  const Eigen::Index n = a.rows();
  Matrix out = Matrix::Zero(n, a.cols());
  for (Eigen::Index r = 0; r < n; ++r) {
    const Eigen::Index src = r + offset;
    if (src >= 0 && src < n) out.row(r) = a.value().row(src);
  }
  const Var in[] = {a};
  return g.push(std::move(out), in, [a, offset](Graph& g, int self) {
    if (!g.requires_grad(a.id)) return;
    const Matrix& d = g.grad(self);
    Matrix& ga = g.grad(a.id);
    for (Eigen::Index r = 0; r < d.rows(); ++r) {
      const Eigen::Index src = r + offset;
      if (src >= 0 && src < ga.rows()) ga.row(src) += d.row(r);
    }
  });
}

Var sum(Var a) {
  Graph& g = graph_of(a);
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const Var in[] = {a};
  return g.push(std::move(out), in, [a](Graph& g, int self) {
    if (g.requires_grad(a.id)) g.grad(a.id).array() += g.grad(self)(0, 0);
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw Error("mean of empty matrix");
  return scale(sum(a), 1.0 / n);
}

Var l1_loss(Var a, Var b) {
  Graph& g = graph_of(a);
  require_same_shape(a.value(), b.value(), "l1_loss");
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw Error("l1_loss of empty matrix");
  Matrix out(1, 1);
  out(0, 0) = (a.value() - b.value()).cwiseAbs().sum() / n;
  const Var in[] = {a, b};
  return g.push(std::move(out), in, [a, b, n](Graph& g, int self) {
    const double d = g.grad(self)(0, 0) / n;
    const Matrix sign = (g.value(a.id) - g.value(b.id)).array().sign().matrix();
    accumulate(g, a, sign * d);
    if (g.requires_grad(b.id)) g.grad(b.id) -= sign * d;
  });
}

Var bce_loss(Var p, std::span<const int> labels) {
  Graph& g = graph_of(p);
  if (p.cols() != 1 || p.rows() != static_cast<Eigen::Index>(labels.size())) {
    throw Error("bce_loss: expected n x 1 probabilities matching the label count");
  }
  if (labels.empty()) throw Error("bce_loss: empty batch");
  const Matrix& pv = p.value();
  const double n = static_cast<double>(labels.size());
  double total = 0.0;
  for (Eigen::Index i = 0; i < pv.rows(); ++i) {
    const double raw = pv(i, 0);
    if (!std::isfinite(raw)) throw Error("invalid probability");
    const double q = std::clamp(raw, kProbClamp, 1.0 - kProbClamp);
    const int y = labels[static_cast<std::size_t>(i)];
    total += y == 1 ? -std::log(q) : -std::log(1.0 - q);
  }
  Matrix out(1, 1);
  out(0, 0) = total / n;
  std::vector<int> ys(labels.begin(), labels.end());
  const Var in[] = {p};
  return g.push(std::move(out), in, [p, ys = std::move(ys), n](Graph& g, int self) {
    if (!g.requires_grad(p.id)) return;
    const double d = g.grad(self)(0, 0) / n;
    const Matrix& pv = g.value(p.id);
    Matrix& gp = g.grad(p.id);
    for (Eigen::Index i = 0; i < pv.rows(); ++i) {
      const double raw = pv(i, 0);
      if (raw < kProbClamp || raw > 1.0 - kProbClamp) continue;
      const int y = ys[static_cast<std::size_t>(i)];
      gp(i, 0) += d * (y == 1 ? -1.0 / raw : 1.0 / (1.0 - raw));
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Graph& g = graph_of(x);
  const Eigen::Index cols = x.cols();
  if (gain.rows() != 1 || gain.cols() != cols || bias.rows() != 1 || bias.cols() != cols) {
    throw Error("layer_norm: gain and bias must be 1 x cols");
  }
  const Matrix& xv = x.value();
  auto xhat = std::make_shared<Matrix>(xv.rows(), cols);
  auto inv_std = std::make_shared<Eigen::VectorXd>(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    (*inv_std)(r) = 1.0 / std::sqrt(var + eps);
    xhat->row(r) = (xv.row(r).array() - mu) * (*inv_std)(r);
  }
  Matrix out = xhat->array().rowwise() * gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  const Var in[] = {x, gain, bias};
  return g.push(std::move(out), in, [x, gain, bias, xhat, inv_std](Graph& g, int self) {
    const Matrix& d = g.grad(self);
    accumulate(g, gain, d.cwiseProduct(*xhat).colwise().sum());
    accumulate(g, bias, d.colwise().sum());
    if (!g.requires_grad(x.id)) return;
    const Matrix dxhat = d.array().rowwise() * g.value(gain.id).row(0).array();
    Matrix& gx = g.grad(x.id);
    for (Eigen::Index r = 0; r < d.rows(); ++r) {
      const double m1 = dxhat.row(r).mean();
      const double m2 = dxhat.row(r).cwiseProduct(xhat->row(r)).mean();
      gx.row(r).array() += (*inv_std)(r) * (dxhat.row(r).array() - m1 - xhat->row(r).array() * m2);
    }
  });
}

Var embedding(Var table, std::span<const std::int32_t> ids) {
  Graph& g = graph_of(table);
  const Matrix& t = table.value();
  Matrix out(static_cast<Eigen::Index>(ids.size()), t.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= t.rows()) {
      throw Error("embedding: token id " + std::to_string(ids[i]) + " out of range [0, " +
                  std::to_string(t.rows()) + ")");
    }
    out.row(static_cast<Eigen::Index>(i)) = t.row(ids[i]);
  }
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  const Var in[] = {table};
  return g.push(std::move(out), in, [table, saved = std::move(saved)](Graph& g, int self) {
    if (!g.requires_grad(table.id)) return;
    const Matrix& d = g.grad(self);
    Matrix& gt = g.grad(table.id);
    for (std::size_t i = 0; i < saved.size(); ++i) gt.row(saved[i]) += d.row(static_cast<Eigen::Index>(i));
  });
}

Var attention(Var q, Var k, Var v, int batch, int heads, std::span<const std::uint8_t> key_mask) {
  Graph& g = graph_of(q);
  const Eigen::Index width = q.cols();
  if (batch <= 0 || heads <= 0 || width % heads != 0) throw Error("attention: bad batch/head layout");
  if (k.cols() != width || v.cols() != width || k.rows() != v.rows()) throw Error("attention: q/k/v widths differ");
  if (q.rows() % batch != 0 || k.rows() % batch != 0) throw Error("attention: rows not divisible by batch");
  const Eigen::Index q_len = q.rows() / batch;
  const Eigen::Index k_len = k.rows() / batch;
  const Eigen::Index dh = width / heads;
  if (!key_mask.empty() && static_cast<Eigen::Index>(key_mask.size()) != k.rows()) {
    throw Error("attention: key mask length differs from key rows");
  }
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));
  auto probs = std::make_shared<std::vector<Matrix>>(static_cast<std::size_t>(batch * heads));
  Matrix out(q.rows(), width);
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      Matrix s = qv.block(b * q_len, h * dh, q_len, dh) * kv.block(b * k_len, h * dh, k_len, dh).transpose();
      s *= scale_factor;
      if (!key_mask.empty()) {
        for (Eigen::Index j = 0; j < k_len; ++j) {
          if (key_mask[static_cast<std::size_t>(b * k_len + j)] == 0) s.col(j).setConstant(kNegInf);
        }
      }
      for (Eigen::Index i = 0; i < q_len; ++i) {
        const double mx = s.row(i).maxCoeff();
        if (!std::isfinite(mx)) throw Error("attention: query with no visible keys");
        // Weights below e^-600 are zeroed: they cannot affect a sum of
        // doubles, and their subnormal products stall the FPU.
        s.row(i) = (s.row(i).array() - mx).unaryExpr([](double x) { return x < -600.0 ? 0.0 : std::exp(x); });
        s.row(i) /= s.row(i).sum();
      }
      out.block(b * q_len, h * dh, q_len, dh).noalias() = s * vv.block(b * k_len, h * dh, k_len, dh);
      (*probs)[static_cast<std::size_t>(b * heads + h)] = std::move(s);
    }
  }
  const Var in[] = {q, k, v};
  return g.push(std::move(out), in,
                [q, k, v, batch, heads, q_len, k_len, dh, scale_factor, probs](Graph& g, int self) {
                  const Matrix& d = g.grad(self);
                  const Matrix& qv = g.value(q.id);
                  const Matrix& kv = g.value(k.id);
                  const Matrix& vv = g.value(v.id);
                  const bool gq = g.requires_grad(q.id);
                  const bool gk = g.requires_grad(k.id);
                  const bool gv = g.requires_grad(v.id);
                  for (int b = 0; b < batch; ++b) {
                    for (int h = 0; h < heads; ++h) {
                      const Matrix& p = (*probs)[static_cast<std::size_t>(b * heads + h)];
                      const Matrix dout = d.block(b * q_len, h * dh, q_len, dh);
                      if (gv) g.grad(v.id).block(b * k_len, h * dh, k_len, dh).noalias() += p.transpose() * dout;
                      if (!gq && !gk) continue;
                      const Matrix dp = dout * vv.block(b * k_len, h * dh, k_len, dh).transpose();
                      Matrix ds = p.cwiseProduct(dp);
                      const Eigen::VectorXd row_dot = ds.rowwise().sum();
                      ds -= p.cwiseProduct(row_dot * Eigen::RowVectorXd::Ones(k_len));
                      ds *= scale_factor;
                      if (gq) {
                        g.grad(q.id).block(b * q_len, h * dh, q_len, dh).noalias() +=
                            ds * kv.block(b * k_len, h * dh, k_len, dh);
                      }
                      if (gk) {
                        g.grad(k.id).block(b * k_len, h * dh, k_len, dh).noalias() +=
                            ds.transpose() * qv.block(b * q_len, h * dh, q_len, dh);
                      }
                    }
                  }
                });
}

Var masked_mean_rows(Var x, int batch, std::span<const double> weights) {
  Graph& g = graph_of(x);
  if (batch <= 0 || x.rows() % batch != 0) throw Error("masked_mean_rows: rows not divisible by batch");
  if (static_cast<Eigen::Index>(weights.size()) != x.rows()) throw Error("masked_mean_rows: weight count differs");
  const Eigen::Index seq = x.rows() / batch;
  auto norm = std::make_shared<std::vector<double>>(weights.begin(), weights.end());
  Matrix out = Matrix::Zero(batch, x.cols());
  for (int b = 0; b < batch; ++b) {
    double total = 0.0;
    for (Eigen::Index s = 0; s < seq; ++s) total += (*norm)[static_cast<std::size_t>(b * seq + s)];
    if (total <= 0.0) throw Error("masked_mean_rows: block with zero total weight");
    for (Eigen::Index s = 0; s < seq; ++s) {
      double& w = (*norm)[static_cast<std::size_t>(b * seq + s)];
      w /= total;
      if (w != 0.0) out.row(b) += w * x.value().row(b * seq + s);
    }
  }
  const Var in[] = {x};
  return g.push(std::move(out), in, [x, seq, norm](Graph& g, int self) {
    if (!g.requires_grad(x.id)) return;
    const Matrix& d = g.grad(self);
    Matrix& gx = g.grad(x.id);
    for (Eigen::Index r = 0; r < gx.rows(); ++r) {
      const double w = (*norm)[static_cast<std::size_t>(r)];
      if (w != 0.0) gx.row(r) += w * d.row(r / seq);
    }
  });
}

Var prefix_rows(Var prefix, Var text, int batch) {
  Graph& g = graph_of(prefix);
  if (prefix.cols() != text.cols()) throw Error("prefix_rows: widths differ");
  if (batch <= 0 || text.rows() % batch != 0) throw Error("prefix_rows: text rows not divisible by batch");
  const Eigen::Index k = prefix.rows();
  const Eigen::Index l = text.rows() / batch;
  Matrix out(batch * (k + l), prefix.cols());
  for (int b = 0; b < batch; ++b) {
    out.middleRows(b * (k + l), k) = prefix.value();
    out.middleRows(b * (k + l) + k, l) = text.value().middleRows(b * l, l);
  }
  const Var in[] = {prefix, text};
  return g.push(std::move(out), in, [prefix, text, batch, k, l](Graph& g, int self) {
    const Matrix& d = g.grad(self);
    for (int b = 0; b < batch; ++b) {
      if (g.requires_grad(prefix.id)) g.grad(prefix.id) += d.middleRows(b * (k + l), k);
      if (g.requires_grad(text.id)) g.grad(text.id).middleRows(b * l, l) += d.middleRows(b * (k + l) + k, l);
    }
  });
}

}  // namespace misder::ops
