#include "dialcal/autograd.hpp"

#include <limits>
#include <memory>

namespace dialcal {

const Mat& Var::value() const { return graph->value(*this); }

Var Graph::constant(Mat value) {
  Node n;
  n.own = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::parameter(const std::string& name, const Mat& storage) {
  if (auto it = params_.find(name); it != params_.end()) return Var{this, it->second};
  Node n;
  n.ref = &storage;
  n.needs_grad = record_;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  params_.emplace(name, id);
  return Var{this, id};
}

Var Graph::push(Mat value, std::vector<int> inputs, BackwardFn backward) {
  Node n;
  n.own = std::move(value);
  if (record_) {
    for (int in : inputs) n.needs_grad = n.needs_grad || nodes_[static_cast<std::size_t>(in)].needs_grad;
    if (n.needs_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Mat& Graph::grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.has_grad) {
    const Mat& v = n.value();
    n.grad = Mat::Zero(v.rows(), v.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Graph::backward(Var output, const Mat& seed) {
  if (!record_) throw Error("backward() on a graph built without recording");
  const Mat& out = node_value(output.id);
  if (seed.rows() != out.rows() || seed.cols() != out.cols()) throw Error("backward seed shape mismatch");
  grad(output.id) += seed;
  for (int id = output.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.has_grad && n.backward) n.backward(*this, id);
  }
}

std::map<std::string, Mat> Graph::parameter_gradients() const {
  std::map<std::string, Mat> out;
  for (const auto& [name, id] : params_) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    out.emplace(name, n.has_grad ? n.grad : Mat::Zero(n.value().rows(), n.value().cols()));
  }
  return out;
}

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw Error(std::string("shape mismatch in ") + what);
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = *a.graph;
  require(a.cols() == b.rows(), "matmul");
  const int ia = a.id, ib = b.id;
  return g.push(a.value() * b.value(), {ia, ib}, [ia, ib](Graph& g, int self) {
    const Mat& d = g.grad(self);
    if (g.needs_grad(ia)) g.grad(ia).noalias() += d * g.node_value(ib).transpose();
    if (g.needs_grad(ib)) g.grad(ib).noalias() += g.node_value(ia).transpose() * d;
  });
}

Var add(Var a, Var b) {
  Graph& g = *a.graph;
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add");
  const int ia = a.id, ib = b.id;
  return g.push(a.value() + b.value(), {ia, ib}, [ia, ib](Graph& g, int self) {
    const Mat& d = g.grad(self);
    if (g.needs_grad(ia)) g.grad(ia) += d;
    if (g.needs_grad(ib)) g.grad(ib) += d;
  });
}

Var add_row(Var x, Var bias) {
  Graph& g = *x.graph;
  require(bias.rows() == 1 && bias.cols() == x.cols(), "add_row");
  const int ix = x.id, ib = bias.id;
  Mat out = x.value();
  out.rowwise() += bias.value().row(0);
  return g.push(std::move(out), {ix, ib}, [ix, ib](Graph& g, int self) {
    const Mat& d = g.grad(self);
    if (g.needs_grad(ix)) g.grad(ix) += d;
    if (g.needs_grad(ib)) g.grad(ib) += d.colwise().sum();
  });
}

Var add_constant(Var x, const Mat& c) {
  Graph& g = *x.graph;
  require(c.rows() == x.rows() && c.cols() == x.cols(), "add_constant");
  const int ix = x.id;
  return g.push(x.value() + c, {ix}, [ix](Graph& g, int self) {
    if (g.needs_grad(ix)) g.grad(ix) += g.grad(self);
  });
}

Var scale(Var x, double s) {
  Graph& g = *x.graph;
  const int ix = x.id;
  return g.push(x.value() * s, {ix}, [ix, s](Graph& g, int self) {
    if (g.needs_grad(ix)) g.grad(ix) += g.grad(self) * s;
  });
}

Var relu(Var x) {
  Graph& g = *x.graph;
  const int ix = x.id;
  return g.push(x.value().cwiseMax(0.0), {ix}, [ix](Graph& g, int self) {
    if (!g.needs_grad(ix)) return;
    const Mat& in = g.node_value(ix);
    g.grad(ix) += (in.array() > 0.0).select(g.grad(self), 0.0);
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Graph& g = *x.graph;
  require(gain.rows() == 1 && gain.cols() == x.cols() && bias.rows() == 1 && bias.cols() == x.cols(), "layer_norm");
  const Mat& in = x.value();
  const Eigen::Index n = in.rows(), d = in.cols();
  auto xhat = std::make_shared<Mat>(n, d);
  auto inv_std = std::make_shared<Vec>(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mu = in.row(r).mean();
    const double var = (in.row(r).array() - mu).square().mean();
    (*inv_std)(r) = 1.0 / std::sqrt(var + eps);
    xhat->row(r) = (in.row(r).array() - mu) * (*inv_std)(r);
  }
  Mat out = xhat->array().rowwise() * gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  const int ix = x.id, ig = gain.id, ib = bias.id;
  return g.push(std::move(out), {ix, ig, ib}, [ix, ig, ib, xhat, inv_std](Graph& g, int self) {
    const Mat& dy = g.grad(self);
    if (g.needs_grad(ig)) g.grad(ig) += (dy.array() * xhat->array()).colwise().sum().matrix();
    if (g.needs_grad(ib)) g.grad(ib) += dy.colwise().sum();
    if (g.needs_grad(ix)) {
      const Mat dxhat = dy.array().rowwise() * g.node_value(ig).row(0).array();
      Mat& dx = g.grad(ix);
      for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
        const double m1 = dxhat.row(r).mean();
        const double m2 = dxhat.row(r).dot(xhat->row(r)) / static_cast<double>(dxhat.cols());
        dx.row(r).array() += (*inv_std)(r) * (dxhat.row(r).array() - m1 - xhat->row(r).array() * m2);
      }
    }
  });
}

Var embedding(Var table, const std::vector<std::int32_t>& ids, double s) {
  Graph& g = *table.graph;
  const Mat& t = table.value();
  Mat out(static_cast<Eigen::Index>(ids.size()), t.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || ids[r] >= t.rows()) throw Error("embedding id out of range: " + std::to_string(ids[r]));
    out.row(static_cast<Eigen::Index>(r)) = t.row(ids[r]) * s;
  }
  const int it = table.id;
  return g.push(std::move(out), {it}, [it, ids, s](Graph& g, int self) {
    if (!g.needs_grad(it)) return;
    const Mat& d = g.grad(self);
    Mat& dt = g.grad(it);
    for (std::size_t r = 0; r < ids.size(); ++r) dt.row(ids[r]) += d.row(static_cast<Eigen::Index>(r)) * s;
  });
}

Var attention(Var q, Var k, Var v, const AttentionShape& shape) {
  Graph& g = *q.graph;
  const auto B = static_cast<Eigen::Index>(shape.batch);
  const auto Sq = static_cast<Eigen::Index>(shape.q_len);
  const auto Sk = static_cast<Eigen::Index>(shape.k_len);
  const auto H = static_cast<Eigen::Index>(shape.heads);
  const Eigen::Index d = q.cols();
  require(q.rows() == B * Sq && k.rows() == B * Sk && v.rows() == B * Sk, "attention rows");
  require(k.cols() == d && v.cols() == d && H > 0 && d % H == 0, "attention cols");
  require(shape.key_mask.empty() || static_cast<Eigen::Index>(shape.key_mask.size()) == B * Sk, "attention mask");
  require(!shape.causal || Sq == Sk, "causal attention");
  const Eigen::Index dh = d / H;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  const Mat& Q = q.value();
  const Mat& K = k.value();
  const Mat& V = v.value();
  auto probs = std::make_shared<std::vector<Mat>>(static_cast<std::size_t>(B * H));
  Mat out = Mat::Zero(B * Sq, d);

  for (Eigen::Index b = 0; b < B; ++b) {
    for (Eigen::Index h = 0; h < H; ++h) {
      Mat s = Q.block(b * Sq, h * dh, Sq, dh) * K.block(b * Sk, h * dh, Sk, dh).transpose() * inv_sqrt;
      for (Eigen::Index i = 0; i < Sq; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < Sk; ++j) {
          const bool ok = (shape.key_mask.empty() || shape.key_mask[static_cast<std::size_t>(b * Sk + j)]) &&
                          (!shape.causal || j <= i);
          if (!ok) s(i, j) = -std::numeric_limits<double>::infinity();
          else mx = std::max(mx, s(i, j));
        }
        if (mx == -std::numeric_limits<double>::infinity()) {
          s.row(i).setZero();
          continue;
        }
        double sum = 0.0;
        for (Eigen::Index j = 0; j < Sk; ++j) {
          const double e = s(i, j) == -std::numeric_limits<double>::infinity() ? 0.0 : std::exp(s(i, j) - mx);
          s(i, j) = e;
          sum += e;
        }
        s.row(i) /= sum;
      }
      out.block(b * Sq, h * dh, Sq, dh).noalias() = s * V.block(b * Sk, h * dh, Sk, dh);
      (*probs)[static_cast<std::size_t>(b * H + h)] = std::move(s);
    }
  }

  const int iq = q.id, ik = k.id, iv = v.id;
  return g.push(std::move(out), {iq, ik, iv}, [=](Graph& g, int self) {
    const Mat dout = g.grad(self);
    const Mat& Qv = g.node_value(iq);
    const Mat& Kv = g.node_value(ik);
    const Mat& Vv = g.node_value(iv);
    Mat dq = Mat::Zero(Qv.rows(), Qv.cols());
    Mat dk = Mat::Zero(Kv.rows(), Kv.cols());
    Mat dv = Mat::Zero(Vv.rows(), Vv.cols());
    for (Eigen::Index b = 0; b < B; ++b) {
      for (Eigen::Index h = 0; h < H; ++h) {
        const Mat& P = (*probs)[static_cast<std::size_t>(b * H + h)];
        const auto dO = dout.block(b * Sq, h * dh, Sq, dh);
        dv.block(b * Sk, h * dh, Sk, dh).noalias() += P.transpose() * dO;
        Mat dP = dO * Vv.block(b * Sk, h * dh, Sk, dh).transpose();
        const Vec rowdot = (dP.array() * P.array()).rowwise().sum();
        Mat dS = P.array() * (dP.colwise() - rowdot).array();
        dS *= inv_sqrt;
        dq.block(b * Sq, h * dh, Sq, dh).noalias() += dS * Kv.block(b * Sk, h * dh, Sk, dh);
        dk.block(b * Sk, h * dh, Sk, dh).noalias() += dS.transpose() * Qv.block(b * Sq, h * dh, Sq, dh);
      }
    }
    if (g.needs_grad(iq)) g.grad(iq) += dq;
    if (g.needs_grad(ik)) g.grad(ik) += dk;
    if (g.needs_grad(iv)) g.grad(iv) += dv;
  });
}

Var dropout(Var x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw ConfigError("dropout probability must be < 1");
  Graph& g = *x.graph;
  const Mat& in = x.value();
  auto mask = std::make_shared<Mat>(in.rows(), in.cols());
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < mask->size(); ++i) mask->data()[i] = rng.uniform() < p ? 0.0 : keep;
  const int ix = x.id;
  return g.push(in.cwiseProduct(*mask), {ix}, [ix, mask](Graph& g, int self) {
    if (g.needs_grad(ix)) g.grad(ix) += g.grad(self).cwiseProduct(*mask);
  });
}

Var slice_rows(Var x, Eigen::Index row0, Eigen::Index n) {
  Graph& g = *x.graph;
  require(row0 >= 0 && n >= 0 && row0 + n <= x.rows(), "slice_rows");
  const int ix = x.id;
  return g.push(x.value().middleRows(row0, n), {ix}, [ix, row0, n](Graph& g, int self) {
    if (g.needs_grad(ix)) g.grad(ix).middleRows(row0, n) += g.grad(self);
  });
}

}  // namespace dialcal
