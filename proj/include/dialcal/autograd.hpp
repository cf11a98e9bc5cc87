#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dialcal/common.hpp"

namespace dialcal {

class Graph;

/// Handle to a node recorded on a Graph.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

/// Tape of matrix operations. Nodes are appended in evaluation order, so reverse
/// creation order is a valid topological order for the backward sweep.
class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var constant(Mat value);
  /// Leaf bound to external storage; its gradient is reported under `name`.
  /// Repeated calls with the same name return the same node.
  Var parameter(const std::string& name, const Mat& storage);

  /// Seeds d(loss)/d(output) and runs the reverse sweep.
  void backward(Var output, const Mat& seed);

  /// Gradients of every parameter leaf, keyed by name. Valid after backward().
  std::map<std::string, Mat> parameter_gradients() const;

  const Mat& value(Var v) const { return node_value(v.id); }
  std::size_t size() const { return nodes_.size(); }

  // Internal API used by the op implementations.
  using BackwardFn = std::function<void(Graph&, int self)>;
  Var push(Mat value, std::vector<int> inputs, BackwardFn backward);
  Mat& grad(int id);
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  const Mat& node_value(int id) const { return nodes_[static_cast<std::size_t>(id)].value(); }

 private:
  struct Node {
    Mat own;
    const Mat* ref = nullptr;
    Mat grad;
    bool has_grad = false;
    bool needs_grad = false;
    BackwardFn backward;

    const Mat& value() const { return ref ? *ref : own; }
  };
  bool record_;
  std::vector<Node> nodes_;
  std::map<std::string, int> params_;
};

/// Attention layout for a flattened batch: queries are B*q_len rows, keys B*k_len rows.
struct AttentionShape {
  std::size_t batch = 1;
  std::size_t q_len = 0;
  std::size_t k_len = 0;
  std::size_t heads = 1;
  bool causal = false;
  /// B*k_len flags; keys whose flag is 0 receive zero attention weight. Empty means all valid.
  std::vector<std::uint8_t> key_mask;
};

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var add_row(Var x, Var bias);  // bias is 1 x cols, broadcast over rows
Var add_constant(Var x, const Mat& c);
Var scale(Var x, double s);
Var relu(Var x);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
/// Row r of the result is table[ids[r]] * s.
Var embedding(Var table, const std::vector<std::int32_t>& ids, double s);
/// Multi-head scaled dot-product attention with key masking and optional causal masking.
Var attention(Var q, Var k, Var v, const AttentionShape& shape);
/// Inverted dropout; identity when p == 0.
Var dropout(Var x, double p, Rng& rng);
/// Rows [row0, row0 + n) of x.
Var slice_rows(Var x, Eigen::Index row0, Eigen::Index n);

}  // namespace dialcal
