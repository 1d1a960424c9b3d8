#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "pkd/param_vector.hpp"
#include "pkd/tensor.hpp"

namespace pkd {

using NodeId = std::size_t;
using InputMap = std::map<std::string, Tensor, std::less<>>;

enum class OpKind {
  kInput,
  kParameter,
  kConstant,
  kAffine,      // x[B,in] * W[out,in]^T + b[out]
  kTanh,
  kSigmoid,
  kLog,
  kAdd,
  kSub,
  kMul,
  kScaleShift,  // a * x + b, a and b scalar constants
  kMean,        // mean of all elements -> rank-0
  kClamp,
};

std::string_view op_name(OpKind kind);

// Reverse-mode tape. Nodes are appended in topological order by
// construction, so forward and backward are single linear sweeps. The graph
// is a recipe: build it once per batch shape, then bind inputs and a
// ParamVector in forward().
class Graph {
 public:
  NodeId input(std::string name);
  NodeId parameter(std::string segment);
  NodeId constant(Tensor value, std::string label = "constant");

  NodeId affine(NodeId x, NodeId weight, NodeId bias, std::string label = {});
  NodeId tanh(NodeId x);
  NodeId sigmoid(NodeId x);
  NodeId log(NodeId x);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale_shift(NodeId x, double scale, double shift);
  NodeId mean(NodeId x);
  NodeId clamp(NodeId x, double lo, double hi);

  // The output is the last node added unless set explicitly.
  void set_output(NodeId id);
  NodeId output() const;
  std::size_t size() const { return nodes_.size(); }

  // Evaluates every node and caches the values for backward.
  const Tensor& forward(const InputMap& inputs, const ParamVector& params);
  const Tensor& value(NodeId id) const;

  // d(output)/d(theta) for a scalar output.
  std::vector<double> backward();
  // Vector-Jacobian product: sum_j seed_j * d(output_j)/d(theta).
  std::vector<double> backward(const Tensor& seed);

  // Gradient wrt a named input, available after backward().
  const Tensor& input_gradient(std::string_view name) const;

 private:
  struct Node {
    OpKind kind;
    std::vector<NodeId> inputs;
    std::string label;
    double a = 0.0;
    double b = 0.0;
    Tensor value;
    std::size_t param_offset = 0;
  };

  NodeId push(OpKind kind, std::vector<NodeId> inputs, std::string label = {},
              double a = 0.0, double b = 0.0);
  std::string describe(NodeId id) const;
  void eval(NodeId id, const InputMap& inputs, const ParamVector& params);

  std::vector<Node> nodes_;
  NodeId output_ = static_cast<NodeId>(-1);
  bool forward_done_ = false;
  std::size_t param_count_ = 0;
  std::map<std::string, Tensor, std::less<>> input_grads_;
};

}  // namespace pkd
