#include "pkd/graph.hpp"

#include <algorithm>
#include <cmath>

#include "pkd/error.hpp"
#include "pkd/numeric.hpp"

namespace pkd {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kInput: return "input";
    case OpKind::kParameter: return "parameter";
    case OpKind::kConstant: return "constant";
    case OpKind::kAffine: return "affine";
    case OpKind::kTanh: return "tanh";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kLog: return "log";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScaleShift: return "scale_shift";
    case OpKind::kMean: return "mean";
    case OpKind::kClamp: return "clamp";
  }
  return "?";
}

NodeId Graph::push(OpKind kind, std::vector<NodeId> inputs, std::string label, double a,
                   double b) {
  for (NodeId in : inputs) {
    if (in >= nodes_.size()) {
      throw Error("graph: " + std::string(op_name(kind)) + " refers to unknown node " +
                  std::to_string(in));
    }
  }
  nodes_.push_back(Node{kind, std::move(inputs), std::move(label), a, b, Tensor(), 0});
  forward_done_ = false;
  return nodes_.size() - 1;
}

NodeId Graph::input(std::string name) { return push(OpKind::kInput, {}, std::move(name)); }

NodeId Graph::parameter(std::string segment) {
  return push(OpKind::kParameter, {}, std::move(segment));
}

NodeId Graph::constant(Tensor value, std::string label) {
  NodeId id = push(OpKind::kConstant, {}, std::move(label));
  nodes_[id].value = std::move(value);
  return id;
}

NodeId Graph::affine(NodeId x, NodeId weight, NodeId bias, std::string label) {
  return push(OpKind::kAffine, {x, weight, bias}, std::move(label));
}
NodeId Graph::tanh(NodeId x) { return push(OpKind::kTanh, {x}); }
NodeId Graph::sigmoid(NodeId x) { return push(OpKind::kSigmoid, {x}); }
NodeId Graph::log(NodeId x) { return push(OpKind::kLog, {x}); }
NodeId Graph::add(NodeId a, NodeId b) { return push(OpKind::kAdd, {a, b}); }
NodeId Graph::sub(NodeId a, NodeId b) { return push(OpKind::kSub, {a, b}); }
NodeId Graph::mul(NodeId a, NodeId b) { return push(OpKind::kMul, {a, b}); }
NodeId Graph::scale_shift(NodeId x, double scale, double shift) {
  return push(OpKind::kScaleShift, {x}, {}, scale, shift);
}
NodeId Graph::mean(NodeId x) { return push(OpKind::kMean, {x}); }
NodeId Graph::clamp(NodeId x, double lo, double hi) {
  if (!(lo <= hi)) throw Error("graph: clamp with lo > hi");
  return push(OpKind::kClamp, {x}, {}, lo, hi);
}

void Graph::set_output(NodeId id) {
  if (id >= nodes_.size()) throw Error("graph: output node out of range");
  output_ = id;
}

NodeId Graph::output() const {
  if (nodes_.empty()) throw Error("graph: empty graph has no output");
  return output_ == static_cast<NodeId>(-1) ? nodes_.size() - 1 : output_;
}

std::string Graph::describe(NodeId id) const {
  const Node& n = nodes_[id];
  std::string s = "node #" + std::to_string(id) + " (" + std::string(op_name(n.kind));
  if (!n.label.empty()) s += " '" + n.label + "'";
  return s + ")";
}

const Tensor& Graph::value(NodeId id) const {
  if (id >= nodes_.size()) throw Error("graph: node out of range");
  if (!forward_done_) throw Error("graph: value() before forward()");
  return nodes_[id].value;
}

void Graph::eval(NodeId id, const InputMap& inputs, const ParamVector& params) {
  Node& n = nodes_[id];
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };
  auto same_shape = [&](const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
      throw ShapeError("graph: shape mismatch at " + describe(id) + ": " +
                       shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
  };
  auto unary = [&](auto fn) {
    const Tensor& x = in(0);
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = fn(x[i]);
    n.value = std::move(y);
  };
  auto binary = [&](auto fn) {
    const Tensor& a = in(0);
    const Tensor& b = in(1);
    same_shape(a, b);
    Tensor y(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) y[i] = fn(a[i], b[i]);
    n.value = std::move(y);
  };

  switch (n.kind) {
    case OpKind::kInput: {
      auto it = inputs.find(n.label);
      if (it == inputs.end()) throw Error("graph: unbound input at " + describe(id));
      n.value = it->second;
      break;
    }
    case OpKind::kParameter: {
      const Segment& seg = params.segment(n.label);
      n.param_offset = seg.offset;
      n.value = params.segment_tensor(n.label);
      break;
    }
    case OpKind::kConstant:
      break;
    case OpKind::kAffine: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      const Tensor& b = in(2);
      if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || x.shape()[1] != w.shape()[1] ||
          b.shape()[0] != w.shape()[0]) {
        throw ShapeError("graph: shape mismatch at " + describe(id) + ": x " +
                         shape_string(x.shape()) + ", W " + shape_string(w.shape()) + ", b " +
                         shape_string(b.shape()));
      }
      const std::size_t batch = x.shape()[0], n_in = w.shape()[1], n_out = w.shape()[0];
      Tensor y(Shape{batch, n_out});
      const double* xv = x.values().data();
      const double* wv = w.values().data();
      double* yv = y.values().data();
      for (std::size_t r = 0; r < batch; ++r) {
        const double* xr = xv + r * n_in;
        for (std::size_t o = 0; o < n_out; ++o) {
          const double* wo = wv + o * n_in;
          double acc = b[o];
          for (std::size_t i = 0; i < n_in; ++i) acc += wo[i] * xr[i];
          yv[r * n_out + o] = acc;
        }
      }
      n.value = std::move(y);
      break;
    }
    case OpKind::kTanh: unary([](double v) { return std::tanh(v); }); break;
    case OpKind::kSigmoid: unary([](double v) { return pkd::sigmoid(v); }); break;
    case OpKind::kLog: unary([](double v) { return std::log(v); }); break;
    case OpKind::kAdd: binary([](double a, double b) { return a + b; }); break;
    case OpKind::kSub: binary([](double a, double b) { return a - b; }); break;
    case OpKind::kMul: binary([](double a, double b) { return a * b; }); break;
    case OpKind::kScaleShift: {
      const double a = n.a, b = n.b;
      unary([a, b](double v) { return a * v + b; });
      break;
    }
    case OpKind::kMean: {
      const Tensor& x = in(0);
      if (x.size() == 0) throw ShapeError("graph: mean of empty tensor at " + describe(id));
      n.value = Tensor::scalar(compensated_sum(x.values()) / static_cast<double>(x.size()));
      break;
    }
    case OpKind::kClamp: {
      const double lo = n.a, hi = n.b;
      unary([lo, hi](double v) { return std::clamp(v, lo, hi); });
      break;
    }
  }
  if (!n.value.all_finite()) {
    throw NumericError("graph: non-finite value at " + describe(id));
  }
}

const Tensor& Graph::forward(const InputMap& inputs, const ParamVector& params) {
  forward_done_ = false;
  input_grads_.clear();
  for (NodeId id = 0; id < nodes_.size(); ++id) eval(id, inputs, params);
  param_count_ = params.size();
  forward_done_ = true;
  return nodes_[output()].value;
}

std::vector<double> Graph::backward() {
  if (!forward_done_) throw Error("graph: backward() called before forward()");
  const Tensor& out = nodes_[output()].value;
  if (out.size() != 1) {
    throw ShapeError("graph: backward() without seed needs a scalar output, got " +
                     shape_string(out.shape()));
  }
  return backward(Tensor(out.shape(), 1.0));
}

std::vector<double> Graph::backward(const Tensor& seed) {
  if (!forward_done_) throw Error("graph: backward() called before forward()");
  const NodeId out_id = output();
  if (seed.shape() != nodes_[out_id].value.shape()) {
    throw ShapeError("graph: seed shape " + shape_string(seed.shape()) + " does not match output " +
                     shape_string(nodes_[out_id].value.shape()));
  }
  std::vector<double> grad(param_count_, 0.0);
  std::vector<Tensor> adj(nodes_.size());
  std::vector<bool> live(nodes_.size(), false);
  adj[out_id] = seed;
  live[out_id] = true;
  input_grads_.clear();

  auto accumulate = [&](NodeId target, const Tensor& g) {
    if (!live[target]) {
      adj[target] = g;
      live[target] = true;
    } else {
      auto dst = adj[target].values();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
  };

  for (NodeId id = out_id + 1; id-- > 0;) {
    if (!live[id]) continue;
    const Node& n = nodes_[id];
    const Tensor& g = adj[id];
    auto in_val = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };
    auto unary_back = [&](auto dfn) {
      const Tensor& x = in_val(0);
      Tensor gx(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] = g[i] * dfn(x[i], n.value[i]);
      accumulate(n.inputs[0], gx);
    };

    switch (n.kind) {
      case OpKind::kInput: {
        auto it = input_grads_.find(n.label);
        if (it == input_grads_.end()) {
          input_grads_.emplace(n.label, g);
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
        }
        break;
      }
      case OpKind::kParameter:
        for (std::size_t i = 0; i < g.size(); ++i) grad[n.param_offset + i] += g[i];
        break;
      case OpKind::kConstant:
        break;
      case OpKind::kAffine: {
        const Tensor& x = in_val(0);
        const Tensor& w = in_val(1);
        const std::size_t batch = x.shape()[0], n_in = w.shape()[1], n_out = w.shape()[0];
        Tensor gx(x.shape()), gw(w.shape()), gb(Shape{n_out});
        for (std::size_t r = 0; r < batch; ++r) {
          for (std::size_t o = 0; o < n_out; ++o) {
            const double go = g[r * n_out + o];
            if (go == 0.0) continue;
            gb[o] += go;
            for (std::size_t i = 0; i < n_in; ++i) {
              gw[o * n_in + i] += go * x[r * n_in + i];
              gx[r * n_in + i] += go * w[o * n_in + i];
            }
          }
        }
        accumulate(n.inputs[0], gx);
        accumulate(n.inputs[1], gw);
        accumulate(n.inputs[2], gb);
        break;
      }
      case OpKind::kTanh:
        unary_back([](double, double y) { return 1.0 - y * y; });
        break;
      case OpKind::kSigmoid:
        unary_back([](double, double y) { return y * (1.0 - y); });
        break;
      case OpKind::kLog:
        unary_back([](double x, double) { return 1.0 / x; });
        break;
      case OpKind::kAdd:
        accumulate(n.inputs[0], g);
        accumulate(n.inputs[1], g);
        break;
      case OpKind::kSub: {
        Tensor neg(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
        accumulate(n.inputs[0], g);
        accumulate(n.inputs[1], neg);
        break;
      }
      case OpKind::kMul: {
        const Tensor& a = in_val(0);
        const Tensor& b = in_val(1);
        Tensor ga(a.shape()), gb(b.shape());
        for (std::size_t i = 0; i < a.size(); ++i) {
          ga[i] = g[i] * b[i];
          gb[i] = g[i] * a[i];
        }
        accumulate(n.inputs[0], ga);
        accumulate(n.inputs[1], gb);
        break;
      }
      case OpKind::kScaleShift: {
        const double a = n.a;
        unary_back([a](double, double) { return a; });
        break;
      }
      case OpKind::kMean: {
        const Tensor& x = in_val(0);
        Tensor gx(x.shape(), g[0] / static_cast<double>(x.size()));
        accumulate(n.inputs[0], gx);
        break;
      }
      case OpKind::kClamp: {
        const double lo = n.a, hi = n.b;
        unary_back([lo, hi](double x, double) { return (x < lo || x > hi) ? 0.0 : 1.0; });
        break;
      }
    }
    adj[id] = Tensor();
  }
  return grad;
}

const Tensor& Graph::input_gradient(std::string_view name) const {
  auto it = input_grads_.find(name);
  if (it == input_grads_.end()) {
    throw Error("graph: no gradient for input '" + std::string(name) +
                "' (backward not run, or input not on a path to the output)");
  }
  return it->second;
}

}  // namespace pkd
