#pragma once

#include <functional>
#include <vector>

#include "piars/tensor.hpp"

namespace piars::grad {

// Reverse-mode tape. One tape per training step; nodes are appended in
// topological order by construction and a single backward() pass fills one
// gradient per node. Rebuilt every forward pass (the RNN unroll length
// varies with k), never shared across threads.
class Tape {
 public:
  using Id = int;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Id leaf(Tensor t);
  Id constant(Tensor t) { return leaf(std::move(t)); }

  const Tensor& val(Id id) const { return nodes_[id].val; }
  const Tensor& grad(Id id) const { return nodes_[id].grd; }
  bool clamp_flag(Id id) const { return nodes_[id].flag; }
  int size() const { return static_cast<int>(nodes_.size()); }

  Id matmul(Id a, Id b);
  Id matmul_nt(Id a, Id b);  // a * b^T
  Id conv2d(Id img, Id ker, Id bias);
  Id relu(Id x);
  Id tanh(Id x);
  Id l2_normalize(Id x);
  Id logsumexp(Id x);        // 1-D -> scalar
  Id logsumexp_rows(Id x);   // [m x n] -> [m]
  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id mul(Id a, Id b);
  Id scale(Id x, double c);
  Id add_const(Id x, double c);
  Id affine(Id w, Id b, Id x);  // W x + b for 1-D x
  Id concat(const std::vector<Id>& parts);
  Id stack_rows(const std::vector<Id>& rows);
  Id diag(Id m);
  Id sum(Id x);
  Id mean(Id x);
  Id square(Id x);
  Id dot(Id a, Id b);
  Id reshape(Id x, std::vector<int> shape);
  Id stopgrad(Id x);

  // Seeds d(loss)=1 and propagates. Throws shape_error for non-scalar loss.
  void backward(Id loss);

 private:
  struct Node {
    Tensor val;
    Tensor grd;
    std::function<void()> back;  // empty for leaves
    bool flag = false;           // l2_normalize clamp marker
  };

  Id push(Tensor val, std::function<void()> back = {});
  Tensor& g(Id id) { return nodes_[id].grd; }

  std::vector<Node> nodes_;
};

}  // namespace piars::grad
