#pragma once

#include <Eigen/Core>

#include <functional>
#include <vector>

namespace rolegen {

// Minimal reverse-mode autodiff over dense double matrices. Every value is a
// node; backward() replays the recorded closures in reverse. Graphs are
// built per batch and thrown away, so nodes own their storage.
class Tape {
 public:
  using Id = int;

  Id input(Eigen::MatrixXd value);

  const Eigen::MatrixXd& value(Id id) const { return nodes_[id].value; }
  const Eigen::MatrixXd& grad(Id id) const { return nodes_[id].grad; }

  Id matmul(Id a, Id b);
  Id add(Id a, Id b);                 // same shape
  Id add_row_broadcast(Id a, Id row); // row: 1 x cols(a), added to each row
  Id cwise_mul_row_broadcast(Id a, Id row);
  Id scale(Id a, double s);
  Id transpose(Id a);
  Id slice_cols(Id a, int start, int n);
  Id concat_cols(const std::vector<Id>& parts);

  // Rows of a parameter matrix gathered by index; backward scatter-adds.
  Id gather_rows(Id table, const std::vector<int>& rows);
  Id sum_rows(Id a);  // 1 x cols, column sums

  // Row-wise x / sqrt(mean(x^2) + eps).
  Id rmsnorm(Id a, double eps = 1e-6);
  // Row-wise softmax of (a + mask); mask may be empty (pass -1).
  Id softmax_rows(Id a, Id additive_mask = -1);
  Id gelu(Id a);  // exact erf form

  // Mean over rows of -log softmax(row)[target]; returns a 1x1 node.
  Id cross_entropy(Id logits, const std::vector<int>& targets);
  // Mean of 1x1 nodes.
  Id mean(const std::vector<Id>& scalars);

  // Seeds d(root)=1 and accumulates gradients into every node.
  void backward(Id root);

 private:
  struct Node {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    std::function<void()> back;  // empty for leaves
  };

  Id push(Eigen::MatrixXd value, std::function<void()> back = nullptr);

  std::vector<Node> nodes_;
};

}  // namespace rolegen
