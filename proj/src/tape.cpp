#include "rolegen/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace rolegen {

Tape::Id Tape::push(Eigen::MatrixXd value, std::function<void()> back) {
  Node node;
  node.grad = Eigen::MatrixXd::Zero(value.rows(), value.cols());
  node.value = std::move(value);
  node.back = std::move(back);
  nodes_.push_back(std::move(node));
  return static_cast<Id>(nodes_.size()) - 1;
}

Tape::Id Tape::input(Eigen::MatrixXd value) { return push(std::move(value)); }

Tape::Id Tape::matmul(Id a, Id b) {
  Id out = push(nodes_[a].value * nodes_[b].value);
  nodes_[out].back = [this, a, b, out] {
    nodes_[a].grad.noalias() += nodes_[out].grad * nodes_[b].value.transpose();
    nodes_[b].grad.noalias() += nodes_[a].value.transpose() * nodes_[out].grad;
  };
  return out;
}

Tape::Id Tape::add(Id a, Id b) {
  Id out = push(nodes_[a].value + nodes_[b].value);
  nodes_[out].back = [this, a, b, out] {
    nodes_[a].grad += nodes_[out].grad;
    nodes_[b].grad += nodes_[out].grad;
  };
  return out;
}

Tape::Id Tape::add_row_broadcast(Id a, Id row) {
  Id out = push(nodes_[a].value.rowwise() + nodes_[row].value.row(0));
  nodes_[out].back = [this, a, row, out] {
    nodes_[a].grad += nodes_[out].grad;
    nodes_[row].grad.row(0) += nodes_[out].grad.colwise().sum();
  };
  return out;
}

Tape::Id Tape::cwise_mul_row_broadcast(Id a, Id row) {
  Eigen::MatrixXd v = nodes_[a].value;
  v.array().rowwise() *= nodes_[row].value.row(0).array();
  Id out = push(std::move(v));
  nodes_[out].back = [this, a, row, out] {
    nodes_[a].grad.array() += nodes_[out].grad.array().rowwise() *
                              nodes_[row].value.row(0).array();
    nodes_[row].grad.row(0).array() +=
        (nodes_[out].grad.array() * nodes_[a].value.array())
            .colwise()
            .sum();
  };
  return out;
}

Tape::Id Tape::scale(Id a, double s) {
  Id out = push(nodes_[a].value * s);
  nodes_[out].back = [this, a, out, s] {
    nodes_[a].grad += nodes_[out].grad * s;
  };
  return out;
}

Tape::Id Tape::transpose(Id a) {
  Id out = push(nodes_[a].value.transpose());
  nodes_[out].back = [this, a, out] {
    nodes_[a].grad += nodes_[out].grad.transpose();
  };
  return out;
}

Tape::Id Tape::slice_cols(Id a, int start, int n) {
  Id out = push(nodes_[a].value.middleCols(start, n));
  nodes_[out].back = [this, a, out, start, n] {
    nodes_[a].grad.middleCols(start, n) += nodes_[out].grad;
  };
  return out;
}

Tape::Id Tape::concat_cols(const std::vector<Id>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  Eigen::Index rows = nodes_[parts[0]].value.rows();
  Eigen::Index cols = 0;
  for (Id p : parts) cols += nodes_[p].value.cols();
  Eigen::MatrixXd v(rows, cols);
  Eigen::Index at = 0;
  for (Id p : parts) {
    v.middleCols(at, nodes_[p].value.cols()) = nodes_[p].value;
    at += nodes_[p].value.cols();
  }
  Id out = push(std::move(v));
  std::vector<Id> ps = parts;
  nodes_[out].back = [this, ps, out] {
    Eigen::Index at = 0;
    for (Id p : ps) {
      nodes_[p].grad += nodes_[out].grad.middleCols(at, nodes_[p].value.cols());
      at += nodes_[p].value.cols();
    }
  };
  return out;
}

Tape::Id Tape::gather_rows(Id table, const std::vector<int>& rows) {
  Eigen::MatrixXd v(static_cast<Eigen::Index>(rows.size()),
                    nodes_[table].value.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    v.row(static_cast<Eigen::Index>(i)) = nodes_[table].value.row(rows[i]);
  }
  Id out = push(std::move(v));
  std::vector<int> rs = rows;
  nodes_[out].back = [this, table, rs, out] {
    for (std::size_t i = 0; i < rs.size(); ++i) {
      nodes_[table].grad.row(rs[i]) +=
          nodes_[out].grad.row(static_cast<Eigen::Index>(i));
    }
  };
  return out;
}

Tape::Id Tape::sum_rows(Id a) {
  Id out = push(nodes_[a].value.colwise().sum());
  nodes_[out].back = [this, a, out] {
    nodes_[a].grad.rowwise() += nodes_[out].grad.row(0);
  };
  return out;
}

Tape::Id Tape::rmsnorm(Id a, double eps) {
  const Eigen::MatrixXd& x = nodes_[a].value;
  const auto n = static_cast<double>(x.cols());
  Eigen::VectorXd inv_rms(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    inv_rms[r] = 1.0 / std::sqrt(x.row(r).squaredNorm() / n + eps);
  }
  Eigen::MatrixXd y = inv_rms.asDiagonal() * x;
  Id out = push(std::move(y));
  nodes_[out].back = [this, a, out, inv_rms, n] {
    const Eigen::MatrixXd& x = nodes_[a].value;
    const Eigen::MatrixXd& dy = nodes_[out].grad;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double rinv = inv_rms[r];
      const double dot = dy.row(r).dot(x.row(r));
      nodes_[a].grad.row(r) +=
          rinv * dy.row(r) - (dot * rinv * rinv * rinv / n) * x.row(r);
    }
  };
  return out;
}

Tape::Id Tape::softmax_rows(Id a, Id additive_mask) {
  Eigen::MatrixXd z = nodes_[a].value;
  if (additive_mask >= 0) z += nodes_[additive_mask].value;
  Eigen::MatrixXd y(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    Eigen::RowVectorXd e = (z.row(r).array() - z.row(r).maxCoeff()).exp();
    y.row(r) = e / e.sum();
  }
  Id out = push(std::move(y));
  nodes_[out].back = [this, a, out] {
    const Eigen::MatrixXd& y = nodes_[out].value;
    const Eigen::MatrixXd& dy = nodes_[out].grad;
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double dot = dy.row(r).dot(y.row(r));
      nodes_[a].grad.row(r).array() +=
          y.row(r).array() * (dy.row(r).array() - dot);
    }
  };
  return out;
}

Tape::Id Tape::gelu(Id a) {
  const Eigen::MatrixXd& x = nodes_[a].value;
  Eigen::MatrixXd y =
      0.5 * x.array() * (1.0 + (x.array() / std::sqrt(2.0)).unaryExpr([](double v) { return std::erf(v); }));
  Id out = push(std::move(y));
  nodes_[out].back = [this, a, out] {
    const Eigen::ArrayXXd x = nodes_[a].value.array();
    const Eigen::ArrayXXd phi =
        (-0.5 * x.square()).exp() / std::sqrt(2.0 * M_PI);
    const Eigen::ArrayXXd cdf = 0.5 * (1.0 + (x / std::sqrt(2.0)).unaryExpr([](double v) { return std::erf(v); }));
    nodes_[a].grad.array() += nodes_[out].grad.array() * (cdf + x * phi);
  };
  return out;
}

Tape::Id Tape::cross_entropy(Id logits, const std::vector<int>& targets) {
  const Eigen::MatrixXd& z = nodes_[logits].value;
  if (static_cast<Eigen::Index>(targets.size()) != z.rows()) {
    throw std::invalid_argument("cross_entropy: target count mismatch");
  }
  Eigen::MatrixXd probs(z.rows(), z.cols());
  double loss = 0.0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double m = z.row(r).maxCoeff();
    Eigen::RowVectorXd e = (z.row(r).array() - m).exp();
    const double sum = e.sum();
    probs.row(r) = e / sum;
    loss -= z(r, targets[static_cast<size_t>(r)]) - m - std::log(sum);
  }
  loss /= static_cast<double>(z.rows());
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = loss;
  Id out = push(std::move(v));
  std::vector<int> ts = targets;
  nodes_[out].back = [this, logits, out, probs, ts] {
    const double g = nodes_[out].grad(0, 0) / static_cast<double>(probs.rows());
    Eigen::MatrixXd d = probs;
    for (Eigen::Index r = 0; r < d.rows(); ++r) {
      d(r, ts[static_cast<size_t>(r)]) -= 1.0;
    }
    nodes_[logits].grad += g * d;
  };
  return out;
}

Tape::Id Tape::mean(const std::vector<Id>& scalars) {
  if (scalars.empty()) throw std::invalid_argument("mean: empty");
  double v = 0.0;
  for (Id s : scalars) v += nodes_[s].value(0, 0);
  v /= static_cast<double>(scalars.size());
  Eigen::MatrixXd m(1, 1);
  m(0, 0) = v;
  Id out = push(std::move(m));
  std::vector<Id> ss = scalars;
  nodes_[out].back = [this, ss, out] {
    const double g = nodes_[out].grad(0, 0) / static_cast<double>(ss.size());
    for (Id s : ss) nodes_[s].grad(0, 0) += g;
  };
  return out;
}

void Tape::backward(Id root) {
  if (nodes_[root].value.size() != 1) {
    throw std::invalid_argument("backward root must be scalar");
  }
  nodes_[root].grad(0, 0) = 1.0;
  for (Id i = root; i >= 0; --i) {
    if (nodes_[i].back) nodes_[i].back();
  }
}

}  // namespace rolegen
