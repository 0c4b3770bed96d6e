#pragma once

#include <numeric>
#include <vector>

#include "cme/common.hpp"
#include "cme/rng.hpp"

namespace cme {

struct BoostedTreesParams {
  int rounds = 200;
  double learning_rate = 0.1;
  int max_depth = 3;
  int min_leaf = 5;
  double validation_fraction = 0.2;  // early-stopping split within the training data
  int patience = 10;
};

/// Deterministic gradient-boosted regression trees (squared loss, exact
/// greedy splits, fixed traversal order — no thread- or hash-order effects).
/// Leaf values are stored pre-scaled by the learning rate.
class BoostedTrees {
 public:
  struct Node {
    int feature = -1;  // -1 → leaf
    double threshold = 0.0;
    int left = -1, right = -1;
    double value = 0.0;
  };
  struct Tree {
    std::vector<Node> nodes;
    double predict(const double* row) const {
      int u = 0;
      while (nodes[u].feature >= 0)
        u = row[nodes[u].feature] < nodes[u].threshold ? nodes[u].left : nodes[u].right;
      return nodes[u].value;
    }
  };

  double predict_row(const double* row) const {
    double pred = base_;
    for (const auto& tree : trees_) pred += tree.predict(row);
    return pred;
  }

  Vector predict(const Matrix& features) const {
    Vector out(features.rows());
    Eigen::RowVectorXd row(features.cols());
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
      row = features.row(i);
      out[i] = predict_row(row.data());
    }
    return out;
  }

  int n_trees() const { return static_cast<int>(trees_.size()); }

  static BoostedTrees fit(const Matrix& features, const Vector& response,
                          const BoostedTreesParams& params, RngStream rng);

 private:
  double base_ = 0.0;
  std::vector<Tree> trees_;
};

inline BoostedTrees BoostedTrees::fit(const Matrix& features, const Vector& response,
                                      const BoostedTreesParams& params, RngStream rng) {
  const int n = static_cast<int>(features.rows());
  const int q = static_cast<int>(features.cols());
  if (response.size() != n) throw validation_error("boosted_trees: shape mismatch");
  if (n < 1) throw validation_error("boosted_trees: empty input");

  // deterministic validation split
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int i = n - 1; i > 0; --i)
    std::swap(order[i], order[rng.uniform_int(static_cast<std::uint64_t>(i) + 1)]);
  int n_valid = static_cast<int>(params.validation_fraction * n);
  if (n - n_valid < 2 * params.min_leaf) n_valid = 0;  // too small to hold data out
  const std::vector<int> valid_rows(order.begin(), order.begin() + n_valid);
  const std::vector<int> train_rows(order.begin() + n_valid, order.end());
  const int nt = static_cast<int>(train_rows.size());

  Matrix train_x(nt, q);
  Vector train_y(nt);
  for (int i = 0; i < nt; ++i) {
    train_x.row(i) = features.row(train_rows[i]);
    train_y[i] = response[train_rows[i]];
  }

  BoostedTrees model;
  model.base_ = train_y.mean();
  Vector train_pred = Vector::Constant(nt, model.base_);

  Matrix valid_x(n_valid, q);
  Vector valid_y(n_valid), valid_pred = Vector::Constant(n_valid, model.base_);
  for (int i = 0; i < n_valid; ++i) {
    valid_x.row(i) = features.row(valid_rows[i]);
    valid_y[i] = response[valid_rows[i]];
  }

  // presorted row order per feature (ties broken by row index)
  std::vector<std::vector<int>> sorted(q, std::vector<int>(nt));
  for (int f = 0; f < q; ++f) {
    std::iota(sorted[f].begin(), sorted[f].end(), 0);
    std::stable_sort(sorted[f].begin(), sorted[f].end(),
                     [&](int a, int b) { return train_x(a, f) < train_x(b, f); });
  }

  struct Candidate {
    double gain = 0.0;
    int feature = -1;
    double threshold = 0.0;
  };

  double best_mse = n_valid > 0 ? (valid_y - valid_pred).squaredNorm() / n_valid
                                : std::numeric_limits<double>::infinity();
  int best_round = 0;

  std::vector<int> node_of(nt);
  for (int round = 0; round < params.rounds; ++round) {
    const Vector residual = train_y - train_pred;
    Tree tree;
    tree.nodes.push_back({});
    std::fill(node_of.begin(), node_of.end(), 0);
    std::vector<int> level_nodes{0};

    for (int depth = 0; depth < params.max_depth && !level_nodes.empty(); ++depth) {
      const int max_node = tree.nodes.size();
      std::vector<double> total_sum(max_node, 0.0);
      std::vector<int> total_count(max_node, 0);
      for (int i = 0; i < nt; ++i) {
        total_sum[node_of[i]] += residual[i];
        ++total_count[node_of[i]];
      }

      std::vector<Candidate> best(max_node);
      std::vector<double> left_sum(max_node);
      std::vector<int> left_count(max_node);
      std::vector<double> prev_value(max_node);
      for (int f = 0; f < q; ++f) {
        std::fill(left_sum.begin(), left_sum.end(), 0.0);
        std::fill(left_count.begin(), left_count.end(), 0);
        std::fill(prev_value.begin(), prev_value.end(),
                  std::numeric_limits<double>::quiet_NaN());
        for (const int i : sorted[f]) {
          const int u = node_of[i];
          if (tree.nodes[u].feature != -1) continue;  // already processed levels
          const double value = train_x(i, f);
          if (left_count[u] >= params.min_leaf &&
              total_count[u] - left_count[u] >= params.min_leaf && value > prev_value[u]) {
            const double right_sum = total_sum[u] - left_sum[u];
            const int right_count = total_count[u] - left_count[u];
            const double gain = left_sum[u] * left_sum[u] / left_count[u] +
                                right_sum * right_sum / right_count -
                                total_sum[u] * total_sum[u] / total_count[u];
            if (gain > best[u].gain + 1e-12) {
              best[u] = {gain, f, 0.5 * (prev_value[u] + value)};
            }
          }
          left_sum[u] += residual[i];
          ++left_count[u];
          prev_value[u] = value;
        }
      }

      std::vector<int> next_level;
      for (const int u : level_nodes) {
        if (best[u].feature < 0) continue;  // stays a leaf
        tree.nodes[u].feature = best[u].feature;
        tree.nodes[u].threshold = best[u].threshold;
        tree.nodes[u].left = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back({});
        tree.nodes[u].right = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back({});
        next_level.push_back(tree.nodes[u].left);
        next_level.push_back(tree.nodes[u].right);
      }
      for (int i = 0; i < nt; ++i) {
        const auto& node = tree.nodes[node_of[i]];
        if (node.feature >= 0)
          node_of[i] = train_x(i, node.feature) < node.threshold ? node.left : node.right;
      }
      level_nodes = std::move(next_level);
    }

    // leaf values = learning_rate × mean residual
    {
      std::vector<double> sum(tree.nodes.size(), 0.0);
      std::vector<int> count(tree.nodes.size(), 0);
      for (int i = 0; i < nt; ++i) {
        sum[node_of[i]] += residual[i];
        ++count[node_of[i]];
      }
      for (std::size_t u = 0; u < tree.nodes.size(); ++u)
        if (tree.nodes[u].feature < 0 && count[u] > 0)
          tree.nodes[u].value = params.learning_rate * sum[u] / count[u];
    }

    for (int i = 0; i < nt; ++i) train_pred[i] += tree.nodes[node_of[i]].value;
    model.trees_.push_back(std::move(tree));

    if (n_valid > 0) {
      Eigen::RowVectorXd row(q);
      for (int i = 0; i < n_valid; ++i) {
        row = valid_x.row(i);
        valid_pred[i] += model.trees_.back().predict(row.data());
      }
      const double mse = (valid_y - valid_pred).squaredNorm() / n_valid;
      if (mse < best_mse - 1e-12) {
        best_mse = mse;
        best_round = round + 1;
      } else if (round + 1 - best_round >= params.patience) {
        break;
      }
    } else {
      best_round = round + 1;
    }
  }

  model.trees_.resize(best_round);
  return model;
}

}  // namespace cme
