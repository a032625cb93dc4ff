#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <vector>

#include "cfrl/rng.hpp"
#include "cfrl/tensor.hpp"

namespace cfrl::blackbox {

// Prediction-only view of a classifier. The counterfactual pipeline sees nothing else.
class BlackBoxModel {
 public:
  virtual ~BlackBoxModel() = default;
  virtual std::vector<std::size_t> predict_labels(const Matrix& encoded) const = 0;
};

struct LogisticRegressionConfig {
  double C = 1.0;             // inverse L2 strength
  std::size_t epochs = 500;   // full-batch Adam epochs
  double learning_rate = 1e-2;
};

// Multinomial logistic regression on the encoded representation.
class LogisticRegressionModel final : public BlackBoxModel {
 public:
  LogisticRegressionModel() = default;
  LogisticRegressionModel(Matrix weights, RowVector bias, double C);

  std::vector<std::size_t> predict_labels(const Matrix& encoded) const override;
  Matrix scores(const Matrix& encoded) const;

  const Matrix& weights() const { return weights_; }  // features x classes
  const RowVector& bias() const { return bias_; }
  double C() const { return C_; }
  // Per-epoch training objective (mean cross-entropy + ||W||^2 / (2 C n)).
  const std::vector<double>& loss_history() const { return loss_history_; }

  std::vector<NamedTensor> export_tensors() const;
  static LogisticRegressionModel import_tensors(const TensorMap& tensors);

 private:
  friend LogisticRegressionModel train_logistic_regression(const Matrix&, const std::vector<std::size_t>&,
                                                           std::size_t, const LogisticRegressionConfig&, std::uint64_t);
  Matrix weights_;
  RowVector bias_;
  double C_ = 1.0;
  std::vector<double> loss_history_;
};

// Objective: sum of cross-entropies + ||W||^2 / (2C), optimised in its per-row scaled form.
LogisticRegressionModel train_logistic_regression(const Matrix& x, const std::vector<std::size_t>& labels,
                                                  std::size_t class_count, const LogisticRegressionConfig& config,
                                                  std::uint64_t seed);

double logistic_objective(const LogisticRegressionModel& model, const Matrix& x, const std::vector<std::size_t>& labels);

struct DecisionTreeConfig {
  std::size_t max_depth = 3;
  std::size_t min_samples_split = 2;
};

struct TreeNode {
  // Internal nodes: go left when x[feature] <= threshold. Leaves: feature == kLeaf.
  static constexpr std::size_t kLeaf = static_cast<std::size_t>(-1);
  std::size_t feature = kLeaf;
  double threshold = 0.0;
  std::size_t left = 0;
  std::size_t right = 0;
  std::size_t label = 0;
  std::size_t samples = 0;
  std::size_t depth = 0;
  bool is_leaf() const { return feature == kLeaf; }
};

// CART classifier with Gini impurity; nodes are stored as a flat table, root at 0.
class DecisionTreeModel final : public BlackBoxModel {
 public:
  DecisionTreeModel() = default;
  DecisionTreeModel(std::vector<TreeNode> nodes, std::size_t width, DecisionTreeConfig config);

  std::vector<std::size_t> predict_labels(const Matrix& encoded) const override;
  // Index of the leaf reached by a row.
  std::size_t leaf_of(const RowVector& row) const;

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  std::size_t depth() const;
  const DecisionTreeConfig& config() const { return config_; }

  std::vector<NamedTensor> export_tensors() const;
  static DecisionTreeModel import_tensors(const TensorMap& tensors);

 private:
  std::vector<TreeNode> nodes_;
  std::size_t width_ = 0;
  DecisionTreeConfig config_;
};

DecisionTreeModel train_decision_tree(const Matrix& x, const std::vector<std::size_t>& labels, std::size_t class_count,
                                      const DecisionTreeConfig& config, std::uint64_t seed);

double accuracy(const BlackBoxModel& model, const Matrix& x, const std::vector<std::size_t>& labels);

// Wraps a model and counts predict_labels calls and rows; used to audit query budgets.
class CountingBlackBox final : public BlackBoxModel {
 public:
  explicit CountingBlackBox(const BlackBoxModel& inner) : inner_(inner) {}
  std::vector<std::size_t> predict_labels(const Matrix& encoded) const override {
    ++calls_;
    rows_ += static_cast<std::size_t>(encoded.rows());
    return inner_.predict_labels(encoded);
  }
  std::size_t calls() const { return calls_; }
  std::size_t rows() const { return rows_; }

 private:
  const BlackBoxModel& inner_;
  mutable std::atomic<std::size_t> calls_{0};
  mutable std::atomic<std::size_t> rows_{0};
};

// Loads whichever classifier a blackbox tensor table describes.
std::unique_ptr<BlackBoxModel> load_blackbox(const TensorMap& tensors);

}  // namespace cfrl::blackbox
