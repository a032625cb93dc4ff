#include "cfrl/blackbox.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cfrl/errors.hpp"
#include "cfrl/nn.hpp"

namespace cfrl::blackbox {
namespace {

std::size_t argmax_row(const Matrix& m, Eigen::Index r) {
  std::size_t best = 0;
  for (Eigen::Index k = 1; k < m.cols(); ++k)
    if (m(r, k) > m(r, static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(k);
  return best;
}

void check_classes(const std::vector<std::size_t>& labels, std::size_t class_count, std::size_t rows) {
  if (labels.size() != rows) throw DimensionError("label count does not match row count");
  if (class_count < 2) throw ConfigError("need at least two classes");
  std::vector<std::size_t> seen(class_count, 0);
  for (auto y : labels) {
    if (y >= class_count) throw ConfigError("label exceeds class count");
    ++seen[y];
  }
  if (std::count_if(seen.begin(), seen.end(), [](auto c) { return c > 0; }) < 2)
    throw ConfigError("training data contains a single class");
}

// Row-wise log-softmax cross-entropy and probabilities.
double softmax_xent(const Matrix& scores, const std::vector<std::size_t>& labels, Matrix* probs) {
  double loss = 0.0;
  if (probs) probs->resize(scores.rows(), scores.cols());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const double mx = scores.row(r).maxCoeff();
    const RowVector e = (scores.row(r).array() - mx).exp().matrix();
    const double z = e.sum();
    loss += -(scores(r, static_cast<Eigen::Index>(labels[static_cast<std::size_t>(r)])) - mx - std::log(z));
    if (probs) probs->row(r) = e / z;
  }
  return loss / static_cast<double>(scores.rows());
}

}  // namespace

// ---------------------------------------------------------------- logistic regression

LogisticRegressionModel::LogisticRegressionModel(Matrix weights, RowVector bias, double C)
    : weights_(std::move(weights)), bias_(std::move(bias)), C_(C) {
  if (weights_.cols() != bias_.size()) throw DimensionError("logistic regression: weight/bias class mismatch");
}

Matrix LogisticRegressionModel::scores(const Matrix& encoded) const {
  if (encoded.cols() != weights_.rows())
    throw DimensionError("logistic regression expects width " + std::to_string(weights_.rows()) + ", got " +
                         std::to_string(encoded.cols()));
  Matrix s = encoded * weights_;
  s.rowwise() += bias_;
  return s;
}

std::vector<std::size_t> LogisticRegressionModel::predict_labels(const Matrix& encoded) const {
  const Matrix s = scores(encoded);
  std::vector<std::size_t> out(static_cast<std::size_t>(s.rows()));
  for (Eigen::Index r = 0; r < s.rows(); ++r) out[static_cast<std::size_t>(r)] = argmax_row(s, r);
  return out;
}

double logistic_objective(const LogisticRegressionModel& model, const Matrix& x, const std::vector<std::size_t>& labels) {
  const double n = static_cast<double>(x.rows());
  return softmax_xent(model.scores(x), labels, nullptr) + model.weights().squaredNorm() / (2.0 * model.C() * n);
}

LogisticRegressionModel train_logistic_regression(const Matrix& x, const std::vector<std::size_t>& labels,
                                                  std::size_t class_count, const LogisticRegressionConfig& config,
                                                  std::uint64_t /*seed*/) {
  check_classes(labels, class_count, static_cast<std::size_t>(x.rows()));
  if (!(config.C > 0.0)) throw ConfigError("logistic regression C must be positive");

  const auto k = static_cast<Eigen::Index>(class_count);
  nn::ParameterSet params(1);
  params[0].weights = Matrix::Zero(x.cols(), k);
  params[0].bias = RowVector::Zero(k);
  nn::AdamState adam(params, nn::AdamConfig{config.learning_rate});

  Matrix onehot = Matrix::Zero(x.rows(), k);
  for (Eigen::Index r = 0; r < x.rows(); ++r) onehot(r, static_cast<Eigen::Index>(labels[static_cast<std::size_t>(r)])) = 1.0;

  const double n = static_cast<double>(x.rows());
  const double reg = 1.0 / (config.C * n);
  LogisticRegressionModel model;
  model.C_ = config.C;
  Matrix probs;
  nn::ParameterSet grads(1);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Matrix s = x * params[0].weights;
    s.rowwise() += params[0].bias;
    const double loss = softmax_xent(s, labels, &probs) + 0.5 * reg * params[0].weights.squaredNorm();
    model.loss_history_.push_back(loss);
    const Matrix residual = (probs - onehot) / n;
    grads[0].weights = x.transpose() * residual + reg * params[0].weights;
    grads[0].bias = residual.colwise().sum();
    nn::adam_update(params, grads, adam);
  }
  model.weights_ = std::move(params[0].weights);
  model.bias_ = std::move(params[0].bias);
  model.loss_history_.push_back(logistic_objective(model, x, labels));
  return model;
}

std::vector<NamedTensor> LogisticRegressionModel::export_tensors() const {
  return {tensor_from("lr.weights", weights_), tensor_from("lr.bias", bias_), scalar_tensor("lr.config", {C_})};
}

LogisticRegressionModel LogisticRegressionModel::import_tensors(const TensorMap& tensors) {
  return LogisticRegressionModel(matrix_from(require_tensor(tensors, "lr.weights")),
                                 row_vector_from(require_tensor(tensors, "lr.bias")),
                                 require_tensor(tensors, "lr.config").data.at(0));
}

// ---------------------------------------------------------------- decision tree

namespace {

double gini(const std::vector<std::size_t>& counts, std::size_t total) {
  if (total == 0) return 0.0;
  double s = 0.0;
  for (auto c : counts) {
    const double p = static_cast<double>(c) / static_cast<double>(total);
    s += p * p;
  }
  return 1.0 - s;
}

struct Split {
  bool found = false;
  std::size_t feature = 0;
  double threshold = 0.0;
  double gain = -1.0;
};

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& x, const std::vector<std::size_t>& y, std::size_t classes, const DecisionTreeConfig& cfg)
      : x_(x), y_(y), classes_(classes), cfg_(cfg) {}

  std::vector<TreeNode> build() {
    std::vector<std::size_t> rows(static_cast<std::size_t>(x_.rows()));
    std::iota(rows.begin(), rows.end(), 0);
    grow(rows, 0);
    return std::move(nodes_);
  }

 private:
  std::size_t grow(const std::vector<std::size_t>& rows, std::size_t depth) {
    const std::size_t id = nodes_.size();
    nodes_.emplace_back();
    std::vector<std::size_t> counts(classes_, 0);
    for (auto r : rows) ++counts[y_[r]];
    TreeNode node;
    node.samples = rows.size();
    node.depth = depth;
    node.label = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    const bool pure = counts[node.label] == rows.size();
    if (!pure && depth < cfg_.max_depth && rows.size() >= cfg_.min_samples_split) {
      const Split s = best_split(rows, counts);
      if (s.found) {
        std::vector<std::size_t> left, right;
        for (auto r : rows) (x_(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(s.feature)) <= s.threshold ? left : right).push_back(r);
        node.feature = s.feature;
        node.threshold = s.threshold;
        nodes_[id] = node;
        const std::size_t l = grow(left, depth + 1);
        const std::size_t rr = grow(right, depth + 1);
        nodes_[id].left = l;
        nodes_[id].right = rr;
        return id;
      }
    }
    nodes_[id] = node;
    return id;
  }

  // Greedy Gini split; ties go to the lowest feature, then the lowest threshold.
  Split best_split(const std::vector<std::size_t>& rows, const std::vector<std::size_t>& counts) const {
    Split best;
    const std::size_t n = rows.size();
    const double parent = gini(counts, n);
    std::vector<std::size_t> order = rows;
    for (Eigen::Index f = 0; f < x_.cols(); ++f) {
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double va = x_(static_cast<Eigen::Index>(a), f), vb = x_(static_cast<Eigen::Index>(b), f);
        return va < vb || (va == vb && a < b);
      });
      std::vector<std::size_t> left(classes_, 0), right = counts;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        const std::size_t r = order[i];
        ++left[y_[r]];
        --right[y_[r]];
        const double v = x_(static_cast<Eigen::Index>(r), f);
        const double next = x_(static_cast<Eigen::Index>(order[i + 1]), f);
        if (v == next) continue;
        const std::size_t nl = i + 1, nr = n - nl;
        const double child = (static_cast<double>(nl) * gini(left, nl) + static_cast<double>(nr) * gini(right, nr)) /
                             static_cast<double>(n);
        const double gain = parent - child;
        if (!best.found || gain > best.gain) {
          best.found = true;
          best.gain = gain;
          best.feature = static_cast<std::size_t>(f);
          best.threshold = 0.5 * (v + next);
        }
      }
    }
    return best;
  }

  const Matrix& x_;
  const std::vector<std::size_t>& y_;
  std::size_t classes_;
  DecisionTreeConfig cfg_;
  std::vector<TreeNode> nodes_;
};

}  // namespace

DecisionTreeModel::DecisionTreeModel(std::vector<TreeNode> nodes, std::size_t width, DecisionTreeConfig config)
    : nodes_(std::move(nodes)), width_(width), config_(config) {
  if (nodes_.empty()) throw DataError("decision tree has no nodes");
  for (const auto& n : nodes_)
    if (!n.is_leaf() && (n.left >= nodes_.size() || n.right >= nodes_.size() || n.feature >= width_))
      throw DataError("decision tree node table is inconsistent");
}

std::size_t DecisionTreeModel::leaf_of(const RowVector& row) const {
  std::size_t id = 0;
  while (!nodes_[id].is_leaf()) {
    const auto& n = nodes_[id];
    id = row[static_cast<Eigen::Index>(n.feature)] <= n.threshold ? n.left : n.right;
  }
  return id;
}

std::vector<std::size_t> DecisionTreeModel::predict_labels(const Matrix& encoded) const {
  if (static_cast<std::size_t>(encoded.cols()) != width_)
    throw DimensionError("decision tree expects width " + std::to_string(width_) + ", got " +
                         std::to_string(encoded.cols()));
  std::vector<std::size_t> out(static_cast<std::size_t>(encoded.rows()));
  for (Eigen::Index r = 0; r < encoded.rows(); ++r) out[static_cast<std::size_t>(r)] = nodes_[leaf_of(encoded.row(r))].label;
  return out;
}

std::size_t DecisionTreeModel::depth() const {
  std::size_t d = 0;
  for (const auto& n : nodes_) d = std::max(d, n.depth);
  return d;
}

DecisionTreeModel train_decision_tree(const Matrix& x, const std::vector<std::size_t>& labels, std::size_t class_count,
                                      const DecisionTreeConfig& config, std::uint64_t /*seed*/) {
  if (config.max_depth < 1) throw ConfigError("decision tree max_depth must be at least 1");
  if (config.min_samples_split < 2) throw ConfigError("decision tree min_samples_split must be at least 2");
  check_classes(labels, class_count, static_cast<std::size_t>(x.rows()));
  TreeBuilder builder(x, labels, class_count, config);
  return DecisionTreeModel(builder.build(), static_cast<std::size_t>(x.cols()), config);
}

std::vector<NamedTensor> DecisionTreeModel::export_tensors() const {
  Matrix table(static_cast<Eigen::Index>(nodes_.size()), 7);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& n = nodes_[i];
    const auto r = static_cast<Eigen::Index>(i);
    table(r, 0) = n.is_leaf() ? -1.0 : static_cast<double>(n.feature);
    table(r, 1) = n.threshold;
    table(r, 2) = static_cast<double>(n.left);
    table(r, 3) = static_cast<double>(n.right);
    table(r, 4) = static_cast<double>(n.label);
    table(r, 5) = static_cast<double>(n.samples);
    table(r, 6) = static_cast<double>(n.depth);
  }
  return {tensor_from("tree.nodes", table),
          scalar_tensor("tree.config", {static_cast<double>(config_.max_depth),
                                        static_cast<double>(config_.min_samples_split), static_cast<double>(width_)})};
}

DecisionTreeModel DecisionTreeModel::import_tensors(const TensorMap& tensors) {
  const Matrix table = matrix_from(require_tensor(tensors, "tree.nodes"));
  const auto& cfg = require_tensor(tensors, "tree.config").data;
  if (table.cols() != 7 || cfg.size() != 3) throw DataError("decision tree tensors are malformed");
  std::vector<TreeNode> nodes(static_cast<std::size_t>(table.rows()));
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    auto& n = nodes[i];
    n.feature = table(r, 0) < 0 ? TreeNode::kLeaf : static_cast<std::size_t>(table(r, 0));
    n.threshold = table(r, 1);
    n.left = static_cast<std::size_t>(table(r, 2));
    n.right = static_cast<std::size_t>(table(r, 3));
    n.label = static_cast<std::size_t>(table(r, 4));
    n.samples = static_cast<std::size_t>(table(r, 5));
    n.depth = static_cast<std::size_t>(table(r, 6));
  }
  DecisionTreeConfig config{static_cast<std::size_t>(cfg[0]), static_cast<std::size_t>(cfg[1])};
  return DecisionTreeModel(std::move(nodes), static_cast<std::size_t>(cfg[2]), config);
}

double accuracy(const BlackBoxModel& model, const Matrix& x, const std::vector<std::size_t>& labels) {
  if (labels.empty()) throw UsageError("accuracy of an empty set");
  const auto pred = model.predict_labels(x);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += pred[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

std::unique_ptr<BlackBoxModel> load_blackbox(const TensorMap& tensors) {
  if (tensors.count("lr.weights")) return std::make_unique<LogisticRegressionModel>(LogisticRegressionModel::import_tensors(tensors));
  if (tensors.count("tree.nodes")) return std::make_unique<DecisionTreeModel>(DecisionTreeModel::import_tensors(tensors));
  throw DataError("blackbox checkpoint holds neither a logistic regression nor a decision tree");
}

}  // namespace cfrl::blackbox
