#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace fblab {

// Fully connected network with ReLU hidden layers and a linear output layer.
// All parameters live in one flat vector: per layer the weight matrix
// (out x in, column-major) followed by the bias.
class Mlp {
 public:
  Mlp() = default;
  // He-initialised weights, zero biases.
  Mlp(std::vector<int> layer_sizes, std::uint64_t seed);
  static Mlp zeros(std::vector<int> layer_sizes);

  const std::vector<int>& layer_sizes() const { return sizes_; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  Eigen::Index n_params() const { return params_.size(); }
  int n_layers() const { return static_cast<int>(sizes_.size()) - 1; }

  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }

  // Post-activation outputs of every layer, input included.
  struct Tape {
    std::vector<Eigen::MatrixXd> activations;
  };

  // x: one sample per row.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Tape& tape) const;
  // Gradient of a loss w.r.t. the flat parameters, given dL/d(output) for the
  // rows recorded in `tape`.
  Eigen::VectorXd backward(const Tape& tape, const Eigen::MatrixXd& grad_output) const;

  bool operator==(const Mlp& other) const { return sizes_ == other.sizes_ && params_ == other.params_; }

 private:
  Eigen::Map<const Eigen::MatrixXd> weight(int layer) const;
  Eigen::Map<const Eigen::VectorXd> bias(int layer) const;

  std::vector<int> sizes_;
  std::vector<Eigen::Index> offsets_;  // start of each layer's weights
  Eigen::VectorXd params_;
};

// Adam with bias correction and decoupled weight decay.
class Adam {
 public:
  struct Options {
    double learning_rate = 1e-3;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  Adam(Eigen::Index n_params, Options options);
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);

 private:
  Options opt_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  long t_ = 0;
};

}  // namespace fblab
