#include "fblab/mlp.hpp"

#include <cmath>

#include "fblab/errors.hpp"
#include "fblab/rng.hpp"

namespace fblab {

namespace {

std::vector<Eigen::Index> layer_offsets(const std::vector<int>& sizes, Eigen::Index& total) {
  if (sizes.size() < 2) throw ConfigError("an MLP needs at least input and output sizes");
  for (int s : sizes)
    if (s <= 0) throw ConfigError("MLP layer sizes must be positive");
  std::vector<Eigen::Index> offsets;
  total = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    offsets.push_back(total);
    total += static_cast<Eigen::Index>(sizes[l]) * sizes[l + 1] + sizes[l + 1];
  }
  return offsets;
}

}  // namespace

Mlp::Mlp(std::vector<int> layer_sizes, std::uint64_t seed) : sizes_(std::move(layer_sizes)) {
  Eigen::Index total = 0;
  offsets_ = layer_offsets(sizes_, total);
  params_ = Eigen::VectorXd::Zero(total);
  Rng rng(seed);
  for (int l = 0; l < n_layers(); ++l) {
    const double scale = std::sqrt(2.0 / sizes_[l]);
    const Eigen::Index n = static_cast<Eigen::Index>(sizes_[l]) * sizes_[l + 1];
    for (Eigen::Index i = 0; i < n; ++i) params_[offsets_[l] + i] = scale * rng.normal();
  }
}

Mlp Mlp::zeros(std::vector<int> layer_sizes) {
  Mlp m;
  m.sizes_ = std::move(layer_sizes);
  Eigen::Index total = 0;
  m.offsets_ = layer_offsets(m.sizes_, total);
  m.params_ = Eigen::VectorXd::Zero(total);
  return m;
}

Eigen::Map<const Eigen::MatrixXd> Mlp::weight(int layer) const {
  return {params_.data() + offsets_[layer], sizes_[layer + 1], sizes_[layer]};
}

Eigen::Map<const Eigen::VectorXd> Mlp::bias(int layer) const {
  const Eigen::Index off = offsets_[layer] + static_cast<Eigen::Index>(sizes_[layer]) * sizes_[layer + 1];
  return {params_.data() + off, sizes_[layer + 1]};
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x) const {
  if (x.cols() != input_dim()) throw ShapeError("MLP input has the wrong feature dimension");
  Eigen::MatrixXd a = x;
  for (int l = 0; l < n_layers(); ++l) {
    Eigen::MatrixXd z = a * weight(l).transpose();
    z.rowwise() += bias(l).transpose();
    if (l + 1 < n_layers()) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  return a;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, Tape& tape) const {
  if (x.cols() != input_dim()) throw ShapeError("MLP input has the wrong feature dimension");
  tape.activations.clear();
  tape.activations.reserve(sizes_.size());
  tape.activations.push_back(x);
  for (int l = 0; l < n_layers(); ++l) {
    Eigen::MatrixXd z = tape.activations.back() * weight(l).transpose();
    z.rowwise() += bias(l).transpose();
    if (l + 1 < n_layers()) z = z.cwiseMax(0.0);
    tape.activations.push_back(std::move(z));
  }
  return tape.activations.back();
}

Eigen::VectorXd Mlp::backward(const Tape& tape, const Eigen::MatrixXd& grad_output) const {
  if (static_cast<int>(tape.activations.size()) != n_layers() + 1) throw ShapeError("tape does not match network");
  if (grad_output.rows() != tape.activations.back().rows() || grad_output.cols() != output_dim())
    throw ShapeError("output gradient has the wrong shape");
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(params_.size());
  Eigen::MatrixXd g = grad_output;
  for (int l = n_layers() - 1; l >= 0; --l) {
    const Eigen::MatrixXd& a_in = tape.activations[l];
    const Eigen::Index rows = sizes_[l + 1];
    const Eigen::Index cols = sizes_[l];
    Eigen::Map<Eigen::MatrixXd> dw(grad.data() + offsets_[l], rows, cols);
    Eigen::Map<Eigen::VectorXd> db(grad.data() + offsets_[l] + rows * cols, rows);
    dw.noalias() = g.transpose() * a_in;
    db = g.colwise().sum().transpose();
    if (l > 0) {
      Eigen::MatrixXd g_prev = g * weight(l);
      g = (a_in.array() > 0.0).select(g_prev, 0.0);
    }
  }
  return grad;
}

Adam::Adam(Eigen::Index n_params, Options options)
    : opt_(options), m_(Eigen::VectorXd::Zero(n_params)), v_(Eigen::VectorXd::Zero(n_params)) {}

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  if (grad.size() != params.size() || params.size() != m_.size()) throw ShapeError("Adam size mismatch");
  ++t_;
  m_ = opt_.beta1 * m_ + (1.0 - opt_.beta1) * grad;
  v_ = opt_.beta2 * v_ + (1.0 - opt_.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  params.array() -= opt_.learning_rate *
                    ((m_.array() / c1) / ((v_.array() / c2).sqrt() + opt_.epsilon) + opt_.weight_decay * params.array());
}

}  // namespace fblab
