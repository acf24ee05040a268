#pragma once

// Reverse-mode differentiation over dense matrices, small MLPs and an
// Adam-style optimizer. Everything trainable in the workbench is built on
// this: encoders, the reward network and their losses.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "langpref/rng.hpp"

namespace langpref::diff {

/// Row-major batches: one sample per row.
using Tensor = Eigen::MatrixXd;
using Index = Eigen::Index;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Parameter {
  Tensor value;
  Tensor first_moment;
  Tensor second_moment;
};

/// Named parameters plus the optimizer state that travels with them.
class ParamSet {
 public:
  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const Tensor& value(const std::string& name) const;
  Tensor& value(const std::string& name);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;

  const std::map<std::string, Parameter>& entries() const { return params_; }
  std::vector<std::string> names() const;
  std::size_t size() const { return params_.size(); }
  Index scalar_count() const;

  std::int64_t step_count() const { return steps_; }
  void set_step_count(std::int64_t steps) { steps_ = steps; }

  /// Copies every entry of `other` in. Names must stay unique.
  void merge(const ParamSet& other);

  bool operator==(const ParamSet& other) const;

 private:
  std::map<std::string, Parameter> params_;
  std::int64_t steps_ = 0;
};

using GradientSet = std::map<std::string, Tensor>;

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

/// Adam update with bias correction. A parameter whose gradient is entirely
/// zero is left untouched (values and moments), so frozen or unused tensors
/// never drift on accumulated momentum. Gradients for names absent from
/// `grads` count as zero.
void optimizer_step(ParamSet& params, const GradientSet& grads, const OptimizerConfig& cfg);

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const;
  Tape* tape() const { return tape_; }
  std::size_t index() const { return index_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

/// Accumulates upstream gradients into parent nodes during the reverse sweep.
class GradSink {
 public:
  const Tensor& value(std::size_t node) const;
  bool wants(std::size_t node) const;
  void add(std::size_t node, const Tensor& grad);

 private:
  friend class Tape;
  GradSink(const Tape& tape, std::vector<Tensor>& grads) : tape_(tape), grads_(grads) {}
  const Tape& tape_;
  std::vector<Tensor>& grads_;
};

/// Dynamic per-forward-pass graph. Nodes are appended in evaluation order, so
/// the reverse sweep is a walk over indices from the back.
class Tape {
 public:
  using Backprop = std::function<void(const Tensor& upstream, GradSink& sink)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to `params[name]`; gradients flow back to that name.
  Var param(const ParamSet& params, const std::string& name);
  /// Records an op result. Nodes whose inputs are all constants skip the reverse sweep.
  Var record(Tensor value, Backprop backprop, std::initializer_list<Var> inputs);

  const Tensor& value(std::size_t node) const { return nodes_[node].value; }
  bool needs_grad(std::size_t node) const { return nodes_[node].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient of a 1x1 `loss` for every parameter in `params`; parameters the
  /// loss does not reach get zeros of matching shape.
  GradientSet backward(Var loss, const ParamSet& params) const;
  /// Gradients keyed by parameter name for every parameter leaf the loss reaches.
  GradientSet gradients(Var loss) const;

 private:
  struct Node {
    Tensor value;
    Backprop backprop;
    std::string param_name;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
};

// Differentiable operations. Shapes follow Eigen conventions; mismatches throw ShapeError.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
/// x (n x m) + bias (1 x m) broadcast over rows.
Var add_row_bias(Var x, Var bias);
Var tanh(Var a);
Var relu(Var a);
Var square(Var a);
/// Elementwise log(sigmoid(x)), stable for large |x|.
Var log_sigmoid(Var a);
Var sum(Var a);
Var mean(Var a);
/// (n x m), (n x m) -> (n x 1) row-wise dot products.
Var row_dot(Var a, Var b);
/// (n x m) -> (n x 1) Euclidean row norms. Gradient at a zero row is zero.
Var row_norm(Var a);
/// Output row g is the mean of input rows `groups[g]`. Groups must be nonempty.
Var mean_rows(Var x, const std::vector<std::vector<Index>>& groups);
/// Output row i is input row `indices[i]`.
Var gather_rows(Var x, std::span<const Index> indices);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

/// Numerically stable log(1 + exp(x)).
double softplus(double x);
double log_sigmoid(double x);
double sigmoid(double x);

/// Layer widths of a dense network, input first. Hidden layers use tanh, the
/// output layer is linear. Parameters are `<prefix>.<k>.weight` (in x out)
/// and `<prefix>.<k>.bias` (1 x out).
struct MlpSpec {
  std::string prefix;
  std::vector<Index> layers;

  std::size_t layer_count() const { return layers.empty() ? 0 : layers.size() - 1; }
  std::string weight_name(std::size_t layer) const;
  std::string bias_name(std::size_t layer) const;
};

/// Glorot-uniform weights, zero biases.
void init_mlp(ParamSet& params, const MlpSpec& spec, Rng& rng);
/// Throws ShapeError naming the first inconsistent layer.
void check_mlp(const ParamSet& params, const MlpSpec& spec, Index input_cols);

Var mlp_forward(Tape& tape, const ParamSet& params, Var input, const MlpSpec& spec);
/// Tape-free evaluation with identical arithmetic.
Tensor mlp_forward(const ParamSet& params, const Tensor& input, const MlpSpec& spec);

struct FiniteDiffEntry {
  std::string name;
  double max_relative_error = 0.0;
  Index worst_index = 0;
};

struct FiniteDiffReport {
  std::vector<FiniteDiffEntry> entries;
  double max_relative_error = 0.0;
  bool passed = false;
  std::string failure;  // set when the function went non-finite
};

/// Builds a scalar loss on a fresh tape from the given parameters.
using LossBuilder = std::function<Var(Tape& tape, const ParamSet& params)>;

/// Compares `backward` against central differences with step `h`. The relative
/// error of a component is |g_a - g_n| / max(|g_a|, |g_n|, floor) with floor 1e-6,
/// so components that are zero up to rounding are judged on absolute error.
FiniteDiffReport finite_diff_check(const LossBuilder& loss, const ParamSet& params, double h,
                                   double tolerance);

}  // namespace langpref::diff
