#include "langpref/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace langpref::diff {

namespace {

std::string shape_str(const Tensor& t) {
  std::ostringstream os;
  os << t.rows() << "x" << t.cols();
  return os.str();
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

Tape& tape_of(Var a) {
  if (a.tape() == nullptr) throw std::logic_error("operation on an unbound Var");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  if (a.tape() != b.tape()) throw std::logic_error("operands recorded on different tapes");
  return tape_of(a);
}

}  // namespace

// ---------------------------------------------------------------------------
// ParamSet

void ParamSet::add(const std::string& name, Tensor value) {
  if (name.empty()) throw std::invalid_argument("parameter name must be nonempty");
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Parameter p;
  p.first_moment = Tensor::Zero(value.rows(), value.cols());
  p.second_moment = Tensor::Zero(value.rows(), value.cols());
  p.value = std::move(value);
  params_.emplace(name, std::move(p));
}

const Tensor& ParamSet::value(const std::string& name) const { return at(name).value; }
Tensor& ParamSet::value(const std::string& name) { return at(name).value; }

Parameter& ParamSet::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

const Parameter& ParamSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

std::vector<std::string> ParamSet::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

Index ParamSet::scalar_count() const {
  Index n = 0;
  for (const auto& [_, p] : params_) n += p.value.size();
  return n;
}

void ParamSet::merge(const ParamSet& other) {
  for (const auto& [name, p] : other.params_) {
    if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    params_.emplace(name, p);
  }
}

bool ParamSet::operator==(const ParamSet& other) const {
  if (steps_ != other.steps_ || params_.size() != other.params_.size()) return false;
  auto it = other.params_.begin();
  for (const auto& [name, p] : params_) {
    if (name != it->first) return false;
    const Parameter& q = it->second;
    if (p.value.rows() != q.value.rows() || p.value.cols() != q.value.cols()) return false;
    if (p.value != q.value || p.first_moment != q.first_moment || p.second_moment != q.second_moment) {
      return false;
    }
    ++it;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Optimizer

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw std::invalid_argument("beta1 must lie in [0,1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("beta2 must lie in [0,1)");
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
}

void optimizer_step(ParamSet& params, const GradientSet& grads, const OptimizerConfig& cfg) {
  cfg.validate();
  for (const auto& [name, g] : grads) {
    const Tensor& v = params.value(name);
    if (g.rows() != v.rows() || g.cols() != v.cols()) {
      throw ShapeError("gradient for " + name + " has shape " + shape_str(g) + ", parameter is " +
                       shape_str(v));
    }
  }
  const std::int64_t step = params.step_count() + 1;
  params.set_step_count(step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double correction2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (const auto& [name, g] : grads) {
    if (g.isZero(0.0)) continue;
    Parameter& p = params.at(name);
    p.first_moment = cfg.beta1 * p.first_moment + (1.0 - cfg.beta1) * g;
    p.second_moment = cfg.beta2 * p.second_moment + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    const Tensor m_hat = p.first_moment / correction1;
    const Tensor v_hat = p.second_moment / correction2;
    p.value.array() -= cfg.learning_rate * m_hat.array() / (v_hat.array().sqrt() + cfg.epsilon);
  }
}

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::value() const {
  if (tape_ == nullptr) throw std::logic_error("value of an unbound Var");
  return tape_->value(index_);
}

double Var::scalar() const {
  const Tensor& v = value();
  if (v.size() != 1) throw ShapeError("scalar() on a " + shape_str(v) + " node");
  return v(0, 0);
}

const Tensor& GradSink::value(std::size_t node) const { return tape_.value(node); }

bool GradSink::wants(std::size_t node) const { return tape_.needs_grad(node); }

void GradSink::add(std::size_t node, const Tensor& grad) {
  if (!tape_.needs_grad(node)) return;
  Tensor& slot = grads_[node];
  if (slot.size() == 0) {
    slot = grad;
  } else {
    slot += grad;
  }
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(const ParamSet& params, const std::string& name) {
  nodes_.push_back(Node{params.value(name), {}, name, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, Backprop backprop, std::initializer_list<Var> inputs) {
  bool needs = false;
  for (Var v : inputs) needs = needs || nodes_[v.index()].needs_grad;
  nodes_.push_back(Node{std::move(value), needs ? std::move(backprop) : Backprop{}, {}, needs});
  return Var(this, nodes_.size() - 1);
}

GradientSet Tape::gradients(Var loss) const {
  if (loss.tape() != this) throw std::logic_error("loss was not recorded on this tape");
  const Tensor& lv = value(loss.index());
  if (lv.size() != 1) throw ShapeError("backward needs a scalar loss, got " + shape_str(lv));

  std::vector<Tensor> grads(nodes_.size());
  grads[loss.index()] = Tensor::Ones(1, 1);
  GradSink sink(*this, grads);
  for (std::size_t i = loss.index() + 1; i-- > 0;) {
    if (grads[i].size() == 0 || !nodes_[i].needs_grad || !nodes_[i].backprop) continue;
    nodes_[i].backprop(grads[i], sink);
  }

  GradientSet out;
  for (std::size_t i = 0; i <= loss.index(); ++i) {
    const Node& n = nodes_[i];
    if (n.param_name.empty() || grads[i].size() == 0) continue;
    auto it = out.find(n.param_name);
    if (it == out.end()) {
      out.emplace(n.param_name, grads[i]);
    } else {
      it->second += grads[i];
    }
  }
  return out;
}

GradientSet Tape::backward(Var loss, const ParamSet& params) const {
  GradientSet reached = gradients(loss);
  GradientSet out;
  for (const auto& [name, p] : params.entries()) {
    auto it = reached.find(name);
    out[name] = it != reached.end() ? std::move(it->second) : Tensor::Zero(p.value.rows(), p.value.cols());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Operations

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner extents differ " + shape_str(a.value()) + " * " + shape_str(b.value()));
  }
  const std::size_t ia = a.index(), ib = b.index();
  return t.record(a.value() * b.value(), [ia, ib](const Tensor& up, GradSink& s) {
    if (s.wants(ia)) s.add(ia, up * s.value(ib).transpose());
    if (s.wants(ib)) s.add(ib, s.value(ia).transpose() * up);
  }, {a, b});
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("add", a.value(), b.value());
  const std::size_t ia = a.index(), ib = b.index();
  return t.record(a.value() + b.value(), [ia, ib](const Tensor& up, GradSink& s) {
    s.add(ia, up);
    s.add(ib, up);
  }, {a, b});
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("sub", a.value(), b.value());
  const std::size_t ia = a.index(), ib = b.index();
  return t.record(a.value() - b.value(), [ia, ib](const Tensor& up, GradSink& s) {
    s.add(ia, up);
    s.add(ib, -up);
  }, {a, b});
}

Var hadamard(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("hadamard", a.value(), b.value());
  const std::size_t ia = a.index(), ib = b.index();
  return t.record(a.value().cwiseProduct(b.value()), [ia, ib](const Tensor& up, GradSink& s) {
    s.add(ia, up.cwiseProduct(s.value(ib)));
    s.add(ib, up.cwiseProduct(s.value(ia)));
  }, {a, b});
}

Var scale(Var a, double factor) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.index();
  return t.record(a.value() * factor, [ia, factor](const Tensor& up, GradSink& s) { s.add(ia, up * factor); }, {a});
}

Var add_scalar(Var a, double offset) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.index();
  return t.record((a.value().array() + offset).matrix(), [ia](const Tensor& up, GradSink& s) { s.add(ia, up); }, {a});
}

Var add_row_bias(Var x, Var bias) {
  Tape& t = tape_of(x, bias);
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw ShapeError("add_row_bias: bias " + shape_str(bias.value()) + " does not fit " + shape_str(x.value()));
  }
  const std::size_t ix = x.index(), ib = bias.index();
  Tensor out = x.value().rowwise() + bias.value().row(0);
  return t.record(std::move(out), [ix, ib](const Tensor& up, GradSink& s) {
    s.add(ix, up);
    s.add(ib, up.colwise().sum());
  }, {x, bias});
}

Var tanh(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.index();
  Tensor out = a.value().array().tanh().matrix();
  Tensor y = out;
  return t.record(std::move(out), [ia, y = std::move(y)](const Tensor& up, GradSink& s) {
    s.add(ia, (up.array() * (1.0 - y.array().square())).matrix());
  }, {a});
}

Var relu(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.index();
  return t.record(a.value().cwiseMax(0.0), [ia](const Tensor& up, GradSink& s) {
    const Tensor& x = s.value(ia);
    s.add(ia, (x.array() > 0.0).select(up.array(), 0.0).matrix());
  }, {a});
}

Var square(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.index();
  return t.record(a.value().array().square().matrix(), [ia](const Tensor& up, GradSink& s) {
    s.add(ia, (2.0 * up.array() * s.value(ia).array()).matrix());
  }, {a});
}

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double log_sigmoid(double x) { return -softplus(-x); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Var log_sigmoid(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.index();
  Tensor out = a.value().unaryExpr([](double x) { return log_sigmoid(x); });
  return t.record(std::move(out), [ia](const Tensor& up, GradSink& s) {
    // d/dx log(sigmoid(x)) = sigmoid(-x)
    s.add(ia, up.cwiseProduct(s.value(ia).unaryExpr([](double x) { return sigmoid(-x); })));
  }, {a});
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.index();
  const Index r = a.rows(), c = a.cols();
  Tensor out(1, 1);
  out(0, 0) = a.value().sum();
  return t.record(std::move(out), [ia, r, c](const Tensor& up, GradSink& s) {
    s.add(ia, Tensor::Constant(r, c, up(0, 0)));
  }, {a});
}

Var mean(Var a) {
  if (a.value().size() == 0) throw ShapeError("mean of an empty node");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var row_dot(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("row_dot", a.value(), b.value());
  const std::size_t ia = a.index(), ib = b.index();
  Tensor out = a.value().cwiseProduct(b.value()).rowwise().sum();
  return t.record(std::move(out), [ia, ib](const Tensor& up, GradSink& s) {
    s.add(ia, (s.value(ib).array().colwise() * up.col(0).array()).matrix());
    s.add(ib, (s.value(ia).array().colwise() * up.col(0).array()).matrix());
  }, {a, b});
}

Var row_norm(Var a) {
  Tape& t = tape_of(a);
  const std::size_t ia = a.index();
  Tensor out = a.value().rowwise().norm();
  Tensor norms = out;
  return t.record(std::move(out), [ia, norms = std::move(norms)](const Tensor& up, GradSink& s) {
    const Tensor& x = s.value(ia);
    Tensor g = Tensor::Zero(x.rows(), x.cols());
    for (Index r = 0; r < x.rows(); ++r) {
      if (norms(r, 0) > 0.0) g.row(r) = x.row(r) * (up(r, 0) / norms(r, 0));
    }
    s.add(ia, g);
  }, {a});
}

Var mean_rows(Var x, const std::vector<std::vector<Index>>& groups) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  Tensor out(static_cast<Index>(groups.size()), xv.cols());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) throw ShapeError("mean_rows: group " + std::to_string(g) + " is empty");
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(xv.cols());
    for (Index r : groups[g]) {
      if (r < 0 || r >= xv.rows()) throw ShapeError("mean_rows: row index out of range");
      acc += xv.row(r);
    }
    out.row(static_cast<Index>(g)) = acc / static_cast<double>(groups[g].size());
  }
  const std::size_t ix = x.index();
  const Index rows = xv.rows(), cols = xv.cols();
  return t.record(std::move(out), [ix, rows, cols, groups](const Tensor& up, GradSink& s) {
    Tensor g = Tensor::Zero(rows, cols);
    for (std::size_t k = 0; k < groups.size(); ++k) {
      const double w = 1.0 / static_cast<double>(groups[k].size());
      for (Index r : groups[k]) g.row(r) += w * up.row(static_cast<Index>(k));
    }
    s.add(ix, g);
  }, {x});
}

Var gather_rows(Var x, std::span<const Index> indices) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  Tensor out(static_cast<Index>(indices.size()), xv.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= xv.rows()) throw ShapeError("gather_rows: row index out of range");
    out.row(static_cast<Index>(i)) = xv.row(indices[i]);
  }
  const std::size_t ix = x.index();
  const Index rows = xv.rows(), cols = xv.cols();
  std::vector<Index> idx(indices.begin(), indices.end());
  return t.record(std::move(out), [ix, rows, cols, idx = std::move(idx)](const Tensor& up, GradSink& s) {
    Tensor g = Tensor::Zero(rows, cols);
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += up.row(static_cast<Index>(i));
    s.add(ix, g);
  }, {x});
}

// ---------------------------------------------------------------------------
// MLP

std::string MlpSpec::weight_name(std::size_t layer) const {
  return prefix + "." + std::to_string(layer) + ".weight";
}

std::string MlpSpec::bias_name(std::size_t layer) const {
  return prefix + "." + std::to_string(layer) + ".bias";
}

void init_mlp(ParamSet& params, const MlpSpec& spec, Rng& rng) {
  if (spec.layers.size() < 2) throw std::invalid_argument("MLP needs at least input and output widths");
  for (std::size_t k = 0; k < spec.layer_count(); ++k) {
    const Index in = spec.layers[k], out = spec.layers[k + 1];
    if (in <= 0 || out <= 0) throw std::invalid_argument("MLP layer widths must be positive");
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Tensor w(in, out);
    for (Index c = 0; c < out; ++c)
      for (Index r = 0; r < in; ++r) w(r, c) = dist(rng);
    params.add(spec.weight_name(k), std::move(w));
    params.add(spec.bias_name(k), Tensor::Zero(1, out));
  }
}

void check_mlp(const ParamSet& params, const MlpSpec& spec, Index input_cols) {
  if (spec.layers.size() < 2) throw ShapeError(spec.prefix + ": architecture needs at least two widths");
  if (input_cols != spec.layers[0]) {
    throw ShapeError(spec.prefix + " layer 0: input has " + std::to_string(input_cols) + " columns, expected " +
                     std::to_string(spec.layers[0]));
  }
  for (std::size_t k = 0; k < spec.layer_count(); ++k) {
    const std::string wn = spec.weight_name(k), bn = spec.bias_name(k);
    if (!params.contains(wn) || !params.contains(bn)) {
      throw ShapeError(spec.prefix + " layer " + std::to_string(k) + ": missing parameters");
    }
    const Tensor& w = params.value(wn);
    const Tensor& b = params.value(bn);
    if (w.rows() != spec.layers[k] || w.cols() != spec.layers[k + 1] || b.rows() != 1 ||
        b.cols() != spec.layers[k + 1]) {
      throw ShapeError(spec.prefix + " layer " + std::to_string(k) + ": weight " + shape_str(w) + " / bias " +
                       shape_str(b) + " inconsistent with widths " + std::to_string(spec.layers[k]) + "->" +
                       std::to_string(spec.layers[k + 1]));
    }
  }
}

Var mlp_forward(Tape& tape, const ParamSet& params, Var input, const MlpSpec& spec) {
  check_mlp(params, spec, input.cols());
  Var h = input;
  for (std::size_t k = 0; k < spec.layer_count(); ++k) {
    h = add_row_bias(matmul(h, tape.param(params, spec.weight_name(k))), tape.param(params, spec.bias_name(k)));
    if (k + 1 < spec.layer_count()) h = tanh(h);
  }
  return h;
}

Tensor mlp_forward(const ParamSet& params, const Tensor& input, const MlpSpec& spec) {
  check_mlp(params, spec, input.cols());
  Tensor h = input;
  for (std::size_t k = 0; k < spec.layer_count(); ++k) {
    Tensor z = h * params.value(spec.weight_name(k));
    z.rowwise() += params.value(spec.bias_name(k)).row(0);
    if (k + 1 < spec.layer_count()) z = z.array().tanh().matrix();
    h = std::move(z);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Finite differences

FiniteDiffReport finite_diff_check(const LossBuilder& loss, const ParamSet& params, double h, double tolerance) {
  if (!(h > 0.0)) throw std::invalid_argument("finite difference step must be positive");
  constexpr double kFloor = 1e-6;
  FiniteDiffReport report;

  GradientSet analytic;
  {
    Tape tape;
    Var l = loss(tape, params);
    if (!std::isfinite(l.scalar())) {
      report.failure = "loss is non-finite at the base point";
      return report;
    }
    analytic = tape.backward(l, params);
  }

  auto evaluate = [&](const ParamSet& p) {
    Tape tape;
    return loss(tape, p).scalar();
  };

  ParamSet probe = params;
  for (const auto& [name, p] : params.entries()) {
    FiniteDiffEntry entry{name, 0.0, 0};
    Tensor& v = probe.value(name);
    const Tensor& g = analytic.at(name);
    for (Index i = 0; i < v.size(); ++i) {
      const double original = v.data()[i];
      v.data()[i] = original + h;
      const double plus = evaluate(probe);
      v.data()[i] = original - h;
      const double minus = evaluate(probe);
      v.data()[i] = original;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        report.failure = "non-finite loss when perturbing " + name + "[" + std::to_string(i) + "]";
        report.entries.push_back(entry);
        return report;
      }
      const double numeric = (plus - minus) / (2.0 * h);
      const double a = g.data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), kFloor});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > entry.max_relative_error) {
        entry.max_relative_error = rel;
        entry.worst_index = i;
      }
    }
    report.max_relative_error = std::max(report.max_relative_error, entry.max_relative_error);
    report.entries.push_back(entry);
  }
  report.passed = report.max_relative_error < tolerance;
  return report;
}

}  // namespace langpref::diff
