#include "casher/nnet.hpp"

#include <cmath>
#include <random>

#include "casher/errors.hpp"

namespace casher {

std::size_t MlpSpec::param_count() const {
  std::size_t n = 0;
  for (int l = 0; l < num_layers(); ++l)
    n += static_cast<std::size_t>(layer_inputs(l) + 1) * layer_outputs(l);
  return n;
}

void MlpSpec::validate() const {
  require(input_dim >= 1 && output_dim >= 1, "MlpSpec: dims must be >= 1");
  for (int h : hidden) require(h >= 1, "MlpSpec: hidden widths must be >= 1");
}

ParamVector::ParamVector(const MlpSpec& spec) : spec_(spec) {
  spec_.validate();
  std::size_t offset = 0;
  for (int l = 0; l < spec_.num_layers(); ++l) {
    Slice s;
    s.weight_offset = offset;
    offset += static_cast<std::size_t>(spec_.layer_inputs(l)) *
              spec_.layer_outputs(l);
    s.bias_offset = offset;
    offset += spec_.layer_outputs(l);
    layout_.push_back(s);
  }
  data_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(offset));
}

Eigen::Map<RowMatrix> ParamVector::weight(int layer) {
  return {data_.data() + layout_[layer].weight_offset,
          spec_.layer_outputs(layer), spec_.layer_inputs(layer)};
}
Eigen::Map<const RowMatrix> ParamVector::weight(int layer) const {
  return {data_.data() + layout_[layer].weight_offset,
          spec_.layer_outputs(layer), spec_.layer_inputs(layer)};
}
Eigen::Map<Eigen::VectorXd> ParamVector::bias(int layer) {
  return {data_.data() + layout_[layer].bias_offset,
          spec_.layer_outputs(layer)};
}
Eigen::Map<const Eigen::VectorXd> ParamVector::bias(int layer) const {
  return {data_.data() + layout_[layer].bias_offset,
          spec_.layer_outputs(layer)};
}

ParamVector::Location ParamVector::locate(std::size_t flat) const {
  require(flat < size(), "ParamVector::locate: index out of range");
  for (int l = spec_.num_layers() - 1; l >= 0; --l) {
    if (flat >= layout_[l].bias_offset)
      return {l, true, flat - layout_[l].bias_offset};
    if (flat >= layout_[l].weight_offset)
      return {l, false, flat - layout_[l].weight_offset};
  }
  throw ContractViolation("ParamVector::locate: unreachable");
}

std::size_t ParamVector::flat_index(const Location& loc) const {
  require(loc.layer >= 0 && loc.layer < spec_.num_layers(),
          "ParamVector::flat_index: bad layer");
  const std::size_t limit =
      loc.is_bias ? static_cast<std::size_t>(spec_.layer_outputs(loc.layer))
                  : static_cast<std::size_t>(spec_.layer_outputs(loc.layer)) *
                        spec_.layer_inputs(loc.layer);
  require(loc.index < limit, "ParamVector::flat_index: bad index");
  return (loc.is_bias ? layout_[loc.layer].bias_offset
                      : layout_[loc.layer].weight_offset) +
         loc.index;
}

ParamVector init_params(const MlpSpec& spec, std::uint64_t seed,
                        double output_scale) {
  ParamVector p(spec);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int l = 0; l < spec.num_layers(); ++l) {
    const double scale =
        (l + 1 == spec.num_layers() ? output_scale : 1.0) /
        std::sqrt(static_cast<double>(spec.layer_inputs(l)));
    auto w = p.weight(l);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = scale * normal(rng);
  }
  return p;
}

Eigen::MatrixXd mlp_forward(const ParamVector& params,
                            const Eigen::Ref<const Eigen::MatrixXd>& input,
                            MlpTape* tape) {
  const MlpSpec& spec = params.spec();
  if (input.rows() != spec.input_dim)
    throw ContractViolation("mlp_forward: input has " +
                            std::to_string(input.rows()) + " rows, expected " +
                            std::to_string(spec.input_dim));
  if (tape) {
    tape->activations.clear();
    tape->activations.emplace_back(input);
  }
  Eigen::MatrixXd a = input;
  for (int l = 0; l < spec.num_layers(); ++l) {
    Eigen::MatrixXd z = params.weight(l) * a;
    z.colwise() += params.bias(l);
    if (l + 1 < spec.num_layers()) z = z.array().tanh();
    a = std::move(z);
    if (tape && l + 1 < spec.num_layers()) tape->activations.push_back(a);
  }
  return a;
}

std::vector<double> mlp_forward(const ParamVector& params,
                                std::span<const double> input) {
  Eigen::Map<const Eigen::MatrixXd> x(input.data(),
                                      static_cast<Eigen::Index>(input.size()),
                                      1);
  Eigen::MatrixXd out = mlp_forward(params, x);
  return {out.data(), out.data() + out.size()};
}

void mlp_backward(const ParamVector& params, const MlpTape& tape,
                  const Eigen::Ref<const Eigen::MatrixXd>& d_output,
                  ParamVector& grad, Eigen::MatrixXd* d_input) {
  const MlpSpec& spec = params.spec();
  require(grad.spec() == spec, "mlp_backward: gradient layout mismatch");
  require(static_cast<int>(tape.activations.size()) == spec.num_layers(),
          "mlp_backward: tape does not match network");
  Eigen::MatrixXd dz = d_output;
  for (int l = spec.num_layers() - 1; l >= 0; --l) {
    const Eigen::MatrixXd& a_in = tape.activations[l];
    grad.weight(l).noalias() += dz * a_in.transpose();
    grad.bias(l) += dz.rowwise().sum();
    if (l == 0 && d_input == nullptr) break;
    Eigen::MatrixXd da = params.weight(l).transpose() * dz;
    if (l == 0) {
      *d_input = std::move(da);
      break;
    }
    dz = da.array() * (1.0 - a_in.array().square());
  }
}

std::vector<double> action_distribution(std::span<const double> logits) {
  double max_logit = -INFINITY;
  for (double z : logits) {
    if (!std::isfinite(z))
      throw NumericalError("action_distribution: non-finite logit");
    max_logit = std::max(max_logit, z);
  }
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - max_logit);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

void softmax_columns(const Eigen::Ref<const Eigen::MatrixXd>& logits,
                     Eigen::MatrixXd& probabilities,
                     Eigen::MatrixXd& log_probabilities) {
  if (!logits.allFinite())
    throw NumericalError("softmax_columns: non-finite logits");
  const Eigen::RowVectorXd max_logit = logits.colwise().maxCoeff();
  Eigen::MatrixXd shifted = logits.rowwise() - max_logit;
  probabilities = shifted.array().exp();
  const Eigen::RowVectorXd total = probabilities.colwise().sum();
  log_probabilities =
      shifted.rowwise() - total.array().log().matrix();
  probabilities.array().rowwise() /= total.array();
}

double log_prob(std::span<const double> probabilities, int action) {
  if (action < 0 || static_cast<std::size_t>(action) >= probabilities.size())
    throw ContractViolation("log_prob: action out of range");
  const double p = probabilities[static_cast<std::size_t>(action)];
  if (!std::isfinite(p) || p < 0.0)
    throw NumericalError("log_prob: invalid probability");
  return std::log(std::max(p, kProbabilityFloor));
}

void adam_step(ParamVector& params, const ParamVector& grad, AdamState& state,
               double lr, const AdamConfig& cfg) {
  require(params.size() == grad.size(), "adam_step: length mismatch");
  const Eigen::Index n = static_cast<Eigen::Index>(params.size());
  if (state.m.size() != n) {
    state.m = Eigen::VectorXd::Zero(n);
    state.v = Eigen::VectorXd::Zero(n);
  }
  ++state.step;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad.values();
  state.v = cfg.beta2 * state.v +
            (1.0 - cfg.beta2) * grad.values().array().square().matrix();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  params.values().array() -=
      lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + cfg.eps);
}

double global_norm(std::span<const ParamVector* const> grads) {
  double sq = 0.0;
  for (const ParamVector* g : grads) sq += g->values().squaredNorm();
  return std::sqrt(sq);
}

double clip_gradients(std::span<ParamVector* const> grads, double max_norm) {
  require(max_norm > 0.0, "clip_gradients: max_norm must be > 0");
  double sq = 0.0;
  for (const ParamVector* g : grads) sq += g->values().squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (ParamVector* g : grads) g->values() *= scale;
  }
  return norm;
}

ParamVector clip_gradients(const ParamVector& grad, double max_norm) {
  ParamVector out = grad;
  ParamVector* ptr = &out;
  clip_gradients(std::span<ParamVector* const>(&ptr, 1), max_norm);
  return out;
}

double finite_diff_check(const FlatLoss& loss, const Eigen::VectorXd& theta,
                         double h, const FiniteDiffOptions& options) {
  require(h > 0.0, "finite_diff_check: h must be > 0");
  require(options.stride >= 1, "finite_diff_check: stride must be >= 1");
  Eigen::VectorXd analytic = Eigen::VectorXd::Zero(theta.size());
  loss(theta, &analytic);
  Eigen::VectorXd probe = theta;
  double worst = 0.0;
  for (Eigen::Index i = static_cast<Eigen::Index>(options.offset);
       i < theta.size(); i += static_cast<Eigen::Index>(options.stride)) {
    probe[i] = theta[i] + h;
    const double up = loss(probe, nullptr);
    probe[i] = theta[i] - h;
    const double down = loss(probe, nullptr);
    probe[i] = theta[i];
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic[i] - numeric) /
                                (std::abs(numeric) + 1e-8));
  }
  return worst;
}

}  // namespace casher
