#pragma once

// Multilayer perceptrons with hand-written reverse-mode gradients.
//
// Batches are column-major: an input batch is (input_dim x batch) and every
// layer computes tanh(W a + b), except the last which is affine. Weights are
// stored row-major (out x in) inside one flat parameter vector.

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace casher {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct MlpSpec {
  int input_dim = 1;
  std::vector<int> hidden;
  int output_dim = 1;

  int num_layers() const { return static_cast<int>(hidden.size()) + 1; }
  int layer_inputs(int layer) const {
    return layer == 0 ? input_dim : hidden[layer - 1];
  }
  int layer_outputs(int layer) const {
    return layer + 1 == num_layers() ? output_dim : hidden[layer];
  }
  std::size_t param_count() const;
  void validate() const;
  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

class ParamVector {
 public:
  struct Location {
    int layer = 0;
    bool is_bias = false;
    std::size_t index = 0;  // row-major within the weight, or bias entry
    friend bool operator==(const Location&, const Location&) = default;
  };

  ParamVector() = default;
  explicit ParamVector(const MlpSpec& spec);  // zero-initialised

  const MlpSpec& spec() const { return spec_; }
  std::size_t size() const { return static_cast<std::size_t>(data_.size()); }

  Eigen::VectorXd& values() { return data_; }
  const Eigen::VectorXd& values() const { return data_; }

  Eigen::Map<RowMatrix> weight(int layer);
  Eigen::Map<const RowMatrix> weight(int layer) const;
  Eigen::Map<Eigen::VectorXd> bias(int layer);
  Eigen::Map<const Eigen::VectorXd> bias(int layer) const;

  Location locate(std::size_t flat_index) const;
  std::size_t flat_index(const Location& loc) const;

  void set_zero() { data_.setZero(); }
  friend bool operator==(const ParamVector& a, const ParamVector& b) {
    return a.spec_ == b.spec_ && a.data_.size() == b.data_.size() &&
           (a.data_.array() == b.data_.array()).all();
  }

 private:
  struct Slice {
    std::size_t weight_offset = 0;
    std::size_t bias_offset = 0;
  };
  MlpSpec spec_;
  std::vector<Slice> layout_;
  Eigen::VectorXd data_;
};

// Scaled-normal initialisation: weights ~ N(0, 1/fan_in), the last layer
// multiplied by `output_scale`; biases zero.
ParamVector init_params(const MlpSpec& spec, std::uint64_t seed,
                        double output_scale = 1.0);

// Activations recorded by a forward pass; activations[0] is the input.
struct MlpTape {
  std::vector<Eigen::MatrixXd> activations;
};

Eigen::MatrixXd mlp_forward(const ParamVector& params,
                            const Eigen::Ref<const Eigen::MatrixXd>& input,
                            MlpTape* tape = nullptr);

std::vector<double> mlp_forward(const ParamVector& params,
                                std::span<const double> input);

// Accumulates dLoss/dparams into `grad` given dLoss/doutput for the batch
// recorded in `tape`. Optionally returns dLoss/dinput.
void mlp_backward(const ParamVector& params, const MlpTape& tape,
                  const Eigen::Ref<const Eigen::MatrixXd>& d_output,
                  ParamVector& grad, Eigen::MatrixXd* d_input = nullptr);

// Numerically stable softmax. Throws NumericalError on non-finite logits.
std::vector<double> action_distribution(std::span<const double> logits);

// Column-wise softmax and log-softmax of a logits batch.
void softmax_columns(const Eigen::Ref<const Eigen::MatrixXd>& logits,
                     Eigen::MatrixXd& probabilities,
                     Eigen::MatrixXd& log_probabilities);

inline constexpr double kProbabilityFloor = 1e-12;

// log of the selected probability, floored at kProbabilityFloor.
double log_prob(std::span<const double> probabilities, int action);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long step = 0;
};

void adam_step(ParamVector& params, const ParamVector& grad, AdamState& state,
               double lr, const AdamConfig& cfg = {});

double global_norm(std::span<const ParamVector* const> grads);

// Scales all gradients in place when their joint L2 norm exceeds max_norm.
// Returns the norm before clipping.
double clip_gradients(std::span<ParamVector* const> grads, double max_norm);
ParamVector clip_gradients(const ParamVector& grad, double max_norm);

// Loss over a flat parameter vector. When `grad` is non-null the callee
// writes the analytic gradient into it.
using FlatLoss =
    std::function<double(const Eigen::VectorXd& theta, Eigen::VectorXd* grad)>;

struct FiniteDiffOptions {
  // Check every `stride`-th coordinate, starting at `offset`.
  std::size_t stride = 1;
  std::size_t offset = 0;
};

// Central differences per coordinate; returns the maximum over checked
// coordinates of |analytic - numeric| / (|numeric| + 1e-8).
double finite_diff_check(const FlatLoss& loss, const Eigen::VectorXd& theta,
                         double h, const FiniteDiffOptions& options = {});

}  // namespace casher
