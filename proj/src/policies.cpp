#include "casher/policies.hpp"

#include <cmath>

#include "casher/errors.hpp"

namespace casher {

namespace {

constexpr double kActorOutputScale = 0.01;

std::array<double, kNumActions> to_array(const std::vector<double>& v) {
  std::array<double, kNumActions> out{};
  std::copy_n(v.begin(), kNumActions, out.begin());
  return out;
}

}  // namespace

StatePolicy StatePolicy::create(const std::vector<int>& hidden,
                                std::uint64_t seed) {
  StatePolicy p;
  p.actor = init_params({kStateFeatureDim, hidden, kNumActions},
                        derive_seed(seed, {1}), kActorOutputScale);
  p.critic = init_params({kStateFeatureDim, hidden, 1}, derive_seed(seed, {2}));
  return p;
}

std::array<double, kNumActions> StatePolicy::probabilities(
    const EnvSpec& spec, const WorldState& s) const {
  const auto f = state_features(spec, s);
  return to_array(action_distribution(mlp_forward(actor, f)));
}

double StatePolicy::value(const EnvSpec& spec, const WorldState& s) const {
  const auto f = state_features(spec, s);
  return mlp_forward(critic, f)[0];
}

GeneralistPolicy GeneralistPolicy::create(
    int embedding_dim, const std::vector<int>& encoder_hidden,
    const std::vector<int>& head_hidden, std::uint64_t seed) {
  GeneralistPolicy p;
  p.encoder = init_params({kObsCells, encoder_hidden, embedding_dim},
                          derive_seed(seed, {1}));
  p.head = init_params({embedding_dim + kRobotStateDim, head_hidden,
                        kNumActions},
                       derive_seed(seed, {2}), kActorOutputScale);
  return p;
}

namespace {

Eigen::MatrixXd head_input(const Eigen::MatrixXd& embedding,
                           const Eigen::Ref<const Eigen::MatrixXd>& obs) {
  Eigen::MatrixXd in(embedding.rows() + kRobotStateDim, obs.cols());
  in.topRows(embedding.rows()) = embedding;
  in.bottomRows(kRobotStateDim) = obs.bottomRows(kRobotStateDim);
  return in;
}

}  // namespace

Eigen::MatrixXd GeneralistPolicy::logits(
    const Eigen::Ref<const Eigen::MatrixXd>& observations) const {
  require(observations.rows() == kObsDim,
          "GeneralistPolicy: observation has wrong dimension");
  const Eigen::MatrixXd embedding =
      mlp_forward(encoder, observations.topRows(kObsCells));
  return mlp_forward(head, head_input(embedding, observations));
}

std::array<double, kNumActions> GeneralistPolicy::probabilities(
    std::span<const double> observation) const {
  Eigen::Map<const Eigen::MatrixXd> x(
      observation.data(), static_cast<Eigen::Index>(observation.size()), 1);
  const Eigen::MatrixXd z = logits(x);
  return to_array(action_distribution({z.data(), kNumActions}));
}

double generalist_nll(const GeneralistPolicy& policy,
                      const Eigen::Ref<const Eigen::MatrixXd>& observations,
                      std::span<const int> actions,
                      GeneralistGradient* grad) {
  require(observations.rows() == kObsDim,
          "generalist_nll: observation has wrong dimension");
  require(static_cast<std::size_t>(observations.cols()) == actions.size(),
          "generalist_nll: batch size mismatch");
  const Eigen::Index n = observations.cols();
  if (n == 0) return 0.0;
  MlpTape enc_tape, head_tape;
  const Eigen::MatrixXd embedding = mlp_forward(
      policy.encoder, observations.topRows(kObsCells), grad ? &enc_tape : nullptr);
  const Eigen::MatrixXd z = mlp_forward(
      policy.head, head_input(embedding, observations),
      grad ? &head_tape : nullptr);
  Eigen::MatrixXd probs, logp;
  softmax_columns(z, probs, logp);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int a = actions[static_cast<std::size_t>(i)];
    if (a < 0 || a >= kNumActions)
      throw ContractViolation("generalist_nll: action out of range");
    loss -= logp(a, i);
  }
  loss /= static_cast<double>(n);
  if (!std::isfinite(loss)) throw NumericalError("generalist_nll: NaN loss");
  if (grad) {
    if (!(grad->head.spec() == policy.head.spec())) {
      grad->head = ParamVector(policy.head.spec());
      grad->encoder = ParamVector(policy.encoder.spec());
    }
    Eigen::MatrixXd dz = probs;
    for (Eigen::Index i = 0; i < n; ++i)
      dz(actions[static_cast<std::size_t>(i)], i) -= 1.0;
    dz /= static_cast<double>(n);
    Eigen::MatrixXd d_head_in;
    mlp_backward(policy.head, head_tape, dz, grad->head,
                 policy.freeze_encoder ? nullptr : &d_head_in);
    if (!policy.freeze_encoder)
      mlp_backward(policy.encoder, enc_tape,
                   d_head_in.topRows(policy.embedding_dim()), grad->encoder);
  }
  return loss;
}

int StatePolicyActor::act(const EnvSpec& spec, const WorldState& state,
                          Rng& rng) {
  const auto p = policy_->probabilities(spec, state);
  return select_action(p, mode_, rng);
}

void GeneralistActor::begin_episode(const EnvSpec& spec, const WorldState&,
                                    std::uint64_t) {
  CachedRenderer& cached = renderers_[spec.env_id];
  if (!cached.renderer || !(cached.spec == spec)) {
    cached.spec = spec;
    cached.renderer = std::make_shared<const ObservationRenderer>(spec);
  }
  current_ = cached.renderer.get();
}

int GeneralistActor::act(const EnvSpec& spec, const WorldState& state,
                         Rng& rng) {
  if (current_ == nullptr) begin_episode(spec, state, 0);
  std::array<double, kObsDim> obs;
  current_->render_into(state, std::nullopt, obs.data());
  const auto p = policy_->probabilities(obs);
  return select_action(p, mode_, rng);
}

}  // namespace casher
