#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vtlab/checkpoint.hpp"
#include "vtlab/dataset_io.hpp"
#include "vtlab/domain.hpp"
#include "vtlab/io_util.hpp"
#include "vtlab/mlp.hpp"
#include "vtlab/optimizer.hpp"
#include "vtlab/rng.hpp"
#include "vtlab/trpo.hpp"
#include "vtlab/virtual_env.hpp"

namespace vtlab {

struct MailConfig {
  int iters = 300;         // I
  int trajectories = 64;   // J per iteration
  int step_cap = 200;      // episode truncation in M^c
  int disc_epochs = 2;       // minibatch passes over each iteration's rollouts
  int disc_minibatch = 256;
  double disc_lr = 3e-3;
  // entropy bonus on the customer head; keeps rare actions sampled so the
  // imitation signal can pull their probabilities back up
  double entropy_coef = 0.02;
  // adversarial iterates oscillate around the equilibrium; the shipped
  // policy is the exponential moving average of the joint parameters
  double ema_decay = 0.99;
  std::vector<int> hidden{64, 64};
  double init_std = 0.35;
  // customer-view episodes run ~10 steps, so the inner RL discounts over a
  // matching horizon rather than the platform policy's 0.99
  TrpoConfig trpo = [] {
    TrpoConfig t;
    t.gamma = 0.9;
    return t;
  }();
  int request_dim = kDefaultRequestDim;
  int action_dim = kDefaultActionDim;
  int max_index = kDefaultMaxIndex;

  void validate() const {
    if (trajectories < 1) throw std::invalid_argument("MailConfig: trajectories must be >= 1");
    if (step_cap < 1) throw std::invalid_argument("MailConfig: step_cap must be >= 1");
    trpo.validate();
  }
};

inline std::array<double, 3> softmax_logits3(const std::vector<double>& logits) {
  const double mx = std::max(logits[0], std::max(logits[1], logits[2]));
  std::array<double, 3> p{};
  double sum = 0.0;
  for (int i = 0; i < 3; ++i) sum += (p[i] = std::exp(logits[i] - mx));
  for (int i = 0; i < 3; ++i) p[i] /= sum;
  return p;
}

// R^c_theta: scores (s^c, a^c) pairs, trained toward 1 on generated data and
// 0 on expert data
class MailDiscriminator {
 public:
  MailDiscriminator() = default;

  MailDiscriminator(int request_dim, int action_dim, int max_index,
                    const std::vector<int>& hidden, Rng& rng)
      : max_index_(max_index) {
    std::vector<int> sizes{state_encoding_dim(request_dim, action_dim) + kCustomerActions};
    for (int h : hidden) sizes.push_back(h);
    sizes.push_back(1);
    net_ = Mlp::glorot(sizes, Hidden::kTanh, Output::kSigmoid, rng);
  }

  MailDiscriminator(Mlp net, int max_index) : net_(std::move(net)), max_index_(max_index) {}

  std::vector<double> encode_pair(const CustomerState& sc, CustomerAction a_c) const {
    std::vector<double> x(static_cast<std::size_t>(net_.in_dim()), 0.0);
    encode_state(sc, max_index_, std::span(x.data(), x.size() - kCustomerActions));
    x[x.size() - kCustomerActions + static_cast<int>(a_c)] = 1.0;
    return x;
  }

  double prob(std::span<const double> pair_enc) const { return net_.forward(pair_enc)[0]; }

  double prob(const CustomerState& sc, CustomerAction a_c) const {
    return prob(encode_pair(sc, a_c));
  }

  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }
  int max_index() const { return max_index_; }

 private:
  Mlp net_;
  int max_index_ = kDefaultMaxIndex;
};

// imitation reward -log D: high where the discriminator cannot call the pair
// generated
inline double imitation_reward(const MailDiscriminator& disc, const CustomerState& sc,
                               CustomerAction a_c) {
  const double d = std::clamp(disc.prob(sc, a_c), kProbFloor, 1.0 - kProbFloor);
  return -std::log(d);
}

inline double imitation_reward_from_prob(double d) {
  return -std::log(std::clamp(d, kProbFloor, 1.0 - kProbFloor));
}

// what the inner RL maximizes: the log odds of looking expert. Zero exactly
// at indistinguishability, so episode length is reward-neutral; the plain
// -log D form is strictly positive and teaches the customers never to buy
// (buying ends the episode and forfeits all future reward).
inline double mail_rl_reward(double d) {
  const double clamped = std::clamp(d, kProbFloor, 1.0 - kProbFloor);
  return std::log(1.0 - clamped) - std::log(clamped);
}

// pi^c_{kappa,sigma}: engine head producing Gaussian ranking weights and a
// customer head over {buy, turn, leave}; the two parameter sets are optimized
// as one concatenated vector
class JointPolicy {
 public:
  JointPolicy() = default;

  JointPolicy(const MailConfig& cfg, Rng& rng)
      : request_dim_(cfg.request_dim), action_dim_(cfg.action_dim), max_index_(cfg.max_index) {
    std::vector<int> engine_sizes{profile_encoding_dim(cfg.request_dim)};
    for (int h : cfg.hidden) engine_sizes.push_back(h);
    engine_sizes.push_back(cfg.action_dim);
    engine_mean_ = Mlp::glorot(engine_sizes, Hidden::kTanh, Output::kIdentity, rng);
    engine_log_std_.assign(cfg.action_dim, std::log(cfg.init_std));

    std::vector<int> customer_sizes{state_encoding_dim(cfg.request_dim, cfg.action_dim)};
    for (int h : cfg.hidden) customer_sizes.push_back(h);
    customer_sizes.push_back(kCustomerActions);
    customer_head_ = Mlp::glorot(customer_sizes, Hidden::kTanh, Output::kIdentity, rng);
  }

  EngineAction engine_sample(const CustomerProfile& s, Rng& rng) const {
    EngineAction a{engine_mean_.forward(encode_profile(s))};
    for (int i = 0; i < action_dim_; ++i)
      a.weights[i] += std::exp(engine_log_std_[i]) * rng.normal();
    return a;
  }

  EngineAction engine_mean_action(const CustomerProfile& s) const {
    return EngineAction{engine_mean_.forward(encode_profile(s))};
  }

  // the joint-policy factorization: evaluating at <s, pi(s), n> is exactly an
  // evaluation of the customer head on the composed encoding
  std::array<double, 3> customer_probs(const CustomerState& sc) const {
    return softmax_logits3(customer_head_.forward(encode_state(sc, max_index_)));
  }

  std::array<double, 3> joint_probs(const CustomerProfile& s, int page,
                                    const EngineAction& engine_action) const {
    return customer_probs(CustomerState{s, engine_action, page});
  }

  Mlp& engine_mean() { return engine_mean_; }
  const Mlp& engine_mean() const { return engine_mean_; }
  std::vector<double>& engine_log_std() { return engine_log_std_; }
  const std::vector<double>& engine_log_std() const { return engine_log_std_; }
  Mlp& customer_head() { return customer_head_; }
  const Mlp& customer_head() const { return customer_head_; }
  int request_dim() const { return request_dim_; }
  int action_dim() const { return action_dim_; }
  int max_index() const { return max_index_; }

  std::size_t param_count() const {
    return engine_mean_.param_count() + engine_log_std_.size() + customer_head_.param_count();
  }

  void params_to(std::span<double> out) const {
    const std::size_t pe = engine_mean_.param_count();
    engine_mean_.params_to(out.subspan(0, pe));
    for (std::size_t i = 0; i < engine_log_std_.size(); ++i) out[pe + i] = engine_log_std_[i];
    customer_head_.params_to(out.subspan(pe + engine_log_std_.size()));
  }

  void params_from(std::span<const double> in) {
    const std::size_t pe = engine_mean_.param_count();
    engine_mean_.params_from(in.subspan(0, pe));
    for (std::size_t i = 0; i < engine_log_std_.size(); ++i)
      engine_log_std_[i] = std::clamp(in[pe + i], kLogStdMin, kLogStdMax);
    customer_head_.params_from(in.subspan(pe + engine_log_std_.size()));
  }

  static constexpr double kLogStdMin = -3.0;  // sigma 0.05
  static constexpr double kLogStdMax = 0.0;   // sigma 1

  void set_from(const JointPolicy& other) {
    engine_mean_ = other.engine_mean_;
    engine_log_std_ = other.engine_log_std_;
    customer_head_ = other.customer_head_;
  }

 private:
  Mlp engine_mean_;
  std::vector<double> engine_log_std_;
  Mlp customer_head_;
  int request_dim_ = kDefaultRequestDim;
  int action_dim_ = kDefaultActionDim;
  int max_index_ = kDefaultMaxIndex;
};

// customer head shipped as the environment's behavior policy
class LearnedCustomerPolicy final : public CustomerPolicy {
 public:
  LearnedCustomerPolicy(Mlp head, int max_index)
      : head_(std::move(head)), max_index_(max_index) {}

  std::array<double, 3> action_probs(const CustomerState& sc) const override {
    return softmax_logits3(head_.forward(encode_state(sc, max_index_)));
  }

  const Mlp& head() const { return head_; }
  int max_index() const { return max_index_; }

 private:
  Mlp head_;
  int max_index_;
};

// engine head shipped as a standalone policy (sigma is usually discarded)
class JointEnginePolicy final : public EnginePolicy {
 public:
  JointEnginePolicy(Mlp mean, std::vector<double> log_std, bool deterministic)
      : mean_(std::move(mean)), log_std_(std::move(log_std)), deterministic_(deterministic) {}

  EngineAction act(const CustomerProfile& s, Rng& rng) const override {
    EngineAction a{mean_.forward(encode_profile(s))};
    if (!deterministic_)
      for (std::size_t i = 0; i < log_std_.size(); ++i)
        a.weights[i] += std::exp(log_std_[i]) * rng.normal();
    return a;
  }

 private:
  Mlp mean_;
  std::vector<double> log_std_;
  bool deterministic_;
};

// one recorded customer-view step
struct MailStep {
  std::vector<double> state_enc;    // encode(s^c)
  std::vector<double> profile_enc;  // encode(s), used on customer-start steps
  std::vector<double> engine_action;
  int customer_action = 0;
  bool engine_start = false;  // true when the engine action was drawn here
  double reward = 0.0;
};

struct MailTrajectory {
  std::vector<MailStep> steps;
  bool truncated = false;            // hit the step cap
  std::vector<double> final_state_enc;  // bootstrap state when truncated
};

// Alg. 2 lines 4-9: episodes under T^c_sigma; buy or page overflow ends the
// episode, leave chains a fresh customer into it
inline std::vector<MailTrajectory> mail_rollout(const JointPolicy& joint,
                                                const CustomerSampler& sampler, int count,
                                                std::uint64_t seed, int step_cap) {
  std::vector<MailTrajectory> out(count);
  for (int j = 0; j < count; ++j) {
    Rng rng = Rng::stream(seed, j);
    MailTrajectory& traj = out[j];
    CustomerProfile s = sampler.sample(rng);
    EngineAction a = joint.engine_sample(s, rng);
    int page = 0;
    bool start = true;
    bool terminal = false;
    for (int t = 0; t < step_cap; ++t) {
      const CustomerState sc{s, a, page};
      MailStep step;
      step.state_enc = encode_state(sc, joint.max_index());
      if (start) {
        step.profile_enc = encode_profile(s);
        step.engine_action = a.weights;
        step.engine_start = true;
      }
      const std::array<double, 3> probs = joint.customer_probs(sc);
      const auto a_c = static_cast<CustomerAction>(rng.categorical(probs));
      step.customer_action = static_cast<int>(a_c);
      traj.steps.push_back(std::move(step));
      start = false;

      if (a_c == CustomerAction::kBuy) {
        terminal = true;
        break;
      }
      if (a_c == CustomerAction::kTurnPage) {
        ++page;
        if (page > joint.max_index()) {  // overflow terminates
          terminal = true;
          break;
        }
      } else {
        // leave: the episode continues with a fresh customer and action
        s = sampler.sample(rng);
        a = joint.engine_sample(s, rng);
        page = 0;
        start = true;
      }
    }
    if (!terminal) {
      // hit the step cap; (s, a, page) already holds the interrupted state
      traj.truncated = true;
      traj.final_state_enc = encode_state(CustomerState{s, a, page}, joint.max_index());
    }
  }
  return out;
}

// expert (s^c, a^c) pairs; the logged engine action stands in for pi(s)
struct ExpertPairs {
  std::vector<std::vector<double>> pair_enc;  // discriminator inputs
};

inline ExpertPairs extract_expert_pairs(const Dataset& dataset, const MailDiscriminator& disc) {
  ExpertPairs out;
  for (const Session& s : dataset.sessions) {
    for (const StepRecord& r : s.steps)
      out.pair_enc.push_back(disc.encode_pair(
          CustomerState{s.profile, r.action, r.page},
          r.customer_action));
  }
  if (out.pair_enc.empty()) throw std::invalid_argument("extract_expert_pairs: empty dataset");
  return out;
}

// one ascent step on E_g[log D] + E_e[log(1 - D)]; returns the negated
// objective (a loss, minimized toward 0 when D separates)
inline double mail_discriminator_update(MailDiscriminator& disc,
                                        std::span<const std::vector<double>> generated,
                                        std::span<const std::vector<double>> expert,
                                        Optimizer& opt) {
  if (generated.empty() || expert.empty())
    throw std::invalid_argument("mail_discriminator_update: empty sample set");
  std::vector<double> grad(disc.net().param_count(), 0.0);
  Mlp::Trace trace;
  std::vector<double> out;
  double objective = 0.0;
  const double inv_g = 1.0 / static_cast<double>(generated.size());
  const double inv_e = 1.0 / static_cast<double>(expert.size());
  for (const std::vector<double>& x : generated) {
    disc.net().forward(x, out, trace);
    const double d = std::clamp(out[0], kProbFloor, 1.0 - kProbFloor);
    objective += std::log(d) * inv_g;
    disc.net().backward(trace, std::vector<double>{-inv_g / d}, grad);
  }
  for (const std::vector<double>& x : expert) {
    disc.net().forward(x, out, trace);
    const double d = std::clamp(out[0], kProbFloor, 1.0 - kProbFloor);
    objective += std::log(1.0 - d) * inv_e;
    disc.net().backward(trace, std::vector<double>{inv_e / (1.0 - d)}, grad);
  }
  const double loss = -objective;
  if (!std::isfinite(loss))
    throw std::runtime_error("mail_discriminator_update: non-finite loss");
  std::vector<double> params(disc.net().param_count());
  disc.net().params_to(params);
  opt.step(params, grad);
  disc.net().params_from(params);
  return loss;
}

// natural-gradient problem over the concatenated (kappa, sigma) parameters;
// engine terms participate only on customer-start steps
class JointTrpoProblem final : public TrpoProblem {
 public:
  JointTrpoProblem(JointPolicy& joint, std::vector<const MailStep*> steps,
                   std::vector<double> advantages, int fvp_stride = 1,
                   double entropy_coef = 0.0)
      : joint_(joint), steps_(std::move(steps)), adv_(std::move(advantages)),
        stride_(std::max(1, fvp_stride)), entropy_coef_(entropy_coef) {
    if (steps_.empty() || steps_.size() != adv_.size())
      throw std::invalid_argument("JointTrpoProblem: inconsistent batch");
    probs_old_.resize(steps_.size());
    lp_old_.resize(steps_.size());
    log_std_old_ = joint_.engine_log_std();
    mean_old_.resize(steps_.size());
    for (std::size_t i = 0; i < steps_.size(); ++i) {
      const MailStep& st = *steps_[i];
      probs_old_[i] = softmax_logits3(joint_.customer_head().forward(st.state_enc));
      double lp = std::log(std::max(probs_old_[i][st.customer_action], kProbFloor));
      if (st.engine_start) {
        mean_old_[i] = joint_.engine_mean().forward(st.profile_enc);
        lp += GaussianTrpoProblem::log_prob(mean_old_[i], log_std_old_, st.engine_action);
      }
      lp_old_[i] = lp;
    }
  }

  std::size_t dim() const override { return joint_.param_count(); }
  void get_params(std::span<double> out) const override { joint_.params_to(out); }
  void set_params(std::span<const double> in) override { joint_.params_from(in); }

  double surrogate() const override {
    double s = 0.0;
    for (std::size_t i = 0; i < steps_.size(); ++i) {
      s += std::exp(step_log_prob(i) - lp_old_[i]) * adv_[i];
      if (entropy_coef_ > 0.0) {
        const std::array<double, 3> p =
            softmax_logits3(joint_.customer_head().forward(steps_[i]->state_enc));
        for (int k = 0; k < kCustomerActions; ++k)
          s -= entropy_coef_ * p[k] * std::log(std::max(p[k], kProbFloor));
      }
    }
    return s / static_cast<double>(steps_.size());
  }

  void surrogate_grad(std::span<double> out) const override {
    for (double& v : out) v = 0.0;
    const std::size_t pe = joint_.engine_mean().param_count();
    const std::size_t ps = joint_.engine_log_std().size();
    const double inv_n = 1.0 / static_cast<double>(steps_.size());
    Mlp::Trace trace;
    std::vector<double> logits, mu;
    std::vector<double> cust_upstream(kCustomerActions);
    std::vector<double> eng_upstream(joint_.action_dim());
    for (std::size_t i = 0; i < steps_.size(); ++i) {
      const MailStep& st = *steps_[i];
      joint_.customer_head().forward(st.state_enc, logits, trace);
      const std::array<double, 3> p = softmax_logits3(logits);
      double entropy = 0.0;
      for (int k = 0; k < kCustomerActions; ++k)
        entropy -= p[k] * std::log(std::max(p[k], kProbFloor));
      for (int k = 0; k < kCustomerActions; ++k) {
        cust_upstream[k] = adv_[i] * inv_n * ((k == st.customer_action ? 1.0 : 0.0) - p[k]);
        if (entropy_coef_ > 0.0)
          cust_upstream[k] -= entropy_coef_ * inv_n * p[k] *
                              (std::log(std::max(p[k], kProbFloor)) + entropy);
      }
      joint_.customer_head().backward(trace, cust_upstream, out.subspan(pe + ps));
      if (st.engine_start) {
        joint_.engine_mean().forward(st.profile_enc, mu, trace);
        for (int j = 0; j < joint_.action_dim(); ++j) {
          const double sigma = std::exp(joint_.engine_log_std()[j]);
          const double z = (st.engine_action[j] - mu[j]) / sigma;
          eng_upstream[j] = adv_[i] * inv_n * z / sigma;
          out[pe + j] += adv_[i] * inv_n * (z * z - 1.0);
        }
        joint_.engine_mean().backward(trace, eng_upstream, out.subspan(0, pe));
      }
    }
  }

  double kl() const override {
    double total = 0.0;
    for (std::size_t i = 0; i < steps_.size(); ++i) {
      const MailStep& st = *steps_[i];
      const std::array<double, 3> p =
          softmax_logits3(joint_.customer_head().forward(st.state_enc));
      for (int k = 0; k < kCustomerActions; ++k) {
        const double po = std::max(probs_old_[i][k], kProbFloor);
        total += po * (std::log(po) - std::log(std::max(p[k], kProbFloor)));
      }
      if (st.engine_start) {
        const std::vector<double> mu = joint_.engine_mean().forward(st.profile_enc);
        for (int j = 0; j < joint_.action_dim(); ++j) {
          const double so = std::exp(log_std_old_[j]);
          const double sn = std::exp(joint_.engine_log_std()[j]);
          const double dmu = mean_old_[i][j] - mu[j];
          total += joint_.engine_log_std()[j] - log_std_old_[j] +
                   (so * so + dmu * dmu) / (2.0 * sn * sn) - 0.5;
        }
      }
    }
    return total / static_cast<double>(steps_.size());
  }

  void fisher_vp(std::span<const double> v, std::span<double> out) const override {
    for (double& x : out) x = 0.0;
    const std::size_t pe = joint_.engine_mean().param_count();
    const std::size_t ps = joint_.engine_log_std().size();
    std::size_t used = 0, starts = 0;
    Mlp::Trace trace;
    std::vector<double> logits, mu, tangent, weighted(kCustomerActions);
    std::vector<double> eng_weighted(joint_.action_dim());
    for (std::size_t i = 0; i < steps_.size(); i += stride_) {
      ++used;
      const MailStep& st = *steps_[i];
      joint_.customer_head().forward(st.state_enc, logits, trace);
      const std::array<double, 3> p = softmax_logits3(logits);
      joint_.customer_head().jvp(trace, v.subspan(pe + ps), tangent);
      double inner = 0.0;
      for (int k = 0; k < kCustomerActions; ++k) inner += p[k] * tangent[k];
      for (int k = 0; k < kCustomerActions; ++k) weighted[k] = p[k] * (tangent[k] - inner);
      joint_.customer_head().backward(trace, weighted, out.subspan(pe + ps));
      if (st.engine_start) {
        ++starts;
        joint_.engine_mean().forward(st.profile_enc, mu, trace);
        joint_.engine_mean().jvp(trace, v.subspan(0, pe), tangent);
        for (int j = 0; j < joint_.action_dim(); ++j) {
          const double sigma = std::exp(log_std_old_[j]);
          eng_weighted[j] = tangent[j] / (sigma * sigma);
        }
        joint_.engine_mean().backward(trace, eng_weighted, out.subspan(0, pe));
      }
    }
    const double inv = 1.0 / static_cast<double>(used);
    for (std::size_t i = 0; i < pe; ++i) out[i] *= inv;
    for (std::size_t i = pe + ps; i < out.size(); ++i) out[i] *= inv;
    const double start_frac = static_cast<double>(starts) / static_cast<double>(used);
    for (std::size_t j = 0; j < ps; ++j) out[pe + j] = 2.0 * start_frac * v[pe + j];
  }

 private:
  double step_log_prob(std::size_t i) const {
    const MailStep& st = *steps_[i];
    const std::array<double, 3> p =
        softmax_logits3(joint_.customer_head().forward(st.state_enc));
    double lp = std::log(std::max(p[st.customer_action], kProbFloor));
    if (st.engine_start) {
      const std::vector<double> mu = joint_.engine_mean().forward(st.profile_enc);
      lp += GaussianTrpoProblem::log_prob(mu, joint_.engine_log_std(), st.engine_action);
    }
    return lp;
  }

  JointPolicy& joint_;
  std::vector<const MailStep*> steps_;
  std::vector<double> adv_;
  std::vector<std::array<double, 3>> probs_old_;
  std::vector<std::vector<double>> mean_old_;
  std::vector<double> lp_old_;
  std::vector<double> log_std_old_;
  int stride_;
  double entropy_coef_;
};

struct MailCurvePoint {
  int iter = 0;
  double disc_loss = 0.0;
  double mean_imitation_reward = 0.0;
  double policy_kl = 0.0;
};

struct MailResult {
  JointPolicy joint;
  MailDiscriminator discriminator;
  std::vector<MailCurvePoint> curve;

  std::shared_ptr<CustomerPolicy> customer_policy() const {
    return std::make_shared<LearnedCustomerPolicy>(joint.customer_head(), joint.max_index());
  }

  std::shared_ptr<EnginePolicy> engine_policy(bool deterministic = true) const {
    return std::make_shared<JointEnginePolicy>(joint.engine_mean(), joint.engine_log_std(),
                                               deterministic);
  }

  std::string curve_csv() const {
    CsvWriter csv("iter,disc_loss,mean_imitation_reward,policy_kl");
    for (const MailCurvePoint& p : curve)
      csv.row({std::to_string(p.iter), fmt_double(p.disc_loss),
               fmt_double(p.mean_imitation_reward), fmt_double(p.policy_kl)});
    return csv.str();
  }
};

// Alg. 2: alternate rollouts, discriminator ascent, and a TRPO step on the
// joint policy with -log D as the reward
inline MailResult train_mail(const Dataset& expert, std::shared_ptr<const CustomerSampler> sampler,
                             const MailConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (expert.sessions.empty()) throw std::invalid_argument("train_mail: empty expert dataset");
  if (!sampler) throw std::invalid_argument("train_mail: sampler required");

  Rng init_rng = Rng::stream(seed, 0);
  MailResult result;
  result.joint = JointPolicy(cfg, init_rng);
  result.discriminator =
      MailDiscriminator(cfg.request_dim, cfg.action_dim, cfg.max_index, cfg.hidden, init_rng);
  ValueNet value(state_encoding_dim(cfg.request_dim, cfg.action_dim), cfg.hidden, init_rng,
                 cfg.trpo.value_lr);
  Optimizer disc_opt = Optimizer::adam(result.discriminator.net().param_count(), cfg.disc_lr);

  const ExpertPairs expert_pairs = extract_expert_pairs(expert, result.discriminator);
  Rng sample_rng = Rng::stream(seed, 1);

  std::vector<double> ema(result.joint.param_count());
  result.joint.params_to(ema);

  const auto pair_from_step = [&](const MailStep& st) {
    std::vector<double> pair(st.state_enc.size() + kCustomerActions, 0.0);
    std::copy(st.state_enc.begin(), st.state_enc.end(), pair.begin());
    pair[st.state_enc.size() + st.customer_action] = 1.0;
    return pair;
  };

  for (int iter = 0; iter < cfg.iters; ++iter) {
    const std::vector<MailTrajectory> trajs =
        mail_rollout(result.joint, *sampler, cfg.trajectories,
                     splitmix64(seed ^ (0x11d7ull + iter)), cfg.step_cap);

    std::vector<std::vector<double>> generated;
    for (const MailTrajectory& traj : trajs)
      for (const MailStep& st : traj.steps) generated.push_back(pair_from_step(st));

    MailCurvePoint point;
    point.iter = iter;
    std::vector<std::size_t> order(generated.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (int epoch = 0; epoch < cfg.disc_epochs; ++epoch) {
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[sample_rng.uniform_int(static_cast<int>(i))]);
      for (std::size_t at = 0; at < order.size(); at += cfg.disc_minibatch) {
        const std::size_t end = std::min(order.size(), at + cfg.disc_minibatch);
        std::vector<std::vector<double>> gen_mb, expert_mb;
        gen_mb.reserve(end - at);
        expert_mb.reserve(end - at);
        for (std::size_t k = at; k < end; ++k) {
          gen_mb.push_back(generated[order[k]]);
          expert_mb.push_back(expert_pairs.pair_enc[sample_rng.uniform_int(
              static_cast<int>(expert_pairs.pair_enc.size()))]);
        }
        point.disc_loss =
            mail_discriminator_update(result.discriminator, gen_mb, expert_mb, disc_opt);
      }
    }

    // rewards from the freshly updated discriminator, GAE per trajectory
    std::vector<const MailStep*> steps;
    std::vector<double> advantages, all_returns;
    std::vector<std::vector<double>> value_inputs;
    double reward_sum = 0.0;
    for (const MailTrajectory& traj : trajs) {
      const std::size_t n = traj.steps.size();
      std::vector<double> rewards(n), values(n), adv, rets;
      std::vector<unsigned char> done(n, 0);
      for (std::size_t t = 0; t < n; ++t) {
        rewards[t] = mail_rl_reward(result.discriminator.prob(pair_from_step(traj.steps[t])));
        values[t] = value.predict(traj.steps[t].state_enc);
        reward_sum += rewards[t];
      }
      double bootstrap = 0.0;
      if (traj.truncated && !traj.final_state_enc.empty())
        bootstrap = value.predict(traj.final_state_enc);
      else
        done[n - 1] = 1;
      gae_advantages(rewards, values, done, bootstrap, cfg.trpo.gamma, cfg.trpo.lambda, adv,
                     rets);
      for (std::size_t t = 0; t < n; ++t) {
        steps.push_back(&traj.steps[t]);
        advantages.push_back(adv[t]);
        all_returns.push_back(rets[t]);
        value_inputs.push_back(traj.steps[t].state_enc);
      }
    }
    standardize(advantages);
    point.mean_imitation_reward = reward_sum / static_cast<double>(steps.size());

    Rng fit_rng = Rng::stream(seed, 50000 + static_cast<std::uint64_t>(iter));
    value.fit(value_inputs, all_returns, cfg.trpo.value_epochs, cfg.trpo.value_minibatch,
              fit_rng);

    JointTrpoProblem problem(result.joint, std::move(steps), std::move(advantages),
                             cfg.trpo.fvp_stride, cfg.entropy_coef);
    const TrpoDiagnostics diag = trpo_step(problem, cfg.trpo);
    point.policy_kl = diag.kl;
    result.curve.push_back(point);

    std::vector<double> current(result.joint.param_count());
    result.joint.params_to(current);
    for (std::size_t i = 0; i < ema.size(); ++i)
      ema[i] = cfg.ema_decay * ema[i] + (1.0 - cfg.ema_decay) * current[i];
  }
  if (cfg.iters > 0 && cfg.ema_decay > 0.0) result.joint.params_from(ema);
  return result;
}

inline void mail_to_checkpoint(const MailResult& result, ModelCheckpoint& out) {
  mlp_to_checkpoint(result.joint.customer_head(), "mail/customer", out);
  mlp_to_checkpoint(result.joint.engine_mean(), "mail/engine_mean", out);
  mlp_to_checkpoint(result.discriminator.net(), "mail/discriminator", out);
  out.emplace("mail/engine_log_std", Tensor({result.joint.engine_log_std().size()},
                                            result.joint.engine_log_std()));
  out.emplace("mail/meta",
              Tensor({3}, {static_cast<double>(result.joint.request_dim()),
                           static_cast<double>(result.joint.action_dim()),
                           static_cast<double>(result.joint.max_index())}));
}

}  // namespace vtlab
