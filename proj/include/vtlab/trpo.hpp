#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vtlab/domain.hpp"
#include "vtlab/io_util.hpp"
#include "vtlab/mlp.hpp"
#include "vtlab/optimizer.hpp"
#include "vtlab/rng.hpp"
#include "vtlab/virtual_env.hpp"

namespace vtlab {

struct TrpoConfig {
  double delta = 0.01;       // KL step bound
  int cg_iters = 10;
  double cg_damping = 0.1;
  double backtrack = 0.5;
  int max_backtracks = 10;
  double gamma = 0.99;
  double lambda = 0.95;      // GAE
  int batch_steps = 8192;
  int value_epochs = 5;
  int value_minibatch = 256;
  double value_lr = 1e-3;
  int fvp_stride = 8;        // Fisher-vector products on every k-th sample

  void validate() const {
    if (!(delta > 0.0)) throw std::invalid_argument("TrpoConfig: delta must be positive");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("TrpoConfig: gamma in (0,1]");
    if (!(lambda > 0.0 && lambda <= 1.0)) throw std::invalid_argument("TrpoConfig: lambda in (0,1]");
  }
};

struct AncConfig {
  double rho = 1.0;
  double mu = 0.01;

  void validate() const {
    if (rho < 0.0 || mu < 0.0) throw std::invalid_argument("AncConfig: rho, mu must be >= 0");
  }
};

// reward attenuation r / (1 + rho * max{|a| - mu, 0})
inline double anc_shape_norm(double r, double action_norm, const AncConfig& cfg) {
  return r / (1.0 + cfg.rho * std::max(action_norm - cfg.mu, 0.0));
}

inline double anc_shape(double r, const EngineAction& a, const AncConfig& cfg) {
  if (!std::isfinite(r)) throw std::invalid_argument("anc_shape: non-finite reward");
  return anc_shape_norm(r, a.norm(), cfg);
}

// solve A x = b for symmetric positive-definite A given only v -> A v
inline std::vector<double> conjugate_gradient(
    const std::function<void(std::span<const double>, std::span<double>)>& avp,
    std::span<const double> b, int iters, double tol = 1e-10) {
  const std::size_t n = b.size();
  std::vector<double> x(n, 0.0), r(b.begin(), b.end()), p(b.begin(), b.end()), ap(n);
  double rs = dot(r, r);
  if (rs == 0.0) return x;
  for (int it = 0; it < iters; ++it) {
    avp(p, ap);
    const double pap = dot(p, ap);
    if (!(pap > 0.0) || !std::isfinite(pap))
      throw std::runtime_error("conjugate_gradient: operator not positive definite");
    const double alpha = rs / pap;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
    }
    const double rs_next = dot(r, r);
    if (rs_next < tol * tol) break;
    const double beta = rs_next / rs;
    for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
    rs = rs_next;
  }
  for (double v : x)
    if (!std::isfinite(v)) throw std::runtime_error("conjugate_gradient: non-finite solution");
  return x;
}

// generalized advantage estimation over a flat batch with episode done flags;
// the tail (and any truncation) bootstraps from the value function
inline void gae_advantages(std::span<const double> rewards, std::span<const double> values,
                           std::span<const unsigned char> done, double bootstrap_value,
                           double gamma, double lambda, std::vector<double>& advantages,
                           std::vector<double>& returns) {
  const std::size_t n = rewards.size();
  advantages.assign(n, 0.0);
  returns.assign(n, 0.0);
  double gae = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double nonterminal = done[i] ? 0.0 : 1.0;
    const double next_value = (i + 1 < n) ? (done[i] ? 0.0 : values[i + 1])
                                          : (done[i] ? 0.0 : bootstrap_value);
    const double delta = rewards[i] + gamma * next_value * nonterminal - values[i];
    gae = delta + gamma * lambda * nonterminal * gae;
    advantages[i] = gae;
    returns[i] = gae + values[i];
  }
}

// zero-mean unit-variance in place; a degenerate batch collapses to zero signal
inline void standardize(std::vector<double>& v) {
  if (v.empty()) return;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  const double std_dev = std::sqrt(var);
  if (std_dev < 1e-8) {
    for (double& x : v) x = 0.0;
    return;
  }
  for (double& x : v) x = (x - mean) / std_dev;
}

// what a natural-gradient step needs from a policy + sampled batch; the
// problem is constructed at the pre-step parameters, which anchor the KL and
// Fisher metric
struct TrpoProblem {
  virtual ~TrpoProblem() = default;
  virtual std::size_t dim() const = 0;
  virtual void get_params(std::span<double> out) const = 0;
  virtual void set_params(std::span<const double> in) = 0;
  virtual double surrogate() const = 0;                       // E[ratio * advantage]
  virtual void surrogate_grad(std::span<double> out) const = 0;  // at the anchor
  virtual double kl() const = 0;                              // E[KL(old || current)]
  virtual void fisher_vp(std::span<const double> v, std::span<double> out) const = 0;
};

struct TrpoDiagnostics {
  bool accepted = false;
  double kl = 0.0;
  double surrogate_improvement = 0.0;
  int backtracks = 0;
  double grad_norm = 0.0;
};

inline TrpoDiagnostics trpo_step(TrpoProblem& problem, const TrpoConfig& cfg) {
  cfg.validate();
  TrpoDiagnostics diag;
  const std::size_t n = problem.dim();
  std::vector<double> theta_old(n);
  problem.get_params(theta_old);

  std::vector<double> g(n, 0.0);
  problem.surrogate_grad(g);
  diag.grad_norm = l2_norm(g);
  if (!std::isfinite(diag.grad_norm)) throw std::runtime_error("trpo_step: non-finite gradient");
  if (diag.grad_norm < 1e-12) return diag;  // no signal, policy unchanged

  const auto damped_avp = [&](std::span<const double> v, std::span<double> out) {
    problem.fisher_vp(v, out);
    for (std::size_t i = 0; i < v.size(); ++i) out[i] += cfg.cg_damping * v[i];
  };
  std::vector<double> x = conjugate_gradient(damped_avp, g, cfg.cg_iters);

  std::vector<double> ax(n);
  damped_avp(x, ax);
  const double xax = dot(x, ax);
  if (!(xax > 0.0)) return diag;
  const double scale = std::sqrt(2.0 * cfg.delta / xax);

  const double surrogate_old = problem.surrogate();
  std::vector<double> theta(n);
  double step = scale;
  for (int attempt = 0; attempt <= cfg.max_backtracks; ++attempt) {
    for (std::size_t i = 0; i < n; ++i) theta[i] = theta_old[i] + step * x[i];
    problem.set_params(theta);
    const double kl = problem.kl();
    const double improvement = problem.surrogate() - surrogate_old;
    if (!std::isfinite(kl) || !std::isfinite(improvement))
      throw std::runtime_error("trpo_step: non-finite diagnostics");
    if (kl <= 1.5 * cfg.delta && improvement >= 0.0) {
      diag.accepted = true;
      diag.kl = kl;
      diag.surrogate_improvement = improvement;
      diag.backtracks = attempt;
      return diag;
    }
    step *= cfg.backtrack;
  }
  problem.set_params(theta_old);  // every backtrack failed
  return diag;
}

// --- Gaussian policy over engine actions ------------------------------------

class GaussianPolicy final : public EnginePolicy {
 public:
  GaussianPolicy() = default;

  GaussianPolicy(int request_dim, int action_dim, const std::vector<int>& hidden, Rng& rng,
                 double init_std = 0.35)
      : action_dim_(action_dim) {
    std::vector<int> sizes;
    sizes.push_back(profile_encoding_dim(request_dim));
    for (int h : hidden) sizes.push_back(h);
    sizes.push_back(action_dim);
    mean_net_ = Mlp::glorot(sizes, Hidden::kTanh, Output::kIdentity, rng);
    log_std_.assign(action_dim, std::log(init_std));
  }

  GaussianPolicy(Mlp mean_net, std::vector<double> log_std)
      : mean_net_(std::move(mean_net)),
        log_std_(std::move(log_std)),
        action_dim_(static_cast<int>(log_std_.size())) {}

  EngineAction act(const CustomerProfile& profile, Rng& rng) const override {
    EngineAction a{mean_net_.forward(encode_profile(profile))};
    if (!deterministic_)
      for (int i = 0; i < action_dim_; ++i) a.weights[i] += std::exp(log_std_[i]) * rng.normal();
    return a;
  }

  std::vector<double> mean(std::span<const double> enc) const { return mean_net_.forward(enc); }
  EngineAction mean_action(const CustomerProfile& profile) const {
    return EngineAction{mean_net_.forward(encode_profile(profile))};
  }

  void set_deterministic(bool on) { deterministic_ = on; }
  bool deterministic() const { return deterministic_; }

  int action_dim() const { return action_dim_; }
  Mlp& mean_net() { return mean_net_; }
  const Mlp& mean_net() const { return mean_net_; }
  std::vector<double>& log_std() { return log_std_; }
  const std::vector<double>& log_std() const { return log_std_; }

  std::size_t param_count() const { return mean_net_.param_count() + log_std_.size(); }

  void params_to(std::span<double> out) const {
    mean_net_.params_to(out.subspan(0, mean_net_.param_count()));
    for (std::size_t i = 0; i < log_std_.size(); ++i)
      out[mean_net_.param_count() + i] = log_std_[i];
  }

  void params_from(std::span<const double> in) {
    mean_net_.params_from(in.subspan(0, mean_net_.param_count()));
    for (std::size_t i = 0; i < log_std_.size(); ++i)
      log_std_[i] = std::clamp(in[mean_net_.param_count() + i], kLogStdMin, kLogStdMax);
  }

  static constexpr double kLogStdMin = -3.9;  // sigma 0.02
  static constexpr double kLogStdMax = 0.7;   // sigma 2

 private:
  Mlp mean_net_;
  std::vector<double> log_std_;
  int action_dim_ = 0;
  bool deterministic_ = false;
};

// natural-gradient problem for a Gaussian policy on encoded states
class GaussianTrpoProblem final : public TrpoProblem {
 public:
  GaussianTrpoProblem(GaussianPolicy& policy, std::vector<std::vector<double>> enc_states,
                      std::vector<std::vector<double>> actions, std::vector<double> advantages,
                      int fvp_stride = 1)
      : policy_(policy),
        enc_(std::move(enc_states)),
        actions_(std::move(actions)),
        adv_(std::move(advantages)),
        stride_(std::max(1, fvp_stride)) {
    if (enc_.empty() || enc_.size() != actions_.size() || enc_.size() != adv_.size())
      throw std::invalid_argument("GaussianTrpoProblem: inconsistent batch");
    const std::size_t n = enc_.size();
    mean_old_.resize(n);
    lp_old_.resize(n);
    log_std_old_ = policy_.log_std();
    for (std::size_t i = 0; i < n; ++i) {
      mean_old_[i] = policy_.mean(enc_[i]);
      lp_old_[i] = log_prob(mean_old_[i], log_std_old_, actions_[i]);
    }
  }

  std::size_t dim() const override { return policy_.param_count(); }
  void get_params(std::span<double> out) const override { policy_.params_to(out); }
  void set_params(std::span<const double> in) override { policy_.params_from(in); }

  double surrogate() const override {
    double s = 0.0;
    for (std::size_t i = 0; i < enc_.size(); ++i) {
      const std::vector<double> mu = policy_.mean(enc_[i]);
      s += std::exp(log_prob(mu, policy_.log_std(), actions_[i]) - lp_old_[i]) * adv_[i];
    }
    return s / static_cast<double>(enc_.size());
  }

  void surrogate_grad(std::span<double> out) const override {
    for (double& v : out) v = 0.0;
    const std::size_t mean_params = policy_.mean_net().param_count();
    const double inv_n = 1.0 / static_cast<double>(enc_.size());
    Mlp::Trace trace;
    std::vector<double> mu, upstream(policy_.action_dim());
    for (std::size_t i = 0; i < enc_.size(); ++i) {
      policy_.mean_net().forward(enc_[i], mu, trace);
      for (int j = 0; j < policy_.action_dim(); ++j) {
        const double sigma = std::exp(policy_.log_std()[j]);
        const double z = (actions_[i][j] - mu[j]) / sigma;
        upstream[j] = adv_[i] * inv_n * z / sigma;
        out[mean_params + j] += adv_[i] * inv_n * (z * z - 1.0);
      }
      policy_.mean_net().backward(trace, upstream, out.subspan(0, mean_params));
    }
  }

  double kl() const override {
    double total = 0.0;
    for (std::size_t i = 0; i < enc_.size(); ++i) {
      const std::vector<double> mu = policy_.mean(enc_[i]);
      for (int j = 0; j < policy_.action_dim(); ++j) {
        const double so = std::exp(log_std_old_[j]);
        const double sn = std::exp(policy_.log_std()[j]);
        const double dmu = mean_old_[i][j] - mu[j];
        total += policy_.log_std()[j] - log_std_old_[j] +
                 (so * so + dmu * dmu) / (2.0 * sn * sn) - 0.5;
      }
    }
    return total / static_cast<double>(enc_.size());
  }

  void fisher_vp(std::span<const double> v, std::span<double> out) const override {
    for (double& x : out) x = 0.0;
    const std::size_t mean_params = policy_.mean_net().param_count();
    std::size_t used = 0;
    Mlp::Trace trace;
    std::vector<double> mu, tangent, weighted(policy_.action_dim());
    for (std::size_t i = 0; i < enc_.size(); i += stride_) {
      ++used;
      policy_.mean_net().forward(enc_[i], mu, trace);
      policy_.mean_net().jvp(trace, v.subspan(0, mean_params), tangent);
      for (int j = 0; j < policy_.action_dim(); ++j) {
        const double sigma = std::exp(log_std_old_[j]);
        weighted[j] = tangent[j] / (sigma * sigma);
      }
      policy_.mean_net().backward(trace, weighted, out.subspan(0, mean_params));
    }
    const double inv = 1.0 / static_cast<double>(used);
    for (std::size_t i = 0; i < mean_params; ++i) out[i] *= inv;
    // log-std block: Fisher is 2 per dimension, state independent
    for (int j = 0; j < policy_.action_dim(); ++j)
      out[mean_params + j] = 2.0 * v[mean_params + j];
  }

  static double log_prob(const std::vector<double>& mu, const std::vector<double>& log_std,
                         const std::vector<double>& a) {
    double lp = 0.0;
    for (std::size_t j = 0; j < mu.size(); ++j) {
      const double sigma = std::exp(log_std[j]);
      const double z = (a[j] - mu[j]) / sigma;
      lp += -0.5 * z * z - log_std[j] - 0.9189385332046727;  // log sqrt(2 pi)
    }
    return lp;
  }

 private:
  GaussianPolicy& policy_;
  std::vector<std::vector<double>> enc_;
  std::vector<std::vector<double>> actions_;
  std::vector<double> adv_;
  std::vector<std::vector<double>> mean_old_;
  std::vector<double> lp_old_;
  std::vector<double> log_std_old_;
  int stride_;
};

// --- state-value function -----------------------------------------------

class ValueNet {
 public:
  ValueNet() = default;
  ValueNet(int input_dim, const std::vector<int>& hidden, Rng& rng, double lr = 1e-3) {
    std::vector<int> sizes;
    sizes.push_back(input_dim);
    for (int h : hidden) sizes.push_back(h);
    sizes.push_back(1);
    net_ = Mlp::glorot(sizes, Hidden::kTanh, Output::kIdentity, rng);
    opt_ = Optimizer::adam(net_.param_count(), lr);
  }

  double predict(std::span<const double> enc) const { return net_.forward(enc)[0]; }

  // minibatch regression onto targets; returns (loss before, loss after)
  std::pair<double, double> fit(const std::vector<std::vector<double>>& inputs,
                                const std::vector<double>& targets, int epochs, int minibatch,
                                Rng& rng) {
    if (inputs.size() != targets.size() || inputs.empty())
      throw std::invalid_argument("ValueNet::fit: inconsistent batch");
    const double before = mse(inputs, targets);
    std::vector<double> params(net_.param_count()), grad(net_.param_count());
    std::vector<std::size_t> order(inputs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Mlp::Trace trace;
    std::vector<double> out;
    for (int e = 0; e < epochs; ++e) {
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.uniform_int(static_cast<int>(i))]);
      for (std::size_t at = 0; at < order.size(); at += minibatch) {
        const std::size_t end = std::min(order.size(), at + minibatch);
        std::fill(grad.begin(), grad.end(), 0.0);
        const double inv = 1.0 / static_cast<double>(end - at);
        for (std::size_t k = at; k < end; ++k) {
          const std::size_t i = order[k];
          net_.forward(inputs[i], out, trace);
          const double upstream = 2.0 * (out[0] - targets[i]) * inv;
          net_.backward(trace, std::vector<double>{upstream}, grad);
        }
        net_.params_to(params);
        opt_->step(params, grad);
        net_.params_from(params);
      }
    }
    return {before, mse(inputs, targets)};
  }

  double mse(const std::vector<std::vector<double>>& inputs,
             const std::vector<double>& targets) const {
    double s = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const double d = predict(inputs[i]) - targets[i];
      s += d * d;
    }
    return s / static_cast<double>(inputs.size());
  }

  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }

 private:
  Mlp net_;
  std::optional<Optimizer> opt_;
};

// --- platform policy training in a virtual environment ----------------------

struct RlCurvePoint {
  int iter = 0;
  double mean_return = 0.0;
  double r2p_virtual = 0.0;
  double kl = 0.0;
  double mean_action_norm = 0.0;
};

struct RlTrainResult {
  GaussianPolicy policy;
  std::vector<RlCurvePoint> curve;

  std::string curve_csv() const {
    CsvWriter csv("iter,mean_return,r2p_virtual,kl,mean_action_norm");
    for (const RlCurvePoint& p : curve)
      csv.row({std::to_string(p.iter), fmt_double(p.mean_return), fmt_double(p.r2p_virtual),
               fmt_double(p.kl), fmt_double(p.mean_action_norm)});
    return csv.str();
  }
};

// collect-rollouts -> GAE on (optionally ANC-shaped) rewards -> natural
// gradient step; returns the deterministic mean policy
inline RlTrainResult train_engine_policy(const VirtualEnvironment& env, const TrpoConfig& cfg,
                                         const std::optional<AncConfig>& anc, int iterations,
                                         std::uint64_t seed, int request_dim = kDefaultRequestDim,
                                         int action_dim = kDefaultActionDim,
                                         const std::vector<int>& hidden = {64, 64}) {
  cfg.validate();
  if (anc) anc->validate();
  Rng init_rng = Rng::stream(seed, 0);
  RlTrainResult result;
  result.policy = GaussianPolicy(request_dim, action_dim, hidden, init_rng);
  ValueNet value(profile_encoding_dim(request_dim), hidden, init_rng, cfg.value_lr);

  const std::size_t steps = static_cast<std::size_t>(cfg.batch_steps);
  std::vector<std::vector<double>> enc(steps), actions(steps);
  std::vector<double> rewards(steps), values(steps), advantages, returns;
  std::vector<unsigned char> done(steps, 0);  // continuing task, bootstrap only

  for (int iter = 0; iter < iterations; ++iter) {
    Rng rng = Rng::stream(seed, 1000 + static_cast<std::uint64_t>(iter));
    CustomerProfile s = env.reset(rng);
    double raw_sum = 0.0, norm_sum = 0.0;
    long page_views = 0, purchases = 0;
    for (std::size_t t = 0; t < steps; ++t) {
      enc[t] = encode_profile(s);
      const EngineAction a = result.policy.act(s, rng);
      actions[t] = a.weights;
      const VirtualEnvironment::StepOutcome outcome = env.step(s, a, rng);
      raw_sum += outcome.reward;
      purchases += outcome.reward > 0.5 ? 1 : 0;
      page_views += outcome.page_views;
      norm_sum += a.norm();
      rewards[t] = anc ? anc_shape(outcome.reward, a, *anc) : outcome.reward;
      s = outcome.next;
    }
    for (std::size_t t = 0; t < steps; ++t) values[t] = value.predict(enc[t]);
    const double bootstrap = value.predict(encode_profile(s));
    gae_advantages(rewards, values, done, bootstrap, cfg.gamma, cfg.lambda, advantages, returns);
    standardize(advantages);

    value.fit(enc, returns, cfg.value_epochs, cfg.value_minibatch, rng);

    GaussianTrpoProblem problem(result.policy, enc, actions, advantages, cfg.fvp_stride);
    const TrpoDiagnostics diag = trpo_step(problem, cfg);

    RlCurvePoint point;
    point.iter = iter;
    point.mean_return = raw_sum / static_cast<double>(steps);
    point.r2p_virtual = static_cast<double>(purchases) / static_cast<double>(page_views);
    point.kl = diag.kl;
    point.mean_action_norm = norm_sum / static_cast<double>(steps);
    result.curve.push_back(point);
  }
  result.policy.set_deterministic(true);
  return result;
}

}  // namespace vtlab
