#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "vtlab/dataset_io.hpp"
#include "vtlab/domain.hpp"
#include "vtlab/rng.hpp"
#include "vtlab/rollout.hpp"

namespace vtlab {

// Hidden parametric marketplace standing in for the real platform: a customer
// population, a behavior model scoring {buy, turn, leave}, and a price model.
// The buy propensity rises with <w_type, a> but collapses once the action norm
// overshoots the regime the population tolerates, so arbitrarily large actions
// are not a free lunch in the ground truth.
struct OracleParams {
  std::vector<double> population;      // 48 cells, sums to 1
  int request_dim = kDefaultRequestDim;
  int action_dim = kDefaultActionDim;
  int max_index = kDefaultMaxIndex;

  std::vector<double> type_pref;       // 48 x action_dim, rows unit norm
  std::vector<double> request_mean;    // 8 x request_dim, rows unit norm
  double request_noise = 0.35;

  double buy_bias = -1.30;
  double buy_gain = 1.5;
  double turn_bias = 0.75;
  double leave_bias = 0.0;
  double page_fatigue = 0.20;          // applied as -f*n to buy, -f*n/2 to turn
  double overshoot_start = 1.0;
  double overshoot_penalty = 1.5;
  std::array<double, kQueryCategories> bias_cat{};
  std::array<double, kPurchasePowers> bias_power{};
  std::array<double, kHighLevels> bias_high{};

  std::array<double, kPurchasePowers> price_base{10.0, 30.0, 100.0};
  double price_sigma = 0.25;

  static OracleParams defaults();

  std::span<const double> pref(int type_cell) const {
    return {type_pref.data() + static_cast<std::size_t>(type_cell) * action_dim,
            static_cast<std::size_t>(action_dim)};
  }

  std::array<double, 3> logits(const CustomerState& sc) const {
    const int cell = sc.profile.type_cell();
    const double align = dot(pref(cell), sc.action.weights);
    const double over = std::max(0.0, sc.action.norm() - overshoot_start);
    const double signal = align - overshoot_penalty * over * over;
    const double n = static_cast<double>(sc.page);
    std::array<double, 3> l{};
    l[static_cast<int>(CustomerAction::kBuy)] =
        buy_bias + bias_cat[sc.profile.query_category - 1] +
        bias_power[sc.profile.purchase_power - 1] + bias_high[sc.profile.high_level ? 1 : 0] +
        buy_gain * signal - page_fatigue * n;
    l[static_cast<int>(CustomerAction::kTurnPage)] = turn_bias - 0.5 * page_fatigue * n;
    l[static_cast<int>(CustomerAction::kLeave)] = leave_bias;
    return l;
  }

  void validate() const {
    if (population.size() != kTypeCells)
      throw std::invalid_argument("OracleParams: population must cover 48 cells");
    double sum = 0.0;
    for (double p : population) {
      if (p < 0.0) throw std::invalid_argument("OracleParams: negative population weight");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("OracleParams: population must sum to 1");
    if (type_pref.size() != static_cast<std::size_t>(kTypeCells) * action_dim)
      throw std::invalid_argument("OracleParams: type_pref shape");
    if (request_mean.size() != static_cast<std::size_t>(kQueryCategories) * request_dim)
      throw std::invalid_argument("OracleParams: request_mean shape");
    for (double b : price_base)
      if (!(b > 0.0)) throw std::invalid_argument("OracleParams: prices must be positive");
    if (page_fatigue < 0.0) throw std::invalid_argument("OracleParams: negative fatigue");
  }
};

inline std::array<double, 3> softmax3(const std::array<double, 3>& l) {
  const double mx = std::max(l[0], std::max(l[1], l[2]));
  std::array<double, 3> p{};
  double sum = 0.0;
  for (int i = 0; i < 3; ++i) sum += (p[i] = std::exp(l[i] - mx));
  for (int i = 0; i < 3; ++i) p[i] /= sum;
  return p;
}

inline OracleParams OracleParams::defaults() {
  OracleParams p;
  Rng rng(0x7a0ba01ull ^ 0x56544c4142ull);  // fixed construction stream
  p.population.resize(kTypeCells);
  double sum = 0.0;
  for (double& w : p.population) sum += (w = std::exp(0.35 * rng.normal()));
  for (double& w : p.population) w /= sum;

  p.type_pref.resize(static_cast<std::size_t>(kTypeCells) * p.action_dim);
  for (int t = 0; t < kTypeCells; ++t) {
    double norm2 = 0.0;
    double* row = p.type_pref.data() + static_cast<std::size_t>(t) * p.action_dim;
    for (int i = 0; i < p.action_dim; ++i) norm2 += (row[i] = rng.normal()) * row[i];
    const double inv = 1.0 / std::sqrt(norm2);
    for (int i = 0; i < p.action_dim; ++i) row[i] *= inv;
  }

  p.request_mean.resize(static_cast<std::size_t>(kQueryCategories) * p.request_dim);
  for (int c = 0; c < kQueryCategories; ++c) {
    double norm2 = 0.0;
    double* row = p.request_mean.data() + static_cast<std::size_t>(c) * p.request_dim;
    for (int i = 0; i < p.request_dim; ++i) norm2 += (row[i] = rng.normal()) * row[i];
    const double inv = 1.0 / std::sqrt(norm2);
    for (int i = 0; i < p.request_dim; ++i) row[i] *= inv;
  }

  for (int c = 0; c < kQueryCategories; ++c)
    p.bias_cat[c] = -0.30 + 0.60 * static_cast<double>(c) / (kQueryCategories - 1);
  p.bias_power = {-0.35, 0.0, 0.45};
  p.bias_high = {0.0, 0.25};
  return p;
}

inline CustomerProfile oracle_sample_customer(const OracleParams& params, Rng& rng) {
  const int cell = rng.categorical(params.population);
  CustomerProfile profile;
  profile.high_level = (cell % kHighLevels) == 1;
  profile.purchase_power = (cell / kHighLevels) % kPurchasePowers + 1;
  profile.query_category = cell / (kHighLevels * kPurchasePowers) + 1;
  profile.request.resize(params.request_dim);
  const double* mean =
      params.request_mean.data() +
      static_cast<std::size_t>(profile.query_category - 1) * params.request_dim;
  for (int i = 0; i < params.request_dim; ++i)
    profile.request[i] = mean[i] + params.request_noise * rng.normal();
  profile.request = normalized(std::move(profile.request));
  return profile;
}

class OracleSampler final : public CustomerSampler {
 public:
  explicit OracleSampler(OracleParams params) : params_(std::move(params)) {}
  CustomerProfile sample(Rng& rng) const override {
    return oracle_sample_customer(params_, rng);
  }
  const OracleParams& params() const { return params_; }

 private:
  OracleParams params_;
};

class OracleCustomerPolicy final : public CustomerPolicy {
 public:
  explicit OracleCustomerPolicy(OracleParams params) : params_(std::move(params)) {}
  std::array<double, 3> action_probs(const CustomerState& sc) const override {
    return softmax3(params_.logits(sc));
  }

 private:
  OracleParams params_;
};

inline std::shared_ptr<CustomerPolicy> oracle_customer_policy(const OracleParams& params) {
  return std::make_shared<OracleCustomerPolicy>(params);
}

class OraclePriceModel final : public PriceModel {
 public:
  explicit OraclePriceModel(const OracleParams& params)
      : base_(params.price_base), sigma_(params.price_sigma) {}
  double price(const CustomerProfile& profile, Rng& rng) const override {
    return base_[profile.purchase_power - 1] * std::exp(sigma_ * rng.normal());
  }

 private:
  std::array<double, kPurchasePowers> base_;
  double sigma_;
};

// action along the type preference at the oracle-optimal radius
inline EngineAction oracle_optimal_action(const OracleParams& params, int type_cell) {
  const std::span<const double> w = params.pref(type_cell);
  const double wnorm = l2_norm(w);
  const double radius =
      params.overshoot_start + wnorm / (2.0 * std::max(params.overshoot_penalty, 1e-9));
  EngineAction a;
  a.weights.assign(w.begin(), w.end());
  for (double& x : a.weights) x *= radius / wnorm;
  return a;
}

inline Dataset generate_log(const OracleParams& params, const EnginePolicy& logging,
                            std::size_t sessions, std::uint64_t seed,
                            std::int64_t time_slice = 0,
                            const CustomerPolicy* customer_override = nullptr,
                            int threads = 1) {
  if (sessions == 0) throw std::invalid_argument("generate_log: need at least one session");
  params.validate();
  OracleSampler sampler(params);
  OracleCustomerPolicy behavior(params);
  OraclePriceModel prices(params);
  const CustomerPolicy& customer =
      customer_override ? *customer_override : static_cast<const CustomerPolicy&>(behavior);
  Dataset ds;
  ds.meta.logging_policy_id = "uniform[-0.5,0.5]^d";
  ds.meta.time_slice = time_slice;
  ds.meta.seed = seed;
  ds.sessions = rollout_sessions(logging, customer, sampler, sessions, seed, params.max_index,
                                 &prices, threads);
  return ds;
}

// Temporal shift: convex mixing of the population toward a fixed-seed target
// distribution plus linear perturbation of the behavior weights. level 0 is
// the identity; total-variation distance of the population grows linearly in
// the level.
inline OracleParams drift(const OracleParams& params, double level, std::uint64_t seed) {
  if (level < 0.0 || level > 1.0) throw std::invalid_argument("drift: level must be in [0,1]");
  OracleParams out = params;
  if (level == 0.0) return out;
  Rng rng(splitmix64(seed ^ 0xd21f7ull));

  std::vector<double> target(params.population.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i)
    sum += (target[i] = params.population[i] * std::exp(0.8 * rng.normal()));
  for (std::size_t i = 0; i < target.size(); ++i) {
    target[i] /= sum;
    out.population[i] = (1.0 - level) * params.population[i] + level * target[i];
  }

  out.buy_bias += level * 0.45 * rng.normal();
  out.turn_bias += level * 0.30 * rng.normal();
  out.page_fatigue = std::max(0.0, params.page_fatigue + level * 0.15 * rng.normal());
  for (double& b : out.bias_cat) b += level * 0.25 * rng.normal();
  for (double& b : out.bias_power) b += level * 0.20 * rng.normal();
  for (double& b : out.bias_high) b += level * 0.15 * rng.normal();

  for (int t = 0; t < kTypeCells; ++t) {
    double* row = out.type_pref.data() + static_cast<std::size_t>(t) * out.action_dim;
    double norm2 = 0.0;
    for (int i = 0; i < out.action_dim; ++i) {
      row[i] += level * 0.5 * rng.normal();
      norm2 += row[i] * row[i];
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (int i = 0; i < out.action_dim; ++i) row[i] *= inv;
  }
  for (int c = 0; c < kQueryCategories; ++c) {
    double* row = out.request_mean.data() + static_cast<std::size_t>(c) * out.request_dim;
    double norm2 = 0.0;
    for (int i = 0; i < out.request_dim; ++i) {
      row[i] += level * 0.4 * rng.normal();
      norm2 += row[i] * row[i];
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (int i = 0; i < out.request_dim; ++i) row[i] *= inv;
  }
  out.validate();
  return out;
}

struct DriftSchedule {
  std::vector<std::pair<std::int64_t, double>> slots;  // (slice id, drift level)

  // intra-day wave used by the R2P-over-time study
  static DriftSchedule twelve_slot_day() {
    DriftSchedule s;
    const double levels[12] = {0.0, 0.10, 0.22, 0.36, 0.52, 0.68,
                               0.80, 0.72, 0.56, 0.40, 0.24, 0.10};
    for (int i = 0; i < 12; ++i) s.slots.emplace_back(i, levels[i]);
    return s;
  }

  // later-and-later retraining gaps; levels nondecreasing
  static DriftSchedule day_week_month() {
    DriftSchedule s;
    s.slots = {{0, 0.2}, {1, 0.5}, {2, 1.0}};
    return s;
  }
};

inline void to_json(nlohmann::json& j, const OracleParams& p) {
  j = nlohmann::json{{"population", p.population},
                     {"request_dim", p.request_dim},
                     {"action_dim", p.action_dim},
                     {"max_index", p.max_index},
                     {"type_pref", p.type_pref},
                     {"request_mean", p.request_mean},
                     {"request_noise", p.request_noise},
                     {"buy_bias", p.buy_bias},
                     {"buy_gain", p.buy_gain},
                     {"turn_bias", p.turn_bias},
                     {"leave_bias", p.leave_bias},
                     {"page_fatigue", p.page_fatigue},
                     {"overshoot_start", p.overshoot_start},
                     {"overshoot_penalty", p.overshoot_penalty},
                     {"bias_cat", p.bias_cat},
                     {"bias_power", p.bias_power},
                     {"bias_high", p.bias_high},
                     {"price_base", p.price_base},
                     {"price_sigma", p.price_sigma}};
}

inline void from_json(const nlohmann::json& j, OracleParams& p) {
  j.at("population").get_to(p.population);
  j.at("request_dim").get_to(p.request_dim);
  j.at("action_dim").get_to(p.action_dim);
  j.at("max_index").get_to(p.max_index);
  j.at("type_pref").get_to(p.type_pref);
  j.at("request_mean").get_to(p.request_mean);
  j.at("request_noise").get_to(p.request_noise);
  j.at("buy_bias").get_to(p.buy_bias);
  j.at("buy_gain").get_to(p.buy_gain);
  j.at("turn_bias").get_to(p.turn_bias);
  j.at("leave_bias").get_to(p.leave_bias);
  j.at("page_fatigue").get_to(p.page_fatigue);
  j.at("overshoot_start").get_to(p.overshoot_start);
  j.at("overshoot_penalty").get_to(p.overshoot_penalty);
  j.at("bias_cat").get_to(p.bias_cat);
  j.at("bias_power").get_to(p.bias_power);
  j.at("bias_high").get_to(p.bias_high);
  j.at("price_base").get_to(p.price_base);
  j.at("price_sigma").get_to(p.price_sigma);
}

}  // namespace vtlab
