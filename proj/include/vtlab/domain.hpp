#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vtlab/rng.hpp"
#include "vtlab/tensor.hpp"

namespace vtlab {

inline constexpr double kProbFloor = 1e-8;  // probability clamp before logs

inline constexpr int kQueryCategories = 8;
inline constexpr int kPurchasePowers = 3;
inline constexpr int kHighLevels = 2;
inline constexpr int kTypeCells = kQueryCategories * kPurchasePowers * kHighLevels;
inline constexpr int kDefaultRequestDim = 4;
inline constexpr int kDefaultActionDim = 8;
inline constexpr int kDefaultMaxIndex = 10;

// engine-side state: a customer together with its search request
struct CustomerProfile {
  int query_category = 1;   // 1..8
  int purchase_power = 1;   // 1..3
  bool high_level = false;
  std::vector<double> request;  // unit L2 norm

  int type_cell() const {
    return ((query_category - 1) * kPurchasePowers + (purchase_power - 1)) * kHighLevels +
           (high_level ? 1 : 0);
  }

  void validate() const {
    if (query_category < 1 || query_category > kQueryCategories)
      throw std::invalid_argument("CustomerProfile: query_category out of range");
    if (purchase_power < 1 || purchase_power > kPurchasePowers)
      throw std::invalid_argument("CustomerProfile: purchase_power out of range");
    if (request.empty()) throw std::invalid_argument("CustomerProfile: empty request");
    const double n = l2_norm(request);
    if (std::abs(n - 1.0) > 1e-6)
      throw std::invalid_argument("CustomerProfile: request not unit norm");
  }
};

inline std::vector<double> normalized(std::vector<double> v) {
  const double n = l2_norm(v);
  if (!(n > 0.0)) throw std::invalid_argument("normalized: zero vector");
  for (double& x : v) x /= n;
  return v;
}

// ranking-weight vector chosen by the platform
struct EngineAction {
  std::vector<double> weights;

  double norm() const { return l2_norm(weights); }
  void validate() const {
    for (double w : weights)
      if (!std::isfinite(w)) throw std::invalid_argument("EngineAction: non-finite weight");
  }
};

enum class CustomerAction : int { kBuy = 0, kTurnPage = 1, kLeave = 2 };
inline constexpr int kCustomerActions = 3;

inline const char* to_string(CustomerAction a) {
  switch (a) {
    case CustomerAction::kBuy: return "buy";
    case CustomerAction::kTurnPage: return "turn";
    case CustomerAction::kLeave: return "leave";
  }
  return "?";
}

inline CustomerAction customer_action_from_string(const std::string& s) {
  if (s == "buy") return CustomerAction::kBuy;
  if (s == "turn") return CustomerAction::kTurnPage;
  if (s == "leave") return CustomerAction::kLeave;
  throw std::invalid_argument("unknown customer action: " + s);
}

// customer-side state <s, a, n>
struct CustomerState {
  CustomerProfile profile;
  EngineAction action;
  int page = 0;
};

struct StepRecord {
  EngineAction action;
  int page = 0;
  CustomerAction customer_action = CustomerAction::kLeave;
  int reward = 0;        // engine reward, 1 on purchase
  double price = -1.0;   // < 0 means absent
};

// one customer's page views; profile is constant within the session
struct Session {
  CustomerProfile profile;
  std::vector<StepRecord> steps;

  void validate(int max_index) const {
    profile.validate();
    if (steps.empty()) throw std::invalid_argument("Session: empty");
    int purchases = 0;
    for (std::size_t i = 0; i < steps.size(); ++i) {
      const StepRecord& r = steps[i];
      if (r.page != static_cast<int>(i))
        throw std::invalid_argument("Session: page indices must start at 0 and step by 1");
      if (r.page > max_index) throw std::invalid_argument("Session: page beyond MaxIndex");
      if (r.reward != 0 && r.reward != 1) throw std::invalid_argument("Session: bad reward");
      if (r.reward == 1) {
        ++purchases;
        if (i + 1 != steps.size())
          throw std::invalid_argument("Session: reward 1 before final record");
        if (r.customer_action != CustomerAction::kBuy)
          throw std::invalid_argument("Session: reward 1 without purchase");
      }
      if (r.customer_action == CustomerAction::kTurnPage && i + 1 == steps.size() &&
          r.page != max_index)
        throw std::invalid_argument("Session: truncated before page overflow");
      if (r.customer_action != CustomerAction::kTurnPage && i + 1 != steps.size())
        throw std::invalid_argument("Session: continued past buy/leave");
    }
    if (purchases > 1) throw std::invalid_argument("Session: multiple purchases");
  }
};

struct DatasetMeta {
  std::string logging_policy_id = "unknown";
  std::int64_t time_slice = 0;
  std::uint64_t seed = 0;
};

struct Dataset {
  DatasetMeta meta;
  std::vector<Session> sessions;
};

// --- policy and sampler interfaces -----------------------------------------

struct EnginePolicy {
  virtual ~EnginePolicy() = default;
  virtual EngineAction act(const CustomerProfile& profile, Rng& rng) const = 0;
};

struct CustomerPolicy {
  virtual ~CustomerPolicy() = default;
  // probabilities over {buy, turn page, leave}, sums to 1
  virtual std::array<double, 3> action_probs(const CustomerState& state) const = 0;
};

struct CustomerSampler {
  virtual ~CustomerSampler() = default;
  virtual CustomerProfile sample(Rng& rng) const = 0;
};

// --- network encodings ------------------------------------------------------

inline constexpr int kOneHotDim = kQueryCategories + kPurchasePowers + kHighLevels;  // 13

inline int profile_encoding_dim(int request_dim) { return kOneHotDim + request_dim; }

inline void encode_profile(const CustomerProfile& p, std::span<double> out) {
  const std::size_t dim = kOneHotDim + p.request.size();
  if (out.size() != dim) throw std::invalid_argument("encode_profile: bad buffer size");
  for (auto& x : out) x = 0.0;
  out[p.query_category - 1] = 1.0;
  out[kQueryCategories + p.purchase_power - 1] = 1.0;
  out[kQueryCategories + kPurchasePowers + (p.high_level ? 1 : 0)] = 1.0;
  for (std::size_t i = 0; i < p.request.size(); ++i) out[kOneHotDim + i] = p.request[i];
}

inline std::vector<double> encode_profile(const CustomerProfile& p) {
  std::vector<double> out(kOneHotDim + p.request.size());
  encode_profile(p, out);
  return out;
}

inline int state_encoding_dim(int request_dim, int action_dim) {
  return profile_encoding_dim(request_dim) + action_dim + 1;
}

// encode(s) (+) a (+) n / MaxIndex
inline void encode_state(const CustomerState& sc, int max_index, std::span<double> out) {
  const std::size_t pdim = kOneHotDim + sc.profile.request.size();
  const std::size_t dim = pdim + sc.action.weights.size() + 1;
  if (out.size() != dim) throw std::invalid_argument("encode_state: bad buffer size");
  encode_profile(sc.profile, out.subspan(0, pdim));
  for (std::size_t i = 0; i < sc.action.weights.size(); ++i)
    out[pdim + i] = sc.action.weights[i];
  out[dim - 1] = static_cast<double>(sc.page) / static_cast<double>(max_index);
}

inline std::vector<double> encode_state(const CustomerState& sc, int max_index) {
  std::vector<double> out(kOneHotDim + sc.profile.request.size() + sc.action.weights.size() + 1);
  encode_state(sc, max_index, out);
  return out;
}

// --- everyday reusable policies ---------------------------------------------

// the historical "random engine policy": uniform per component
class UniformEnginePolicy final : public EnginePolicy {
 public:
  UniformEnginePolicy(int action_dim, double lo = -0.5, double hi = 0.5)
      : dim_(action_dim), lo_(lo), hi_(hi) {}

  EngineAction act(const CustomerProfile&, Rng& rng) const override {
    EngineAction a;
    a.weights.resize(dim_);
    for (double& w : a.weights) w = rng.uniform(lo_, hi_);
    return a;
  }

 private:
  int dim_;
  double lo_, hi_;
};

class ConstantEnginePolicy final : public EnginePolicy {
 public:
  explicit ConstantEnginePolicy(EngineAction a) : action_(std::move(a)) {}
  EngineAction act(const CustomerProfile&, Rng&) const override { return action_; }

 private:
  EngineAction action_;
};

class FixedCustomerPolicy final : public CustomerPolicy {
 public:
  explicit FixedCustomerPolicy(std::array<double, 3> probs) : probs_(probs) {}
  static FixedCustomerPolicy always(CustomerAction a) {
    std::array<double, 3> p{0.0, 0.0, 0.0};
    p[static_cast<int>(a)] = 1.0;
    return FixedCustomerPolicy(p);
  }
  std::array<double, 3> action_probs(const CustomerState&) const override { return probs_; }

 private:
  std::array<double, 3> probs_;
};

class SingleProfileSampler final : public CustomerSampler {
 public:
  explicit SingleProfileSampler(CustomerProfile p) : profile_(std::move(p)) {}
  CustomerProfile sample(Rng&) const override { return profile_; }

 private:
  CustomerProfile profile_;
};

}  // namespace vtlab
