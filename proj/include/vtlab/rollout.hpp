#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <thread>
#include <vector>

#include "vtlab/domain.hpp"
#include "vtlab/rng.hpp"

namespace vtlab {

// engine-view transition: the state is held while the customer turns pages,
// otherwise a fresh customer arrives
struct EngineTransition {
  CustomerProfile profile;
  bool session_ended = false;
};

inline EngineTransition engine_transition(const CustomerProfile& s, CustomerAction a_c,
                                          const CustomerSampler& source, Rng& rng) {
  if (a_c == CustomerAction::kTurnPage) return {s, false};
  return {source.sample(rng), true};
}

// customer-view transition; nullopt means the episode terminated (buy).
// A turn at n = MaxIndex yields page MaxIndex + 1, which callers must treat
// as terminal on the next check.
inline std::optional<CustomerState> customer_transition(const CustomerState& sc,
                                                        CustomerAction a_c,
                                                        const EnginePolicy& engine,
                                                        const CustomerSampler& source, Rng& rng) {
  switch (a_c) {
    case CustomerAction::kBuy:
      return std::nullopt;
    case CustomerAction::kTurnPage:
      return CustomerState{sc.profile, sc.action, sc.page + 1};
    case CustomerAction::kLeave: {
      CustomerProfile next = source.sample(rng);
      EngineAction a = engine.act(next, rng);
      return CustomerState{std::move(next), std::move(a), 0};
    }
  }
  throw std::invalid_argument("customer_transition: bad action");
}

// purchase price attached to log records; null disables prices
struct PriceModel {
  virtual ~PriceModel() = default;
  virtual double price(const CustomerProfile& profile, Rng& rng) const = 0;
};

inline Session rollout_one_session(const EnginePolicy& engine, const CustomerPolicy& customer,
                                   const CustomerSampler& source, Rng& rng, int max_index,
                                   const PriceModel* prices = nullptr) {
  Session session;
  session.profile = source.sample(rng);
  EngineAction action = engine.act(session.profile, rng);
  for (int page = 0; page <= max_index; ++page) {
    const CustomerState sc{session.profile, action, page};
    const std::array<double, 3> probs = customer.action_probs(sc);
    const auto a_c = static_cast<CustomerAction>(rng.categorical(probs));
    StepRecord rec;
    rec.action = action;
    rec.page = page;
    rec.customer_action = a_c;
    rec.reward = a_c == CustomerAction::kBuy ? 1 : 0;
    if (rec.reward == 1 && prices) rec.price = prices->price(session.profile, rng);
    session.steps.push_back(std::move(rec));
    if (a_c != CustomerAction::kTurnPage) break;
  }
  return session;
}

// Each session runs on its own (seed, index)-derived stream, so sharding the
// loop over threads changes nothing about the produced dataset.
inline std::vector<Session> rollout_sessions(const EnginePolicy& engine,
                                             const CustomerPolicy& customer,
                                             const CustomerSampler& source, std::size_t count,
                                             std::uint64_t seed,
                                             int max_index = kDefaultMaxIndex,
                                             const PriceModel* prices = nullptr,
                                             int threads = 1) {
  if (count == 0) throw std::invalid_argument("rollout_sessions: count must be positive");
  std::vector<Session> sessions(count);
  auto run_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      Rng rng = Rng::stream(seed, i);
      sessions[i] = rollout_one_session(engine, customer, source, rng, max_index, prices);
    }
  };
  if (threads <= 1) {
    run_range(0, count);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (count + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const std::size_t begin = std::min(count, t * chunk);
      const std::size_t end = std::min(count, begin + chunk);
      if (begin < end) pool.emplace_back(run_range, begin, end);
    }
    for (auto& th : pool) th.join();
  }
  return sessions;
}

struct Metrics {
  double r2p = 0.0;            // purchases per page view
  double tt = 0.0;             // total turnover
  double tv = 0.0;             // total volume
  double mean_session_length = 0.0;
  double mean_action_norm = 0.0;
  double max_action_norm = 0.0;
  std::size_t records = 0;
  std::size_t purchases = 0;
};

inline Metrics compute_metrics(std::span<const Session> sessions) {
  if (sessions.empty()) throw std::invalid_argument("compute_metrics: no sessions");
  Metrics m;
  double norm_sum = 0.0;
  for (const Session& s : sessions) {
    m.records += s.steps.size();
    for (const StepRecord& r : s.steps) {
      if (r.reward == 1) {
        ++m.purchases;
        if (r.price >= 0.0) m.tt += r.price;
      }
      const double n = r.action.norm();
      norm_sum += n;
      m.max_action_norm = std::max(m.max_action_norm, n);
    }
  }
  m.tv = static_cast<double>(m.purchases);
  m.r2p = static_cast<double>(m.purchases) / static_cast<double>(m.records);
  m.mean_session_length =
      static_cast<double>(m.records) / static_cast<double>(sessions.size());
  m.mean_action_norm = norm_sum / static_cast<double>(m.records);
  return m;
}

// R2P restricted to records whose profile carries a given feature value;
// order: query_category 1..8, purchase_power 1..3, high_level {false,true}
inline constexpr int kFeatureValues = kQueryCategories + kPurchasePowers + kHighLevels;

struct FeatureR2p {
  std::array<double, kFeatureValues> r2p{};
  std::array<std::size_t, kFeatureValues> page_views{};
};

inline FeatureR2p feature_r2p(std::span<const Session> sessions) {
  if (sessions.empty()) throw std::invalid_argument("feature_r2p: no sessions");
  std::array<std::size_t, kFeatureValues> buys{};
  FeatureR2p out;
  for (const Session& s : sessions) {
    const int idx_cat = s.profile.query_category - 1;
    const int idx_pp = kQueryCategories + s.profile.purchase_power - 1;
    const int idx_high = kQueryCategories + kPurchasePowers + (s.profile.high_level ? 1 : 0);
    for (const StepRecord& r : s.steps) {
      for (int idx : {idx_cat, idx_pp, idx_high}) {
        ++out.page_views[idx];
        buys[idx] += r.reward;
      }
    }
  }
  for (int i = 0; i < kFeatureValues; ++i)
    out.r2p[i] = out.page_views[i] == 0
                     ? 0.0
                     : static_cast<double>(buys[i]) / static_cast<double>(out.page_views[i]);
  return out;
}

}  // namespace vtlab
