#pragma once

#include <memory>
#include <stdexcept>
#include <utility>

#include "vtlab/domain.hpp"
#include "vtlab/rollout.hpp"

namespace vtlab {

// Engine-view MDP over a learned (or ground-truth) customer sampler and
// behavior policy. One step is one customer session: the engine commits to an
// action, the customer browses until buy/leave/overflow, and only then does
// the engine observe a new state.
class VirtualEnvironment {
 public:
  VirtualEnvironment(std::shared_ptr<const CustomerSampler> sampler,
                     std::shared_ptr<const CustomerPolicy> customer,
                     int max_index = kDefaultMaxIndex)
      : sampler_(std::move(sampler)), customer_(std::move(customer)), max_index_(max_index) {
    if (!sampler_ || !customer_)
      throw std::invalid_argument("VirtualEnvironment: sampler and customer policy required");
  }

  struct StepOutcome {
    double reward = 0.0;  // 1 on purchase, else 0
    int page_views = 0;
    CustomerProfile next;
  };

  CustomerProfile reset(Rng& rng) const { return sampler_->sample(rng); }

  StepOutcome step(const CustomerProfile& s, const EngineAction& a, Rng& rng) const {
    StepOutcome out;
    for (int page = 0; page <= max_index_; ++page) {
      ++out.page_views;
      const std::array<double, 3> probs = customer_->action_probs({s, a, page});
      const auto a_c = static_cast<CustomerAction>(rng.categorical(probs));
      if (a_c == CustomerAction::kBuy) {
        out.reward = 1.0;
        break;
      }
      if (a_c == CustomerAction::kLeave) break;
    }
    out.next = sampler_->sample(rng);
    return out;
  }

  // session-level evaluation under an engine policy (R2P and friends)
  std::vector<Session> evaluate_sessions(const EnginePolicy& engine, std::size_t count,
                                         std::uint64_t seed, int threads = 1) const {
    return rollout_sessions(engine, *customer_, *sampler_, count, seed, max_index_, nullptr,
                            threads);
  }

  const CustomerSampler& sampler() const { return *sampler_; }
  const CustomerPolicy& customer() const { return *customer_; }
  int max_index() const { return max_index_; }

 private:
  std::shared_ptr<const CustomerSampler> sampler_;
  std::shared_ptr<const CustomerPolicy> customer_;
  int max_index_;
};

inline VirtualEnvironment build_virtual_env(std::shared_ptr<const CustomerSampler> sampler,
                                            std::shared_ptr<const CustomerPolicy> customer,
                                            int max_index = kDefaultMaxIndex) {
  return VirtualEnvironment(std::move(sampler), std::move(customer), max_index);
}

}  // namespace vtlab
