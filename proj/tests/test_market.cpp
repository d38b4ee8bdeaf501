#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <sstream>

#include "vtlab/dataset_io.hpp"
#include "vtlab/domain.hpp"
#include "vtlab/rollout.hpp"

using namespace vtlab;

namespace {

CustomerProfile make_profile(int cat = 3, int power = 2, bool high = false) {
  CustomerProfile p;
  p.query_category = cat;
  p.purchase_power = power;
  p.high_level = high;
  p.request = normalized({1.0, 2.0, -1.0, 0.5});
  return p;
}

EngineAction make_action(std::vector<double> w = {0.1, -0.2, 0.3, 0.0, 0.1, 0.2, -0.1, 0.4}) {
  return EngineAction{std::move(w)};
}

// random-but-valid customer policy for fuzzing
class NoisyCustomerPolicy final : public CustomerPolicy {
 public:
  explicit NoisyCustomerPolicy(std::uint64_t seed) : seed_(seed) {}
  std::array<double, 3> action_probs(const CustomerState& sc) const override {
    Rng rng(splitmix64(seed_ ^ (sc.page * 977 + sc.profile.type_cell())));
    std::array<double, 3> p{};
    double sum = 0.0;
    for (double& x : p) sum += (x = 0.05 + rng.uniform());
    for (double& x : p) x /= sum;
    return p;
  }

 private:
  std::uint64_t seed_;
};

}  // namespace

TEST_CASE("engine transition: turn page keeps the state") {
  const CustomerProfile s = make_profile();
  SingleProfileSampler sampler(make_profile(7, 1, true));
  Rng rng(1);
  const EngineTransition t = engine_transition(s, CustomerAction::kTurnPage, sampler, rng);
  CHECK_FALSE(t.session_ended);
  CHECK(t.profile.query_category == s.query_category);
  CHECK(t.profile.request == s.request);
}

TEST_CASE("engine transition: buy and leave draw a fresh customer") {
  const CustomerProfile s = make_profile();
  const CustomerProfile fresh = make_profile(7, 1, true);
  SingleProfileSampler sampler(fresh);
  Rng rng(1);
  for (CustomerAction a : {CustomerAction::kBuy, CustomerAction::kLeave}) {
    const EngineTransition t = engine_transition(s, a, sampler, rng);
    CHECK(t.session_ended);
    CHECK(t.profile.query_category == fresh.query_category);
    CHECK(t.profile.high_level == fresh.high_level);
  }
}

TEST_CASE("customer transition: three-case definition") {
  const CustomerProfile s = make_profile();
  const EngineAction a = make_action();
  SingleProfileSampler sampler(make_profile(5, 3, true));
  ConstantEnginePolicy engine(make_action({9.0, 0, 0, 0, 0, 0, 0, 0}));
  Rng rng(2);

  const auto turned =
      customer_transition({s, a, 3}, CustomerAction::kTurnPage, engine, sampler, rng);
  REQUIRE(turned.has_value());
  CHECK(turned->page == 4);
  CHECK(turned->action.weights == a.weights);
  CHECK(turned->profile.query_category == s.query_category);

  CHECK_FALSE(customer_transition({s, a, 2}, CustomerAction::kBuy, engine, sampler, rng));

  const auto left = customer_transition({s, a, 0}, CustomerAction::kLeave, engine, sampler, rng);
  REQUIRE(left.has_value());
  CHECK(left->page == 0);
  CHECK(left->profile.query_category == 5);
  CHECK(left->action.weights[0] == 9.0);
}

TEST_CASE("rollout: always-buy gives single-record purchase sessions") {
  SingleProfileSampler sampler(make_profile());
  ConstantEnginePolicy engine(make_action());
  const FixedCustomerPolicy buyer = FixedCustomerPolicy::always(CustomerAction::kBuy);
  const auto sessions = rollout_sessions(engine, buyer, sampler, 50, 9);
  const Metrics m = compute_metrics(sessions);
  for (const Session& s : sessions) {
    REQUIRE(s.steps.size() == 1);
    CHECK(s.steps[0].reward == 1);
    s.validate(kDefaultMaxIndex);
  }
  CHECK(m.r2p == 1.0);
}

TEST_CASE("rollout: always-turn overflows at MaxIndex with zero reward") {
  SingleProfileSampler sampler(make_profile());
  ConstantEnginePolicy engine(make_action());
  const FixedCustomerPolicy turner = FixedCustomerPolicy::always(CustomerAction::kTurnPage);
  const auto sessions = rollout_sessions(engine, turner, sampler, 10, 9);
  for (const Session& s : sessions) {
    CHECK(s.steps.size() == kDefaultMaxIndex + 1);
    for (const StepRecord& r : s.steps) CHECK(r.reward == 0);
    s.validate(kDefaultMaxIndex);
  }
}

TEST_CASE("rollout: uniform customer policy hits 1/3 action frequencies") {
  SingleProfileSampler sampler(make_profile());
  ConstantEnginePolicy engine(make_action());
  const FixedCustomerPolicy uniform({1.0 / 3, 1.0 / 3, 1.0 / 3});
  const auto sessions = rollout_sessions(engine, uniform, sampler, 70000, 1234);
  std::array<std::size_t, 3> counts{};
  std::size_t total = 0;
  for (const Session& s : sessions)
    for (const StepRecord& r : s.steps) {
      ++counts[static_cast<int>(r.customer_action)];
      ++total;
    }
  REQUIRE(total > 100000);
  // turn-page frequency is undercounted only by overflow truncation, which the
  // page cap makes rare but not impossible
  for (int i = 0; i < 3; ++i) {
    const double freq = static_cast<double>(counts[i]) / static_cast<double>(total);
    CHECK(std::abs(freq - 1.0 / 3) < 0.01);
  }
}

TEST_CASE("rollout: sessions are well-formed under random policies") {
  SingleProfileSampler sampler(make_profile());
  UniformEnginePolicy engine(kDefaultActionDim);
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    NoisyCustomerPolicy customer(seed);
    const auto sessions = rollout_sessions(engine, customer, sampler, 500, seed);
    for (const Session& s : sessions) s.validate(kDefaultMaxIndex);
  }
}

TEST_CASE("rollout: deterministic given the seed and shard-invariant") {
  SingleProfileSampler sampler(make_profile());
  UniformEnginePolicy engine(kDefaultActionDim);
  NoisyCustomerPolicy customer(7);
  const auto serial = rollout_sessions(engine, customer, sampler, 400, 77);
  const auto repeat = rollout_sessions(engine, customer, sampler, 400, 77);
  const auto sharded = rollout_sessions(engine, customer, sampler, 400, 77, kDefaultMaxIndex,
                                        nullptr, 4);
  REQUIRE(serial.size() == repeat.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    CHECK(serial[i].steps.size() == repeat[i].steps.size());
    CHECK(serial[i].profile.request == repeat[i].profile.request);
    CHECK(serial[i].steps.size() == sharded[i].steps.size());
    for (std::size_t k = 0; k < serial[i].steps.size(); ++k) {
      CHECK(serial[i].steps[k].action.weights == sharded[i].steps[k].action.weights);
      CHECK(serial[i].steps[k].customer_action == sharded[i].steps[k].customer_action);
    }
  }
}

TEST_CASE("metrics: direct counting") {
  std::vector<Session> sessions;
  for (int i = 0; i < 10; ++i) {
    Session s;
    s.profile = make_profile();
    StepRecord r;
    r.action = make_action();
    r.page = 0;
    if (i == 0) {
      r.customer_action = CustomerAction::kBuy;
      r.reward = 1;
      r.price = 5.0;
    } else {
      r.customer_action = CustomerAction::kLeave;
      r.reward = 0;
    }
    s.steps.push_back(r);
    sessions.push_back(std::move(s));
  }
  const Metrics m = compute_metrics(sessions);
  CHECK(m.r2p == Catch::Approx(0.1));
  CHECK(m.tv == 1.0);
  CHECK(m.tt == Catch::Approx(5.0));

  SECTION("order and price invariance of R2P") {
    std::vector<Session> shuffled(sessions.rbegin(), sessions.rend());
    for (Session& s : shuffled)
      for (StepRecord& r : s.steps)
        if (r.price >= 0) r.price *= 100.0;
    CHECK(compute_metrics(shuffled).r2p == m.r2p);
  }

  SECTION("no purchases and saturation") {
    std::vector<Session> none(sessions.begin() + 1, sessions.end());
    const Metrics m0 = compute_metrics(none);
    CHECK(m0.r2p == 0.0);
    CHECK(m0.tv == 0.0);
    CHECK(m0.tt == 0.0);

    std::vector<Session> all(sessions.begin(), sessions.begin() + 1);
    CHECK(compute_metrics(all).r2p == 1.0);
  }

  SECTION("empty input rejected") {
    CHECK_THROWS_AS(compute_metrics(std::vector<Session>{}), std::invalid_argument);
  }
}

TEST_CASE("dataset: file round trip preserves everything") {
  SingleProfileSampler sampler(make_profile());
  UniformEnginePolicy engine(kDefaultActionDim);
  NoisyCustomerPolicy customer(3);

  class FixedPrice final : public PriceModel {
   public:
    double price(const CustomerProfile&, Rng&) const override { return 12.5; }
  };
  FixedPrice prices;

  Dataset ds;
  ds.meta = {"uniform-test", 4, 99};
  ds.sessions = rollout_sessions(engine, customer, sampler, 60, 99, kDefaultMaxIndex, &prices);

  std::ostringstream os;
  save_dataset(os, ds);
  const std::string text = os.str();
  CHECK(text.rfind("VTLAB-DATA v1\n", 0) == 0);

  std::istringstream is(text);
  const Dataset back = load_dataset(is);
  CHECK(back.meta.logging_policy_id == ds.meta.logging_policy_id);
  CHECK(back.meta.time_slice == 4);
  CHECK(back.meta.seed == 99);
  REQUIRE(back.sessions.size() == ds.sessions.size());
  for (std::size_t i = 0; i < ds.sessions.size(); ++i) {
    CHECK(back.sessions[i].profile.request == ds.sessions[i].profile.request);
    REQUIRE(back.sessions[i].steps.size() == ds.sessions[i].steps.size());
    for (std::size_t k = 0; k < ds.sessions[i].steps.size(); ++k) {
      const StepRecord& a = ds.sessions[i].steps[k];
      const StepRecord& b = back.sessions[i].steps[k];
      CHECK(a.action.weights == b.action.weights);
      CHECK(a.page == b.page);
      CHECK(a.customer_action == b.customer_action);
      CHECK(a.reward == b.reward);
      CHECK(a.price == b.price);
    }
  }

  SECTION("bad header rejected") {
    std::istringstream bad("VTLAB-DATA v2\n");
    CHECK_THROWS(load_dataset(bad));
  }
}

TEST_CASE("metrics csv shape") {
  std::vector<Session> sessions(1);
  sessions[0].profile = make_profile();
  StepRecord r;
  r.action = make_action();
  r.customer_action = CustomerAction::kLeave;
  sessions[0].steps.push_back(r);
  const std::string csv = metrics_csv(compute_metrics(sessions));
  CHECK(csv.rfind("metric,value\n", 0) == 0);
  CHECK(csv.find("r2p,0") != std::string::npos);
}

TEST_CASE("profile encoding: one-hot blocks plus request") {
  const CustomerProfile p = make_profile(3, 2, true);
  const std::vector<double> enc = encode_profile(p);
  REQUIRE(enc.size() == 17);
  CHECK(enc[2] == 1.0);        // category 3
  CHECK(enc[8 + 1] == 1.0);    // power 2
  CHECK(enc[11 + 1] == 1.0);   // high level
  double ones = 0.0;
  for (int i = 0; i < 13; ++i) ones += enc[i];
  CHECK(ones == 3.0);
  for (int i = 0; i < 4; ++i) CHECK(enc[13 + i] == p.request[i]);

  const CustomerState sc{p, make_action(), 5};
  const std::vector<double> senc = encode_state(sc, kDefaultMaxIndex);
  REQUIRE(senc.size() == 26);
  CHECK(senc[25] == 0.5);
}
