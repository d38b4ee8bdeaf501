#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "vtlab/gansd.hpp"
#include "vtlab/gradcheck.hpp"
#include "vtlab/oracle.hpp"

using namespace vtlab;

namespace {

GansdConfig small_config() {
  GansdConfig cfg;
  cfg.noise_dim = 4;
  cfg.hidden = {12};
  cfg.minibatch = 16;
  cfg.request_dim = 4;
  return cfg;
}

std::vector<CustomerProfile> two_mode_data(std::size_t count) {
  CustomerProfile a{1, 1, false, normalized({1.0, 0.2, 0.0, 0.0})};
  CustomerProfile b{5, 3, true, normalized({0.0, -0.3, 1.0, 0.1})};
  std::vector<CustomerProfile> data;
  for (std::size_t i = 0; i < count; ++i) data.push_back(i % 2 ? a : b);
  return data;
}

double mode_frequency(std::span<const CustomerProfile> sample, const CustomerProfile& mode) {
  std::size_t hits = 0;
  for (const CustomerProfile& p : sample)
    if (p.query_category == mode.query_category && p.purchase_power == mode.purchase_power &&
        p.high_level == mode.high_level)
      ++hits;
  return static_cast<double>(hits) / static_cast<double>(sample.size());
}

double sampled_type_entropy(std::span<const CustomerProfile> sample) {
  return TypeDistribution::from_profiles(sample).entropy();
}

}  // namespace

TEST_CASE("type distribution: KL of a distribution to itself is zero") {
  const auto data = two_mode_data(64);
  const TypeDistribution d = TypeDistribution::from_profiles(data);
  CHECK(d.kl_to(d) == Catch::Approx(0.0).margin(1e-9));
  d.validate();
}

TEST_CASE("type distribution: uniform block contributes ln of its size") {
  TypeDistribution d;
  d.blocks[0].assign(kQueryCategories, 1.0 / kQueryCategories);
  d.blocks[1] = {1.0, 0.0, 0.0};
  d.blocks[2] = {1.0, 0.0};
  CHECK(d.entropy() == Catch::Approx(std::log(8.0)).margin(1e-6));
}

TEST_CASE("generator loss: alpha = beta = 0 reduces to the adversarial term") {
  Rng rng(3);
  GansdModel model(small_config(), rng);
  std::vector<std::vector<double>> soft;
  std::vector<double> z(4);
  for (int i = 0; i < 8; ++i) {
    for (double& v : z) v = rng.normal();
    soft.push_back(model.soft_sample(z));
  }
  const TypeDistribution data = TypeDistribution::from_profiles(two_mode_data(32));
  double mean_d = 0.0;
  for (const auto& s : soft) mean_d += model.discriminator().forward(model.encode_soft(s))[0];
  mean_d /= 8.0;
  CHECK(gansd_generator_loss(soft, data, model, 0.0, 0.0) ==
        Catch::Approx(-mean_d).epsilon(1e-12));
  CHECK_THROWS_AS(gansd_generator_loss({}, data, model, 1.0, 1.0), std::invalid_argument);
}

TEST_CASE("generator loss: matching the data types kills the KL term") {
  Rng rng(5);
  GansdModel model(small_config(), rng);
  // hand-build a soft batch whose block means equal the data distribution
  const auto data = two_mode_data(32);
  const TypeDistribution target = TypeDistribution::from_profiles(data);
  std::vector<double> soft_row(kOneHotDim + 4, 0.0);
  int at = 0;
  for (int b = 0; b < 3; ++b)
    for (double p : target.blocks[b]) soft_row[at++] = p;
  soft_row[kOneHotDim] = 1.0;
  const std::vector<std::vector<double>> soft(10, soft_row);
  const double with_kl = gansd_generator_loss(soft, target, model, 0.0, 5.0);
  const double without = gansd_generator_loss(soft, target, model, 0.0, 0.0);
  CHECK(with_kl == Catch::Approx(without).margin(1e-9));
}

TEST_CASE("discriminator loss: the constant-half discriminator scores 2 ln 2") {
  GansdConfig cfg = small_config();
  Mlp flat_disc({kOneHotDim + 4, 1}, Hidden::kTanh, Output::kSigmoid);  // zero net: D = 0.5
  const std::vector<std::vector<double>> real(4, std::vector<double>(kOneHotDim + 4, 0.3));
  const std::vector<std::vector<double>> gen(6, std::vector<double>(kOneHotDim + 4, -0.2));
  const double loss = gansd_discriminator_loss(real, gen, flat_disc);
  CHECK(loss == Catch::Approx(-2.0 * std::log(0.5)).epsilon(1e-12));
  CHECK_THROWS_AS(gansd_discriminator_loss({}, gen, flat_disc), std::invalid_argument);
}

TEST_CASE("discriminator loss: a separating discriminator approaches zero loss") {
  Mlp disc({2, 1}, Hidden::kTanh, Output::kSigmoid);
  disc.weights(0) = {30.0, 0.0};  // keys on the first coordinate
  disc.biases(0) = {-15.0};
  const std::vector<std::vector<double>> real(4, std::vector<double>{1.0, 0.0});
  const std::vector<std::vector<double>> gen(4, std::vector<double>{0.0, 0.0});
  CHECK(gansd_discriminator_loss(real, gen, disc) < 1e-5);
}

TEST_CASE("discriminator loss: swapping batch labels swaps the terms") {
  Rng rng(7);
  GansdModel model(small_config(), rng);
  std::vector<std::vector<double>> a, b;
  for (int i = 0; i < 5; ++i) {
    std::vector<double> xa(kOneHotDim + 4), xb(kOneHotDim + 4);
    for (double& v : xa) v = rng.uniform();
    for (double& v : xb) v = rng.uniform();
    a.push_back(xa);
    b.push_back(xb);
  }
  const Mlp& d = model.discriminator();
  const auto term_log_d = [&](const std::vector<std::vector<double>>& batch) {
    double s = 0.0;
    for (const auto& x : batch) s += std::log(std::clamp(d.forward(x)[0], 1e-8, 1.0 - 1e-8));
    return s / batch.size();
  };
  const auto term_log_1md = [&](const std::vector<std::vector<double>>& batch) {
    double s = 0.0;
    for (const auto& x : batch)
      s += std::log(1.0 - std::clamp(d.forward(x)[0], 1e-8, 1.0 - 1e-8));
    return s / batch.size();
  };
  CHECK(gansd_discriminator_loss(a, b, d) ==
        Catch::Approx(-(term_log_d(a) + term_log_1md(b))).epsilon(1e-12));
  CHECK(gansd_discriminator_loss(b, a, d) ==
        Catch::Approx(-(term_log_d(b) + term_log_1md(a))).epsilon(1e-12));
}

TEST_CASE("generator gradient: matches finite differences through the whole objective") {
  Rng rng(11);
  GansdConfig cfg = small_config();
  GansdModel model(cfg, rng);
  const TypeDistribution types = TypeDistribution::from_profiles(two_mode_data(32));
  std::vector<std::vector<double>> noise(6, std::vector<double>(cfg.noise_dim));
  for (auto& z : noise)
    for (double& v : z) v = rng.normal();

  std::vector<double> analytic(model.generator().param_count(), 0.0);
  detail::gansd_generator_step_grad(model, types, noise, 1.0, 1.0, analytic);

  std::vector<double> params(model.generator().param_count());
  model.generator().params_to(params);
  GansdModel probe = model;
  const std::vector<double> fd = finite_difference_gradient(
      [&](std::span<const double> p) {
        probe.generator().params_from(p);
        std::vector<std::vector<double>> soft;
        for (const auto& z : noise) soft.push_back(probe.soft_sample(z));
        return gansd_generator_loss(soft, types, probe, 1.0, 1.0);
      },
      params, 1e-5);
  CHECK(max_relative_error(analytic, fd, 1e-5) < 1e-4);
}

TEST_CASE("discriminator gradient: matches finite differences") {
  Rng rng(13);
  GansdConfig cfg = small_config();
  GansdModel model(cfg, rng);
  std::vector<std::vector<double>> real, gen;
  for (int i = 0; i < 5; ++i) {
    std::vector<double> xr(kOneHotDim + 4), xg(kOneHotDim + 4);
    for (double& v : xr) v = rng.uniform();
    for (double& v : xg) v = rng.uniform();
    real.push_back(xr);
    gen.push_back(xg);
  }
  std::vector<double> analytic(model.discriminator().param_count(), 0.0);
  detail::gansd_discriminator_step_grad(model, real, gen, analytic);

  std::vector<double> params(model.discriminator().param_count());
  model.discriminator().params_to(params);
  GansdModel probe = model;
  const std::vector<double> fd = finite_difference_gradient(
      [&](std::span<const double> p) {
        probe.discriminator().params_from(p);
        return gansd_discriminator_loss(real, gen, probe.discriminator());
      },
      params, 1e-5);
  CHECK(max_relative_error(analytic, fd, 1e-5) < 1e-4);
}

TEST_CASE("training: point-mass data is reproduced") {
  CustomerProfile mode{4, 2, true, normalized({0.5, 0.5, -0.5, 0.5})};
  const std::vector<CustomerProfile> data(256, mode);
  GansdConfig cfg;
  cfg.iters = 400;
  cfg.minibatch = 128;
  const GansdTrainResult result = train_gansd(data, cfg, 17);
  const auto sample = result.model.sample_customers(100000, 23);
  const TypeDistribution got = TypeDistribution::from_profiles(sample);
  const TypeDistribution want = TypeDistribution::from_profiles(data);
  for (int b = 0; b < 3; ++b) {
    double tv = 0.0;
    for (std::size_t i = 0; i < got.blocks[b].size(); ++i)
      tv += std::abs(got.blocks[b][i] - want.blocks[b][i]);
    CHECK(0.5 * tv < 0.02);
  }
  for (const GansdCurvePoint& p : result.curve) {
    CHECK(std::isfinite(p.d_loss));
    CHECK(std::isfinite(p.g_loss));
  }
}

TEST_CASE("training: both modes of a 50/50 benchmark survive with alpha = beta = 1") {
  const auto data = two_mode_data(512);
  GansdConfig cfg;
  cfg.iters = 700;
  const GansdTrainResult result = train_gansd(data, cfg, 29);
  const auto sample = result.model.sample_customers(100000, 31);
  const double f_a = mode_frequency(sample, data[1]);  // cat 1 mode
  const double f_b = mode_frequency(sample, data[0]);  // cat 5 mode
  INFO("mode frequencies " << f_a << " " << f_b);
  CHECK(f_a >= 0.4);
  CHECK(f_b >= 0.4);
  CHECK(sampled_type_entropy(sample) >=
        0.9 * TypeDistribution::from_profiles(data).entropy());
}

TEST_CASE("training: entropy weight does not reduce sampled-type entropy") {
  const auto data = two_mode_data(512);
  std::vector<double> gain;
  for (std::uint64_t seed : {41ull, 43ull, 47ull}) {
    GansdConfig cfg;
    cfg.iters = 350;
    cfg.beta = 0.0;
    cfg.alpha = 0.0;
    const auto base = train_gansd(data, cfg, seed);
    cfg.alpha = 1.0;
    const auto reg = train_gansd(data, cfg, seed);
    const double h_base = sampled_type_entropy(base.model.sample_customers(20000, seed + 1));
    const double h_reg = sampled_type_entropy(reg.model.sample_customers(20000, seed + 1));
    gain.push_back(h_reg - h_base);
  }
  std::sort(gain.begin(), gain.end());
  INFO("entropy gains " << gain[0] << " " << gain[1] << " " << gain[2]);
  CHECK(gain[1] >= 0.0);  // median over seeds
}

TEST_CASE("sampling: outputs are valid profiles and count zero is empty") {
  Rng rng(53);
  GansdModel model(small_config(), rng);
  CHECK(model.sample_customers(0, 1).empty());
  for (const CustomerProfile& p : model.sample_customers(10000, 3)) p.validate();
}

TEST_CASE("sampling: hard marginals track the generator's soft marginals") {
  Rng rng(59);
  GansdConfig cfg = small_config();
  GansdModel model(cfg, rng);
  std::array<double, kOneHotDim> soft_mean{};
  std::array<double, kOneHotDim> hard_freq{};
  const std::size_t n = 1000000;
  std::vector<double> z(cfg.noise_dim);
  for (std::size_t i = 0; i < n; ++i) {
    Rng stream = Rng::stream(61, i);
    for (double& v : z) v = stream.normal();
    const std::vector<double> soft = model.soft_sample(z);
    const CustomerProfile p = model.hard_sample(soft, stream);
    for (int j = 0; j < kOneHotDim; ++j) soft_mean[j] += soft[j];
    hard_freq[p.query_category - 1] += 1.0;
    hard_freq[kQueryCategories + p.purchase_power - 1] += 1.0;
    hard_freq[kQueryCategories + kPurchasePowers + (p.high_level ? 1 : 0)] += 1.0;
  }
  for (int j = 0; j < kOneHotDim; ++j) {
    soft_mean[j] /= static_cast<double>(n);
    hard_freq[j] /= static_cast<double>(n);
    CHECK(std::abs(soft_mean[j] - hard_freq[j]) < 0.01);
  }
}
