#pragma once

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vtlab/checkpoint.hpp"
#include "vtlab/domain.hpp"
#include "vtlab/io_util.hpp"
#include "vtlab/mlp.hpp"
#include "vtlab/optimizer.hpp"
#include "vtlab/rng.hpp"

namespace vtlab {

struct GansdConfig {
  int noise_dim = 10;
  double alpha = 1.0;        // entropy weight
  double beta = 1.0;         // KL weight
  int minibatch = 256;
  int gen_steps = 3;         // generator updates per discriminator update
  int iters = 2000;
  double lr_gen = 1e-3;
  double lr_disc = 1e-3;
  std::vector<int> hidden{64, 64};
  int request_dim = kDefaultRequestDim;

  void validate() const {
    if (alpha < 0.0 || beta < 0.0)
      throw std::invalid_argument("GansdConfig: alpha, beta must be >= 0");
    if (minibatch < 2) throw std::invalid_argument("GansdConfig: minibatch too small");
    if (noise_dim < 1) throw std::invalid_argument("GansdConfig: noise_dim must be positive");
  }
};

// per-block categorical distribution of the customer type V(.)
struct TypeDistribution {
  std::array<std::vector<double>, 3> blocks;

  TypeDistribution() {
    blocks[0].assign(kQueryCategories, 0.0);
    blocks[1].assign(kPurchasePowers, 0.0);
    blocks[2].assign(kHighLevels, 0.0);
  }

  static TypeDistribution from_profiles(std::span<const CustomerProfile> profiles) {
    if (profiles.empty()) throw std::invalid_argument("TypeDistribution: empty sample");
    TypeDistribution d;
    const double w = 1.0 / static_cast<double>(profiles.size());
    for (const CustomerProfile& p : profiles) {
      d.blocks[0][p.query_category - 1] += w;
      d.blocks[1][p.purchase_power - 1] += w;
      d.blocks[2][p.high_level ? 1 : 0] += w;
    }
    return d;
  }

  // minibatch mean of generator soft outputs (leading 13 entries)
  static TypeDistribution from_soft(std::span<const std::vector<double>> soft) {
    if (soft.empty()) throw std::invalid_argument("TypeDistribution: empty batch");
    TypeDistribution d;
    const double w = 1.0 / static_cast<double>(soft.size());
    for (const std::vector<double>& s : soft) {
      for (int i = 0; i < kQueryCategories; ++i) d.blocks[0][i] += w * s[i];
      for (int i = 0; i < kPurchasePowers; ++i) d.blocks[1][i] += w * s[kQueryCategories + i];
      for (int i = 0; i < kHighLevels; ++i)
        d.blocks[2][i] += w * s[kQueryCategories + kPurchasePowers + i];
    }
    return d;
  }

  double entropy() const {
    double h = 0.0;
    for (const auto& block : blocks)
      for (double p : block) {
        const double q = std::max(p, kProbFloor);
        h -= p * std::log(q);
      }
    return h;
  }

  double kl_to(const TypeDistribution& data) const {
    double kl = 0.0;
    for (int b = 0; b < 3; ++b)
      for (std::size_t i = 0; i < blocks[b].size(); ++i) {
        const double p = std::max(blocks[b][i], kProbFloor);
        const double q = std::max(data.blocks[b][i], kProbFloor);
        kl += blocks[b][i] * std::log(p / q);
      }
    return kl;
  }

  void validate() const {
    for (const auto& block : blocks) {
      double sum = 0.0;
      for (double p : block) sum += p;
      if (std::abs(sum - 1.0) > 1e-6)
        throw std::invalid_argument("TypeDistribution: block does not sum to 1");
    }
  }
};

// customer generator + discriminator pair trained by GAN-SD
class GansdModel {
 public:
  GansdModel() = default;

  GansdModel(const GansdConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    std::vector<int> gen_sizes{cfg_.noise_dim};
    for (int h : cfg_.hidden) gen_sizes.push_back(h);
    gen_sizes.push_back(kOneHotDim + cfg_.request_dim);
    generator_ = Mlp::glorot(gen_sizes, Hidden::kTanh, Output::kSoftmaxBlocks, rng,
                             {kQueryCategories, kPurchasePowers, kHighLevels});
    std::vector<int> disc_sizes{kOneHotDim + cfg_.request_dim};
    for (int h : cfg_.hidden) disc_sizes.push_back(h);
    disc_sizes.push_back(1);
    discriminator_ = Mlp::glorot(disc_sizes, Hidden::kTanh, Output::kSigmoid, rng);
  }

  GansdModel(GansdConfig cfg, Mlp generator, Mlp discriminator)
      : cfg_(std::move(cfg)),
        generator_(std::move(generator)),
        discriminator_(std::move(discriminator)) {}

  const GansdConfig& config() const { return cfg_; }
  Mlp& generator() { return generator_; }
  const Mlp& generator() const { return generator_; }
  Mlp& discriminator() { return discriminator_; }
  const Mlp& discriminator() const { return discriminator_; }

  // soft output: three probability blocks then the raw request head
  std::vector<double> soft_sample(std::span<const double> z) const {
    return generator_.forward(z);
  }

  // discriminator input space: probability blocks + unit-normalized request
  std::vector<double> encode_soft(const std::vector<double>& soft) const {
    std::vector<double> x = soft;
    double norm = 0.0;
    for (int i = 0; i < cfg_.request_dim; ++i)
      norm += soft[kOneHotDim + i] * soft[kOneHotDim + i];
    norm = std::sqrt(norm);
    if (norm < 1e-12) {
      const double fill = 1.0 / std::sqrt(static_cast<double>(cfg_.request_dim));
      for (int i = 0; i < cfg_.request_dim; ++i) x[kOneHotDim + i] = fill;
    } else {
      for (int i = 0; i < cfg_.request_dim; ++i) x[kOneHotDim + i] = soft[kOneHotDim + i] / norm;
    }
    return x;
  }

  CustomerProfile hard_sample(const std::vector<double>& soft, Rng& rng) const {
    CustomerProfile p;
    p.query_category = 1 + rng.categorical(std::span(soft.data(), kQueryCategories));
    p.purchase_power =
        1 + rng.categorical(std::span(soft.data() + kQueryCategories, kPurchasePowers));
    p.high_level =
        rng.categorical(std::span(soft.data() + kQueryCategories + kPurchasePowers, kHighLevels)) ==
        1;
    const std::vector<double> enc = encode_soft(soft);
    p.request.assign(enc.begin() + kOneHotDim, enc.end());
    return p;
  }

  std::vector<CustomerProfile> sample_customers(std::size_t count, std::uint64_t seed) const {
    std::vector<CustomerProfile> out(count);
    std::vector<double> z(cfg_.noise_dim);
    for (std::size_t i = 0; i < count; ++i) {
      Rng rng = Rng::stream(seed, i);
      for (double& v : z) v = rng.normal();
      out[i] = hard_sample(soft_sample(z), rng);
    }
    return out;
  }

 private:
  GansdConfig cfg_;
  Mlp generator_;
  Mlp discriminator_;
};

// the generator acts as the learned customer distribution P^c
class GansdSampler final : public CustomerSampler {
 public:
  explicit GansdSampler(GansdModel model) : model_(std::move(model)) {}
  CustomerProfile sample(Rng& rng) const override {
    std::vector<double> z(model_.config().noise_dim);
    for (double& v : z) v = rng.normal();
    return model_.hard_sample(model_.soft_sample(z), rng);
  }
  const GansdModel& model() const { return model_; }

 private:
  GansdModel model_;
};

// negated generator objective: -[mean D(G(z)) + alpha H(V^) - beta KL(V^ || V)]
inline double gansd_generator_loss(std::span<const std::vector<double>> soft_batch,
                                   const TypeDistribution& data_types, const GansdModel& model,
                                   double alpha, double beta) {
  if (soft_batch.empty()) throw std::invalid_argument("gansd_generator_loss: empty batch");
  double mean_d = 0.0;
  for (const std::vector<double>& soft : soft_batch)
    mean_d += model.discriminator().forward(model.encode_soft(soft))[0];
  mean_d /= static_cast<double>(soft_batch.size());
  const TypeDistribution v_hat = TypeDistribution::from_soft(soft_batch);
  return -(mean_d + alpha * v_hat.entropy() - beta * v_hat.kl_to(data_types));
}

// negated discriminator objective: -[mean log D(x) + mean log(1 - D(g))]
inline double gansd_discriminator_loss(std::span<const std::vector<double>> real_enc,
                                       std::span<const std::vector<double>> gen_enc,
                                       const Mlp& discriminator) {
  if (real_enc.empty() || gen_enc.empty())
    throw std::invalid_argument("gansd_discriminator_loss: empty batch");
  double objective = 0.0;
  for (const std::vector<double>& x : real_enc) {
    const double d = std::clamp(discriminator.forward(x)[0], kProbFloor, 1.0 - kProbFloor);
    objective += std::log(d) / static_cast<double>(real_enc.size());
  }
  for (const std::vector<double>& x : gen_enc) {
    const double d = std::clamp(discriminator.forward(x)[0], kProbFloor, 1.0 - kProbFloor);
    objective += std::log(1.0 - d) / static_cast<double>(gen_enc.size());
  }
  return -objective;
}

struct GansdCurvePoint {
  int iter = 0;
  double d_loss = 0.0;
  double g_loss = 0.0;
  double type_entropy = 0.0;
  double type_kl = 0.0;
};

struct GansdTrainResult {
  GansdModel model;
  std::vector<GansdCurvePoint> curve;

  std::string curve_csv() const {
    CsvWriter csv("iter,d_loss,g_loss,type_entropy,type_kl");
    for (const GansdCurvePoint& p : curve)
      csv.row({std::to_string(p.iter), fmt_double(p.d_loss), fmt_double(p.g_loss),
               fmt_double(p.type_entropy), fmt_double(p.type_kl)});
    return csv.str();
  }
};

namespace detail {

// gradient of the generator loss for one minibatch, accumulated flat;
// returns the loss value
inline double gansd_generator_step_grad(GansdModel& model, const TypeDistribution& data_types,
                                        std::span<const std::vector<double>> noise,
                                        double alpha, double beta, std::span<double> grad) {
  const std::size_t batch = noise.size();
  const int request_dim = model.config().request_dim;
  const double inv_b = 1.0 / static_cast<double>(batch);

  std::vector<Mlp::Trace> traces(batch);
  std::vector<std::vector<double>> soft(batch);
  for (std::size_t i = 0; i < batch; ++i)
    model.generator().forward(noise[i], soft[i], traces[i]);

  const TypeDistribution v_hat = TypeDistribution::from_soft(soft);
  double mean_d = 0.0;

  // per-entry regularizer gradient, shared across the batch
  std::vector<double> reg_grad(kOneHotDim, 0.0);
  int at = 0;
  for (int b = 0; b < 3; ++b) {
    for (std::size_t j = 0; j < v_hat.blocks[b].size(); ++j) {
      const double vh = std::max(v_hat.blocks[b][j], kProbFloor);
      const double vd = std::max(data_types.blocks[b][j], kProbFloor);
      reg_grad[at] = alpha * (std::log(vh) + 1.0) + beta * (std::log(vh / vd) + 1.0);
      ++at;
    }
  }

  std::vector<double> disc_scratch(model.discriminator().param_count(), 0.0);
  Mlp::Trace disc_trace;
  std::vector<double> d_out, input_grad, upstream(kOneHotDim + request_dim);
  for (std::size_t i = 0; i < batch; ++i) {
    const std::vector<double> x = model.encode_soft(soft[i]);
    model.discriminator().forward(x, d_out, disc_trace);
    mean_d += d_out[0] * inv_b;
    std::fill(disc_scratch.begin(), disc_scratch.end(), 0.0);
    model.discriminator().backward(disc_trace, std::vector<double>{1.0}, disc_scratch,
                                   &input_grad);

    // adversarial term -mean D plus regularizers through the block means
    for (int j = 0; j < kOneHotDim; ++j)
      upstream[j] = -inv_b * input_grad[j] + inv_b * reg_grad[j];

    // pull the normalized-request gradient back through r / |r|
    double norm = 0.0, inner = 0.0;
    for (int j = 0; j < request_dim; ++j)
      norm += soft[i][kOneHotDim + j] * soft[i][kOneHotDim + j];
    norm = std::sqrt(norm);
    if (norm < 1e-12) {
      for (int j = 0; j < request_dim; ++j) upstream[kOneHotDim + j] = 0.0;
    } else {
      for (int j = 0; j < request_dim; ++j)
        inner += input_grad[kOneHotDim + j] * x[kOneHotDim + j];
      for (int j = 0; j < request_dim; ++j)
        upstream[kOneHotDim + j] =
            -inv_b * (input_grad[kOneHotDim + j] - inner * x[kOneHotDim + j]) / norm;
    }
    model.generator().backward(traces[i], upstream, grad);
  }
  return -(mean_d + alpha * v_hat.entropy() - beta * v_hat.kl_to(data_types));
}

// gradient of the discriminator loss; returns the loss value
inline double gansd_discriminator_step_grad(GansdModel& model,
                                            std::span<const std::vector<double>> real_enc,
                                            std::span<const std::vector<double>> gen_enc,
                                            std::span<double> grad) {
  Mlp::Trace trace;
  std::vector<double> out;
  double objective = 0.0;
  const double inv_r = 1.0 / static_cast<double>(real_enc.size());
  const double inv_g = 1.0 / static_cast<double>(gen_enc.size());
  for (const std::vector<double>& x : real_enc) {
    model.discriminator().forward(x, out, trace);
    const double d = std::clamp(out[0], kProbFloor, 1.0 - kProbFloor);
    objective += std::log(d) * inv_r;
    // minimize the negated objective
    model.discriminator().backward(trace, std::vector<double>{-inv_r / d}, grad);
  }
  for (const std::vector<double>& x : gen_enc) {
    model.discriminator().forward(x, out, trace);
    const double d = std::clamp(out[0], kProbFloor, 1.0 - kProbFloor);
    objective += std::log(1.0 - d) * inv_g;
    model.discriminator().backward(trace, std::vector<double>{inv_g / (1.0 - d)}, grad);
  }
  return -objective;
}

}  // namespace detail

inline GansdTrainResult train_gansd(std::span<const CustomerProfile> data,
                                    const GansdConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train_gansd: empty dataset");
  Rng init_rng = Rng::stream(seed, 0);
  GansdTrainResult result;
  result.model = GansdModel(cfg, init_rng);
  GansdModel& model = result.model;

  Optimizer gen_opt = Optimizer::adam(model.generator().param_count(), cfg.lr_gen);
  Optimizer disc_opt = Optimizer::adam(model.discriminator().param_count(), cfg.lr_disc);

  std::vector<double> gen_params(model.generator().param_count());
  std::vector<double> gen_grad(model.generator().param_count());
  std::vector<double> disc_params(model.discriminator().param_count());
  std::vector<double> disc_grad(model.discriminator().param_count());

  Rng rng = Rng::stream(seed, 1);
  std::vector<std::vector<double>> noise(cfg.minibatch,
                                         std::vector<double>(cfg.noise_dim));
  const auto fresh_noise = [&] {
    for (auto& z : noise)
      for (double& v : z) v = rng.normal();
  };
  const auto data_minibatch_types = [&] {
    std::vector<CustomerProfile> batch(cfg.minibatch);
    for (int i = 0; i < cfg.minibatch; ++i)
      batch[i] = data[rng.uniform_int(static_cast<int>(data.size()))];
    return TypeDistribution::from_profiles(batch);
  };

  for (int iter = 0; iter < cfg.iters; ++iter) {
    GansdCurvePoint point;
    point.iter = iter;
    for (int k = 0; k < cfg.gen_steps; ++k) {
      fresh_noise();
      const TypeDistribution types = data_minibatch_types();
      std::fill(gen_grad.begin(), gen_grad.end(), 0.0);
      point.g_loss =
          detail::gansd_generator_step_grad(model, types, noise, cfg.alpha, cfg.beta, gen_grad);
      if (!std::isfinite(point.g_loss))
        throw std::runtime_error("train_gansd: generator loss diverged at iter " +
                                 std::to_string(iter));
      model.generator().params_to(gen_params);
      gen_opt.step(gen_params, gen_grad);
      model.generator().params_from(gen_params);
    }

    fresh_noise();
    std::vector<std::vector<double>> gen_enc(cfg.minibatch), real_enc(cfg.minibatch);
    std::vector<std::vector<double>> soft(cfg.minibatch);
    for (int i = 0; i < cfg.minibatch; ++i) {
      soft[i] = model.soft_sample(noise[i]);
      gen_enc[i] = model.encode_soft(soft[i]);
      real_enc[i] = encode_profile(data[rng.uniform_int(static_cast<int>(data.size()))]);
    }
    std::fill(disc_grad.begin(), disc_grad.end(), 0.0);
    point.d_loss = detail::gansd_discriminator_step_grad(model, real_enc, gen_enc, disc_grad);
    if (!std::isfinite(point.d_loss))
      throw std::runtime_error("train_gansd: discriminator loss diverged at iter " +
                               std::to_string(iter));
    model.discriminator().params_to(disc_params);
    disc_opt.step(disc_params, disc_grad);
    model.discriminator().params_from(disc_params);

    const TypeDistribution v_hat = TypeDistribution::from_soft(soft);
    point.type_entropy = v_hat.entropy();
    point.type_kl = v_hat.kl_to(TypeDistribution::from_profiles(data));
    result.curve.push_back(point);
  }
  return result;
}

inline GansdTrainResult train_gansd(const Dataset& dataset, const GansdConfig& cfg,
                                    std::uint64_t seed) {
  std::vector<CustomerProfile> profiles;
  profiles.reserve(dataset.sessions.size());
  for (const Session& s : dataset.sessions) profiles.push_back(s.profile);
  return train_gansd(profiles, cfg, seed);
}

inline void gansd_to_checkpoint(const GansdModel& model, ModelCheckpoint& out) {
  mlp_to_checkpoint(model.generator(), "gansd/generator", out);
  mlp_to_checkpoint(model.discriminator(), "gansd/discriminator", out);
  out.emplace("gansd/meta",
              Tensor({4}, {static_cast<double>(model.config().noise_dim),
                           static_cast<double>(model.config().request_dim),
                           model.config().alpha, model.config().beta}));
}

inline GansdModel gansd_from_checkpoint(const ModelCheckpoint& ckpt) {
  const auto it = ckpt.find("gansd/meta");
  if (it == ckpt.end()) throw std::runtime_error("checkpoint: missing gansd/meta");
  GansdConfig cfg;
  cfg.noise_dim = static_cast<int>(it->second.data.at(0));
  cfg.request_dim = static_cast<int>(it->second.data.at(1));
  cfg.alpha = it->second.data.at(2);
  cfg.beta = it->second.data.at(3);
  return GansdModel(cfg, mlp_from_checkpoint(ckpt, "gansd/generator"),
                    mlp_from_checkpoint(ckpt, "gansd/discriminator"));
}

}  // namespace vtlab
