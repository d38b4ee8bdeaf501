#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vtlab/rng.hpp"
#include "vtlab/tensor.hpp"

namespace vtlab {

enum class Hidden { kTanh, kRelu };

// kSoftmaxBlocks: softmax applied per block over the leading sum(blocks)
// outputs, remaining outputs linear
enum class Output { kIdentity, kSigmoid, kSoftmaxBlocks };

// raised when a non-finite value shows up inside a pass; layer is 0-based
struct NumericFault : std::runtime_error {
  explicit NumericFault(int layer_index)
      : std::runtime_error("numeric fault in layer " + std::to_string(layer_index)),
        layer(layer_index) {}
  int layer;
};

// fixed-topology fully connected net, 64-bit arithmetic throughout
class Mlp {
 public:
  Mlp() = default;

  Mlp(std::vector<int> layer_sizes, Hidden hidden, Output output,
      std::vector<int> softmax_blocks = {})
      : sizes_(std::move(layer_sizes)),
        hidden_(hidden),
        output_(output),
        blocks_(std::move(softmax_blocks)) {
    if (sizes_.size() < 2) throw std::invalid_argument("Mlp: need at least input and output sizes");
    for (int s : sizes_)
      if (s <= 0) throw std::invalid_argument("Mlp: layer sizes must be positive");
    if (output_ == Output::kSoftmaxBlocks) {
      int total = 0;
      for (int b : blocks_) {
        if (b <= 0) throw std::invalid_argument("Mlp: block sizes must be positive");
        total += b;
      }
      if (blocks_.empty() || total > sizes_.back())
        throw std::invalid_argument("Mlp: softmax blocks exceed output size");
    }
    weights_.resize(layer_count());
    biases_.resize(layer_count());
    for (int l = 0; l < layer_count(); ++l) {
      weights_[l].assign(static_cast<std::size_t>(sizes_[l + 1]) * sizes_[l], 0.0);
      biases_[l].assign(sizes_[l + 1], 0.0);
    }
  }

  // uniform +-sqrt(6 / (fan_in + fan_out)), zero biases
  static Mlp glorot(std::vector<int> layer_sizes, Hidden hidden, Output output, Rng& rng,
                    std::vector<int> softmax_blocks = {}) {
    Mlp net(std::move(layer_sizes), hidden, output, std::move(softmax_blocks));
    for (int l = 0; l < net.layer_count(); ++l) {
      const double bound = std::sqrt(6.0 / (net.sizes_[l] + net.sizes_[l + 1]));
      for (double& w : net.weights_[l]) w = rng.uniform(-bound, bound);
    }
    return net;
  }

  int layer_count() const { return static_cast<int>(sizes_.size()) - 1; }
  int in_dim() const { return sizes_.front(); }
  int out_dim() const { return sizes_.back(); }
  const std::vector<int>& layer_sizes() const { return sizes_; }
  Hidden hidden_activation() const { return hidden_; }
  Output output_activation() const { return output_; }
  const std::vector<int>& softmax_blocks() const { return blocks_; }

  std::vector<double>& weights(int l) { return weights_[l]; }
  const std::vector<double>& weights(int l) const { return weights_[l]; }
  std::vector<double>& biases(int l) { return biases_[l]; }
  const std::vector<double>& biases(int l) const { return biases_[l]; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (int l = 0; l < layer_count(); ++l) n += weights_[l].size() + biases_[l].size();
    return n;
  }

  void params_to(std::span<double> out) const {
    require(out.size() == param_count(), "params_to: size mismatch");
    std::size_t k = 0;
    for (int l = 0; l < layer_count(); ++l) {
      for (double w : weights_[l]) out[k++] = w;
      for (double b : biases_[l]) out[k++] = b;
    }
  }

  void params_from(std::span<const double> in) {
    require(in.size() == param_count(), "params_from: size mismatch");
    std::size_t k = 0;
    for (int l = 0; l < layer_count(); ++l) {
      for (double& w : weights_[l]) w = in[k++];
      for (double& b : biases_[l]) b = in[k++];
    }
  }

  // per-sample intermediates kept for backward / jvp
  struct Trace {
    std::vector<std::vector<double>> act;  // act[0] = input, act[L] = output
    std::vector<std::vector<double>> pre;  // pre[l] = pre-activation of layer l
  };

  void forward(std::span<const double> input, std::vector<double>& output) const {
    thread_local Trace scratch;
    forward(input, output, scratch);
  }

  std::vector<double> forward(std::span<const double> input) const {
    std::vector<double> out;
    forward(input, out);
    return out;
  }

  void forward(std::span<const double> input, std::vector<double>& output, Trace& trace) const {
    require(static_cast<int>(input.size()) == in_dim(), "forward: bad input dimension");
    const int L = layer_count();
    trace.act.resize(L + 1);
    trace.pre.resize(L);
    trace.act[0].assign(input.begin(), input.end());
    for (int l = 0; l < L; ++l) {
      affine(l, trace.act[l], trace.pre[l]);
      trace.act[l + 1].resize(sizes_[l + 1]);
      if (l + 1 < L)
        apply_hidden(trace.pre[l], trace.act[l + 1]);
      else
        apply_output(trace.pre[l], trace.act[l + 1]);
    }
    output = trace.act[L];
  }

  // upstream is d(loss)/d(post-activation output); parameter gradients are
  // accumulated into grad_accum (flat, same layout as params_to)
  void backward(const Trace& trace, std::span<const double> upstream,
                std::span<double> grad_accum, std::vector<double>* input_grad = nullptr) const {
    require(static_cast<int>(upstream.size()) == out_dim(), "backward: bad upstream dimension");
    require(grad_accum.size() == param_count(), "backward: bad gradient buffer");
    const int L = layer_count();
    std::vector<double> delta(upstream.begin(), upstream.end());
    output_jacobian_transpose(trace.act[L], trace.pre[L - 1], delta);
    check_finite(delta, L - 1);

    // flat offsets per layer
    std::vector<std::size_t> offset(L);
    std::size_t k = 0;
    for (int l = 0; l < L; ++l) {
      offset[l] = k;
      k += weights_[l].size() + biases_[l].size();
    }

    for (int l = L - 1; l >= 0; --l) {
      const int rows = sizes_[l + 1], cols = sizes_[l];
      double* gw = grad_accum.data() + offset[l];
      double* gb = gw + weights_[l].size();
      const std::vector<double>& below = trace.act[l];
      for (int r = 0; r < rows; ++r) {
        const double d = delta[r];
        double* gwr = gw + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) gwr[c] += d * below[c];
        gb[r] += d;
      }
      if (l == 0) {
        if (input_grad) {
          input_grad->assign(cols, 0.0);
          for (int r = 0; r < rows; ++r) {
            const double d = delta[r];
            const double* wr = weights_[l].data() + static_cast<std::size_t>(r) * cols;
            for (int c = 0; c < cols; ++c) (*input_grad)[c] += d * wr[c];
          }
        }
        break;
      }
      std::vector<double> next(cols, 0.0);
      for (int r = 0; r < rows; ++r) {
        const double d = delta[r];
        const double* wr = weights_[l].data() + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) next[c] += d * wr[c];
      }
      hidden_jacobian_transpose(trace.act[l], trace.pre[l - 1], next);
      check_finite(next, l - 1);
      delta = std::move(next);
    }
  }

  // forward-mode directional derivative of the post-activation output with
  // respect to a flat parameter direction v, input held fixed
  void jvp(const Trace& trace, std::span<const double> v, std::vector<double>& out_tangent) const {
    require(v.size() == param_count(), "jvp: bad direction size");
    const int L = layer_count();
    std::vector<double> tangent(sizes_[0], 0.0);
    std::size_t k = 0;
    std::vector<double> pre_tangent;
    for (int l = 0; l < L; ++l) {
      const int rows = sizes_[l + 1], cols = sizes_[l];
      const double* vw = v.data() + k;
      const double* vb = vw + weights_[l].size();
      pre_tangent.assign(rows, 0.0);
      for (int r = 0; r < rows; ++r) {
        double s = vb[r];
        const double* vwr = vw + static_cast<std::size_t>(r) * cols;
        const double* wr = weights_[l].data() + static_cast<std::size_t>(r) * cols;
        const std::vector<double>& below = trace.act[l];
        for (int c = 0; c < cols; ++c) s += vwr[c] * below[c] + wr[c] * tangent[c];
        pre_tangent[r] = s;
      }
      k += weights_[l].size() + biases_[l].size();
      tangent.resize(rows);
      if (l + 1 < L) {
        for (int r = 0; r < rows; ++r)
          tangent[r] = hidden_derivative(trace.act[l + 1][r], trace.pre[l][r]) * pre_tangent[r];
      } else {
        output_jacobian(trace.act[L], trace.pre[l], pre_tangent, tangent);
      }
    }
    out_tangent = tangent;
  }

 private:
  static void require(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
  }

  void affine(int l, const std::vector<double>& in, std::vector<double>& out) const {
    const int rows = sizes_[l + 1], cols = sizes_[l];
    out.resize(rows);
    for (int r = 0; r < rows; ++r) {
      const double* wr = weights_[l].data() + static_cast<std::size_t>(r) * cols;
      double s = biases_[l][r];
      for (int c = 0; c < cols; ++c) s += wr[c] * in[c];
      out[r] = s;
    }
  }

  void apply_hidden(const std::vector<double>& pre, std::vector<double>& out) const {
    if (hidden_ == Hidden::kTanh)
      for (std::size_t i = 0; i < pre.size(); ++i) out[i] = std::tanh(pre[i]);
    else
      for (std::size_t i = 0; i < pre.size(); ++i) out[i] = pre[i] > 0.0 ? pre[i] : 0.0;
  }

  double hidden_derivative(double act, double pre) const {
    return hidden_ == Hidden::kTanh ? 1.0 - act * act : (pre > 0.0 ? 1.0 : 0.0);
  }

  void apply_output(const std::vector<double>& pre, std::vector<double>& out) const {
    switch (output_) {
      case Output::kIdentity:
        out = pre;
        return;
      case Output::kSigmoid:
        for (std::size_t i = 0; i < pre.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-pre[i]));
        return;
      case Output::kSoftmaxBlocks: {
        int at = 0;
        for (int b : blocks_) {
          double mx = pre[at];
          for (int i = 1; i < b; ++i) mx = std::max(mx, pre[at + i]);
          double sum = 0.0;
          for (int i = 0; i < b; ++i) sum += (out[at + i] = std::exp(pre[at + i] - mx));
          for (int i = 0; i < b; ++i) out[at + i] /= sum;
          at += b;
        }
        for (std::size_t i = at; i < pre.size(); ++i) out[i] = pre[i];
        return;
      }
    }
  }

  // delta <- J_output^T * delta, evaluated from post-activation outputs
  void output_jacobian_transpose(const std::vector<double>& out, const std::vector<double>& pre,
                                 std::vector<double>& delta) const {
    switch (output_) {
      case Output::kIdentity:
        return;
      case Output::kSigmoid:
        for (std::size_t i = 0; i < delta.size(); ++i) delta[i] *= out[i] * (1.0 - out[i]);
        return;
      case Output::kSoftmaxBlocks: {
        int at = 0;
        for (int b : blocks_) {
          double inner = 0.0;
          for (int i = 0; i < b; ++i) inner += delta[at + i] * out[at + i];
          for (int i = 0; i < b; ++i) delta[at + i] = out[at + i] * (delta[at + i] - inner);
          at += b;
        }
        (void)pre;
        return;
      }
    }
  }

  // tangent_out <- J_output * tangent_pre (softmax jacobian is symmetric, but
  // keep the forms separate for clarity)
  void output_jacobian(const std::vector<double>& out, const std::vector<double>& pre,
                       const std::vector<double>& tangent_pre,
                       std::vector<double>& tangent_out) const {
    tangent_out.resize(tangent_pre.size());
    switch (output_) {
      case Output::kIdentity:
        tangent_out = tangent_pre;
        return;
      case Output::kSigmoid:
        for (std::size_t i = 0; i < tangent_pre.size(); ++i)
          tangent_out[i] = out[i] * (1.0 - out[i]) * tangent_pre[i];
        return;
      case Output::kSoftmaxBlocks: {
        int at = 0;
        for (int b : blocks_) {
          double inner = 0.0;
          for (int i = 0; i < b; ++i) inner += tangent_pre[at + i] * out[at + i];
          for (int i = 0; i < b; ++i)
            tangent_out[at + i] = out[at + i] * (tangent_pre[at + i] - inner);
          at += b;
        }
        for (std::size_t i = at; i < tangent_pre.size(); ++i) tangent_out[i] = tangent_pre[i];
        (void)pre;
        return;
      }
    }
  }

  void hidden_jacobian_transpose(const std::vector<double>& act, const std::vector<double>& pre,
                                 std::vector<double>& delta) const {
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] *= hidden_derivative(act[i], pre[i]);
  }

  static void check_finite(const std::vector<double>& v, int layer) {
    for (double x : v)
      if (!std::isfinite(x)) throw NumericFault(layer);
  }

  std::vector<int> sizes_;
  Hidden hidden_ = Hidden::kTanh;
  Output output_ = Output::kIdentity;
  std::vector<int> blocks_;
  std::vector<std::vector<double>> weights_;  // row-major (out x in)
  std::vector<std::vector<double>> biases_;
};

}  // namespace vtlab
