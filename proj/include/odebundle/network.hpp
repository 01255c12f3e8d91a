#pragma once

// Dense feed-forward network N : R^(1+n+p) -> R^n with tanh hidden layers and
// a linear output layer. Optionally the raw input vector is concatenated to
// the output of every hidden layer (skip connections).
//
// The forward pass is generic over the scalar types so the same code runs on
// plain doubles, on ad::Dual for directional derivatives, and on ad::Var to
// record a tape.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "odebundle/diffcore.hpp"
#include "odebundle/errors.hpp"

#include "json.hpp"

namespace odebundle {

struct NetworkSpec {
  int input_dim = 0;
  std::vector<int> hidden;
  int output_dim = 0;
  bool skip_connections = false;

  int layer_count() const { return static_cast<int>(hidden.size()) + 1; }

  int layer_in(int layer) const {
    if (layer == 0) return input_dim;
    return hidden[layer - 1] + (skip_connections ? input_dim : 0);
  }

  int layer_out(int layer) const {
    return layer < static_cast<int>(hidden.size()) ? hidden[layer] : output_dim;
  }

  // Flattened ordering: per layer, weights row-major (out x in), then biases.
  std::int64_t parameter_count() const {
    std::int64_t total = 0;
    for (int l = 0; l < layer_count(); ++l)
      total += static_cast<std::int64_t>(layer_in(l)) * layer_out(l) + layer_out(l);
    return total;
  }

  void validate() const;
  bool operator==(const NetworkSpec&) const = default;
};

struct NetworkParams {
  NetworkSpec spec;
  std::vector<double> values;
};

// Glorot-uniform weights, zero biases. Deterministic per seed.
NetworkParams init_network(const NetworkSpec& spec, std::uint64_t seed);

template <class S>
struct ForwardScratch {
  std::vector<S> a, b;
};

// `W` is the parameter scalar (double or ad::Var); `S` the activation scalar.
// Requires W*S and S+W to yield S.
template <class W, class S>
void network_forward(const NetworkSpec& spec, std::span<const W> params,
                     std::span<const S> input, std::span<S> output, ForwardScratch<S>& scratch) {
  using std::tanh;
  const int layers = spec.layer_count();
  scratch.a.assign(input.begin(), input.end());
  std::vector<S>* cur = &scratch.a;
  std::vector<S>* next = &scratch.b;

  std::size_t offset = 0;
  for (int l = 0; l < layers; ++l) {
    const int in_w = spec.layer_in(l);
    const int out_w = spec.layer_out(l);
    const bool concat = spec.skip_connections && l > 0;
    if (concat)
      for (std::size_t k = 0; k < input.size(); ++k) cur->push_back(input[k]);

    next->clear();
    const W* wrow = params.data() + offset;
    const W* bias = params.data() + offset + static_cast<std::size_t>(in_w) * out_w;
    for (int o = 0; o < out_w; ++o, wrow += in_w) {
      S z = wrow[0] * (*cur)[0];
      for (int j = 1; j < in_w; ++j) z = z + wrow[j] * (*cur)[j];
      z = z + bias[o];
      next->push_back(l + 1 < layers ? tanh(z) : z);
    }
    offset += static_cast<std::size_t>(in_w) * out_w + out_w;
    std::swap(cur, next);
  }
  for (int o = 0; o < spec.output_dim; ++o) output[o] = (*cur)[o];
}

template <class W, class S>
std::vector<S> network_forward(const NetworkSpec& spec, std::span<const W> params,
                               std::span<const S> input) {
  if (static_cast<int>(input.size()) != spec.input_dim)
    throw ConfigError("network_forward: input dimension mismatch");
  ForwardScratch<S> scratch;
  std::vector<S> out(spec.output_dim, S{});
  network_forward(spec, params, input, std::span<S>(out), scratch);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint file: self-describing JSON, documented in docs/file_formats.md.
// Numbers are written in shortest round-trip decimal form, so
// save -> load -> save is byte-identical.

struct Checkpoint {
  NetworkParams params;
  std::uint64_t seed = 0;
  std::int64_t batches = 0;
  double raw_loss = 0.0;
  double smoothed_loss = 0.0;
  // Carries whatever the producer needs on top of the network itself
  // (bundle/system description, optimizer state). Schema in docs.
  nlohmann::json extra = nlohmann::json::object();
};

nlohmann::json spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const nlohmann::json& j);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace odebundle
