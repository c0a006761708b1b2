#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fmkd/tensor.hpp"

namespace fmkd {

enum class LayerKind { Conv3x3, Relu, BilinearUp2, HeadSoftmax, HeadSigmoid, HeadExp };

const char* layer_kind_name(LayerKind kind);
LayerKind layer_kind_from_name(const std::string& name);

/// One layer of the toy zoo. Only Conv3x3 carries parameters
/// (out*in*3*3 weights plus out biases); the other kinds are
/// parameter-free and preserve the channel count.
struct LayerSpec {
  LayerKind kind;
  int in_channels = 0;
  int out_channels = 0;
};

enum class NetRole { Teacher, Student };

struct NetworkSpec {
  std::vector<LayerSpec> layers;
  NetRole role = NetRole::Student;
};

/// Throws std::invalid_argument naming the offending layer index on
/// channel mismatches between adjacent layers.
void validate_spec(const NetworkSpec& spec);

std::size_t param_count(const NetworkSpec& spec);

/// Builds conv3x3/relu stacks: in -> hidden[0] -> ... -> out, with a relu
/// after every conv except the last.
NetworkSpec conv_relu_stack(NetRole role, int in_channels,
                            const std::vector<int>& hidden, int out_channels);

/// Named flat parameter arrays, one entry per parameterized layer, in
/// network order ("layer<i>.weight", "layer<i>.bias").
struct ParamSet {
  struct Entry {
    std::string name;
    std::vector<double> values;
  };
  std::vector<Entry> entries;

  std::size_t total_size() const;
  bool same_shape(const ParamSet& o) const;
};

ParamSet zeros_like(const ParamSet& p);

/// He initialization: conv weights ~ normal(0, sqrt(2/(in_channels*9))),
/// biases zero. Bitwise deterministic for a given seed.
ParamSet init_params(const NetworkSpec& spec, std::uint64_t seed);

/// Every intermediate activation, kept for the backward pass.
/// acts[0] is the input; acts[i] the output of layer i-1.
struct ForwardCache {
  std::vector<DenseMap> acts;
};

/// Runs the network. Conv layers use zero padding 1, stride 1. Output
/// finiteness is checked per layer. Pass a cache to enable backward().
DenseMap forward(const NetworkSpec& spec, const ParamSet& params,
                 const DenseMap& input, ForwardCache* cache = nullptr);

struct BackwardResult {
  ParamSet param_grads;
  DenseMap input_grad;
};

/// Exact reverse-mode gradients of forward() for the cached activations.
BackwardResult backward(const NetworkSpec& spec, const ParamSet& params,
                        const ForwardCache& cache, const DenseMap& grad_output);

}  // namespace fmkd
