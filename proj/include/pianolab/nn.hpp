#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "pianolab/tensor.hpp"

namespace pianolab::nn {

using Rng = std::mt19937_64;

enum class Activation { identity, relu, logistic, tanh_fn };
enum class Padding { valid, same };
enum class Mode { train, eval };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct DenseSpec {
  std::size_t in = 0, out = 0;
  Activation act = Activation::identity;
};

struct Conv2DSpec {
  std::size_t in_ch = 0, out_ch = 0;
  std::size_t kt = 1, kf = 1;
  Padding pad_t = Padding::same;   // keeps the time context alive by default
  Padding pad_f = Padding::valid;
  Activation act = Activation::identity;
};

struct MaxPoolSpec {
  std::size_t wt = 1, wf = 1;  // window == stride, floor rounding
};

struct GlobalAvgPoolSpec {};  // mean over each feature map

struct BatchNormSpec {
  std::size_t n = 0;  // units for rank-2 input, channels for rank-4
  double eps = 1e-5;
  double momentum = 0.1;  // running-average update rate (eval fallback)
};

struct DropoutSpec {
  double p = 0.0;  // inverted scaling: train multiplies kept units by 1/(1-p)
};

struct ActivationSpec {
  Activation act = Activation::identity;
};

using LayerSpec = std::variant<DenseSpec, Conv2DSpec, MaxPoolSpec, GlobalAvgPoolSpec,
                               BatchNormSpec, DropoutSpec, ActivationSpec>;

std::string layer_kind(const LayerSpec& spec);

/// Weights/biases for dense+conv, scale/offset plus frozen statistics for
/// batch norm. Tensors not used by a layer kind stay empty.
struct LayerParams {
  Tensor W, b;
  Tensor gamma, beta;
  Tensor run_mean, run_var;  // statistics, not trainable parameters
};

struct Network {
  std::vector<LayerSpec> layers;
  std::vector<LayerParams> params;

  /// Trainable tensors in deterministic order: per layer W, b, gamma, beta.
  std::vector<Tensor*> param_tensors();
  std::vector<const Tensor*> param_tensors() const;
  std::size_t param_count() const;
};

/// Allocates parameter storage (zeros) for the given stack.
Network make_network(std::vector<LayerSpec> layers);

/// Uniform init in +/- sqrt(2)*sqrt(2/(fan_in+fan_out)) for ReLU layers;
/// the sqrt(2) gain is dropped for non-ReLU layers (the logistic output).
/// Biases 0, batch-norm scale 1 / offset 0. Deterministic per seed.
void init_params(Network& net, std::uint64_t seed);

struct LayerCache {
  Tensor out;                       // post-activation output
  Tensor aux;                       // dropout mask / batch-norm xhat
  Tensor bn_invstd;                 // per unit, train mode
  std::vector<std::size_t> argmax;  // max-pool routing
};

struct ForwardCache {
  Tensor input;
  std::vector<LayerCache> layers;
  Mode mode = Mode::eval;
  bool valid = false;
};

/// Applies the stack in order. Train mode activates dropout (needs rng) and
/// batch statistics in batch-norm layers; eval mode uses stored statistics.
/// Mutates only batch-norm running statistics (train mode).
Tensor forward(Network& net, const Tensor& x, Mode mode, ForwardCache* cache = nullptr,
               Rng* rng = nullptr);

/// Mean over frames of the per-frame elementwise binary cross entropy
/// (elements within a frame are summed). Predictions clipped to
/// [1e-7, 1-1e-7].
double bce_loss(const Tensor& pred, const Tensor& truth);
Tensor bce_loss_grad(const Tensor& pred, const Tensor& truth);

/// l1*sum|W| + l2*sum W^2 over connection weights only (biases and
/// batch-norm parameters excluded).
double penalty(const Network& net, double l1, double l2);

struct GradientSet {
  std::vector<LayerParams> layers;
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
};

/// Exact gradients of (loss + penalty) for every parameter. Dropout masks
/// and max-pool routing are replayed from the cache.
GradientSet backward(const Network& net, const ForwardCache& cache, const Tensor& loss_grad,
                     double l1 = 0.0, double l2 = 0.0);

/// Recomputes every batch-norm layer's statistics over the whole training
/// set (streamed in chunks, layer by layer) and freezes them for eval mode.
void batchnorm_finalize(Network& net, const std::vector<Tensor>& input_chunks);

struct Checkpoint {
  Network net;
  std::string meta_json = "{}";  // run metadata: epoch, rng state, ...
  std::vector<std::pair<std::string, Tensor>> extra;  // optimizer state blobs
  std::string spec_config_hash;  // hash of the training representation
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string layer_spec_to_json(const LayerSpec& spec);
LayerSpec layer_spec_from_json(const std::string& text);

}  // namespace pianolab::nn
