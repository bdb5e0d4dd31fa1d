#include "pianolab/zoo.hpp"

#include "pianolab/errors.hpp"

namespace pianolab::zoo {

using nn::Activation;
using nn::ActivationSpec;
using nn::BatchNormSpec;
using nn::Conv2DSpec;
using nn::DenseSpec;
using nn::DropoutSpec;
using nn::GlobalAvgPoolSpec;
using nn::LayerSpec;
using nn::MaxPoolSpec;
using nn::Padding;

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::LogReg: return "LogReg";
    case ModelKind::Shallow: return "Shallow";
    case ModelKind::DNN: return "DNN";
    case ModelKind::ConvNet: return "ConvNet";
    case ModelKind::AllConv: return "AllConv";
  }
  return "?";
}

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "LogReg") return ModelKind::LogReg;
  if (s == "Shallow") return ModelKind::Shallow;
  if (s == "DNN") return ModelKind::DNN;
  if (s == "ConvNet") return ModelKind::ConvNet;
  if (s == "AllConv") return ModelKind::AllConv;
  throw ConfigError("unknown model kind: " + s);
}

namespace {

Conv2DSpec conv(std::size_t in_ch, std::size_t out_ch, std::size_t kt, std::size_t kf,
                Padding pad_t, Activation act = Activation::relu) {
  Conv2DSpec c;
  c.in_ch = in_ch;
  c.out_ch = out_ch;
  c.kt = kt;
  c.kf = kf;
  c.pad_t = pad_t;
  c.pad_f = Padding::valid;
  c.act = act;
  return c;
}

void validate(const ModelClass& mc) {
  if (mc.input_bins == 0) throw ConfigError("model: input_bins must be > 0");
  if (mc.context_frames % 2 == 0) throw ConfigError("model: context_frames must be odd");
  if (mc.is_conv() && mc.context_frames != 5)
    throw ConfigError("model: conv classes need context_frames = 5, got " +
                      std::to_string(mc.context_frames));
}

}  // namespace

nn::Network build(const ModelClass& mc) { return build(mc, ProbeOptions{}); }

nn::Network build(const ModelClass& mc, const ProbeOptions& opts) {
  validate(mc);
  const std::size_t b = mc.input_bins;
  std::vector<LayerSpec> layers;

  switch (mc.kind) {
    case ModelKind::LogReg: {
      if (opts.batch_norm) layers.push_back(BatchNormSpec{b});
      if (opts.dropout > 0) layers.push_back(DropoutSpec{opts.dropout});
      layers.push_back(DenseSpec{b, 88, Activation::logistic});
      break;
    }
    case ModelKind::Shallow: {
      if (opts.dropout > 0) layers.push_back(DropoutSpec{opts.dropout});
      layers.push_back(DenseSpec{b, mc.shallow_width, Activation::relu});
      if (opts.batch_norm) layers.push_back(BatchNormSpec{mc.shallow_width});
      if (opts.dropout > 0) layers.push_back(DropoutSpec{opts.dropout});
      layers.push_back(DenseSpec{mc.shallow_width, 88, Activation::logistic});
      break;
    }
    case ModelKind::DNN: {
      layers.push_back(DropoutSpec{0.1});
      layers.push_back(DenseSpec{b, 512, Activation::relu});
      layers.push_back(BatchNormSpec{512});
      layers.push_back(DropoutSpec{0.25});
      layers.push_back(DenseSpec{512, 512, Activation::relu});
      layers.push_back(BatchNormSpec{512});
      layers.push_back(DropoutSpec{0.25});
      layers.push_back(DenseSpec{512, 512, Activation::relu});
      layers.push_back(BatchNormSpec{512});
      layers.push_back(DropoutSpec{0.25});
      layers.push_back(DenseSpec{512, 88, Activation::logistic});
      break;
    }
    case ModelKind::ConvNet: {
      // The two leading 3x3 convolutions consume the 5-frame context
      // (5 -> 3 -> 1 in time); the third keeps its printed 3x3 kernel via
      // same-padding on the collapsed time axis.
      if (b < 13) throw ConfigError("ConvNet needs at least 13 input bins");
      layers.push_back(conv(1, 32, 3, 3, Padding::valid));
      layers.push_back(conv(32, 32, 3, 3, Padding::valid));
      layers.push_back(BatchNormSpec{32});
      layers.push_back(MaxPoolSpec{1, 2});
      layers.push_back(DropoutSpec{0.25});
      layers.push_back(conv(32, 64, 3, 3, Padding::same));
      layers.push_back(MaxPoolSpec{1, 2});
      layers.push_back(DropoutSpec{0.25});
      const std::size_t f = ((b - 4) / 2 - 2) / 2;  // frequency bins after the conv stack
      layers.push_back(DenseSpec{64 * f, 512, Activation::relu});
      layers.push_back(DropoutSpec{0.5});
      layers.push_back(DenseSpec{512, 88, Activation::logistic});
      break;
    }
    case ModelKind::AllConv: {
      if (b < 208) throw ConfigError("AllConv needs at least 208 input bins");
      layers.push_back(conv(1, 32, 3, 3, Padding::valid));
      layers.push_back(conv(32, 32, 3, 3, Padding::valid));
      layers.push_back(BatchNormSpec{32});
      layers.push_back(MaxPoolSpec{1, 2});
      layers.push_back(DropoutSpec{0.25});
      layers.push_back(conv(32, 32, 1, 3, Padding::valid));
      layers.push_back(BatchNormSpec{32});
      layers.push_back(conv(32, 32, 1, 3, Padding::valid));
      layers.push_back(BatchNormSpec{32});
      layers.push_back(MaxPoolSpec{1, 2});
      layers.push_back(DropoutSpec{0.25});
      layers.push_back(conv(32, 64, 1, 25, Padding::valid));
      layers.push_back(BatchNormSpec{64});
      layers.push_back(conv(64, 128, 1, 25, Padding::valid));
      layers.push_back(BatchNormSpec{128});
      layers.push_back(DropoutSpec{0.5});
      layers.push_back(conv(128, 88, 1, 1, Padding::valid, Activation::identity));
      layers.push_back(BatchNormSpec{88});
      // The printed AvgPool 1x6 consumes the whole remaining map, i.e. a
      // global average per feature map; the sigmoid follows it.
      layers.push_back(GlobalAvgPoolSpec{});
      layers.push_back(ActivationSpec{Activation::logistic});
      break;
    }
  }
  return nn::make_network(std::move(layers));
}

std::size_t param_count(const nn::Network& net) { return net.param_count(); }

}  // namespace pianolab::zoo
