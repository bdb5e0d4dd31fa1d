#include "pianolab/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <json.hpp>

#include "pianolab/io.hpp"

namespace pianolab::nn {

namespace {

constexpr double kBceEps = 1e-7;

// Uniform in [0,1) from the raw engine output; keeps initialization and
// dropout masks independent of the standard library's distribution code.
double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double apply_act(Activation a, double x) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::relu: return x > 0 ? x : 0.0;
    case Activation::logistic: return 1.0 / (1.0 + std::exp(-x));
    case Activation::tanh_fn: return std::tanh(x);
  }
  return x;
}

// Derivative expressed through the activation's own output.
double act_deriv_from_out(Activation a, double y) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::relu: return y > 0 ? 1.0 : 0.0;
    case Activation::logistic: return y * (1.0 - y);
    case Activation::tanh_fn: return 1.0 - y * y;
  }
  return 1.0;
}

void activate_inplace(Activation a, Tensor& t) {
  if (a == Activation::identity) return;
  for (double& x : t.v) x = apply_act(a, x);
}

[[noreturn]] void layer_error(std::size_t idx, const LayerSpec& spec, const std::string& msg) {
  throw ShapeError("layer " + std::to_string(idx) + " (" + layer_kind(spec) + "): " + msg);
}

std::size_t flat_features(const Tensor& t) {
  std::size_t n = 1;
  for (std::size_t i = 1; i < t.shape.size(); ++i) n *= t.shape[i];
  return n;
}

struct ConvDims {
  std::size_t batch, in_ch, t, f;
  std::size_t out_t, out_f;
  long pt, pf;  // top/left pad
};

ConvDims conv_dims(const Conv2DSpec& c, const Tensor& x, std::size_t idx, const LayerSpec& spec) {
  if (x.rank() != 4) layer_error(idx, spec, "expected rank-4 input, got " + x.shape_str());
  ConvDims d{};
  d.batch = x.shape[0];
  d.in_ch = x.shape[1];
  d.t = x.shape[2];
  d.f = x.shape[3];
  if (d.in_ch != c.in_ch)
    layer_error(idx, spec,
                "expected " + std::to_string(c.in_ch) + " input channels, got " +
                    std::to_string(d.in_ch));
  d.out_t = c.pad_t == Padding::same ? d.t : (d.t + 1 > c.kt ? d.t - c.kt + 1 : 0);
  d.out_f = c.pad_f == Padding::same ? d.f : (d.f + 1 > c.kf ? d.f - c.kf + 1 : 0);
  if (d.out_t == 0 || d.out_f == 0) layer_error(idx, spec, "kernel larger than input " + x.shape_str());
  d.pt = c.pad_t == Padding::same ? static_cast<long>((c.kt - 1) / 2) : 0;
  d.pf = c.pad_f == Padding::same ? static_cast<long>((c.kf - 1) / 2) : 0;
  return d;
}

// col: (batch*out_t*out_f) x (in_ch*kt*kf)
std::vector<double> im2col(const Conv2DSpec& c, const ConvDims& d, const Tensor& x) {
  const std::size_t k = c.in_ch * c.kt * c.kf;
  std::vector<double> col(d.batch * d.out_t * d.out_f * k, 0.0);
  std::size_t pos = 0;
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t ot = 0; ot < d.out_t; ++ot)
      for (std::size_t of = 0; of < d.out_f; ++of, ++pos) {
        double* dst = col.data() + pos * k;
        for (std::size_t ic = 0; ic < c.in_ch; ++ic)
          for (std::size_t it = 0; it < c.kt; ++it) {
            const long src_t = static_cast<long>(ot) - d.pt + static_cast<long>(it);
            if (src_t < 0 || src_t >= static_cast<long>(d.t)) continue;
            for (std::size_t jf = 0; jf < c.kf; ++jf) {
              const long src_f = static_cast<long>(of) - d.pf + static_cast<long>(jf);
              if (src_f < 0 || src_f >= static_cast<long>(d.f)) continue;
              dst[(ic * c.kt + it) * c.kf + jf] =
                  x.at4(b, ic, static_cast<std::size_t>(src_t), static_cast<std::size_t>(src_f));
            }
          }
      }
  return col;
}

void col2im_acc(const Conv2DSpec& c, const ConvDims& d, const std::vector<double>& col,
                Tensor& dx) {
  const std::size_t k = c.in_ch * c.kt * c.kf;
  std::size_t pos = 0;
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t ot = 0; ot < d.out_t; ++ot)
      for (std::size_t of = 0; of < d.out_f; ++of, ++pos) {
        const double* src = col.data() + pos * k;
        for (std::size_t ic = 0; ic < c.in_ch; ++ic)
          for (std::size_t it = 0; it < c.kt; ++it) {
            const long src_t = static_cast<long>(ot) - d.pt + static_cast<long>(it);
            if (src_t < 0 || src_t >= static_cast<long>(d.t)) continue;
            for (std::size_t jf = 0; jf < c.kf; ++jf) {
              const long src_f = static_cast<long>(of) - d.pf + static_cast<long>(jf);
              if (src_f < 0 || src_f >= static_cast<long>(d.f)) continue;
              dx.at4(b, ic, static_cast<std::size_t>(src_t), static_cast<std::size_t>(src_f)) +=
                  src[(ic * c.kt + it) * c.kf + jf];
            }
          }
      }
}

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy(double* y, const double* x, double a, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

// Reduce geometry for batch norm: rank-2 input normalizes per feature,
// rank-4 per channel.
struct BnDims {
  std::size_t units;   // normalized units (features or channels)
  std::size_t groups;  // elements sharing one unit's statistics
};

BnDims bn_dims(const BatchNormSpec& bn, const Tensor& x, std::size_t idx, const LayerSpec& spec) {
  if (x.rank() == 2) {
    if (x.shape[1] != bn.n)
      layer_error(idx, spec, "expected " + std::to_string(bn.n) + " units, got " + x.shape_str());
    return {bn.n, x.shape[0]};
  }
  if (x.rank() == 4) {
    if (x.shape[1] != bn.n)
      layer_error(idx, spec,
                  "expected " + std::to_string(bn.n) + " channels, got " + x.shape_str());
    return {bn.n, x.shape[0] * x.shape[2] * x.shape[3]};
  }
  layer_error(idx, spec, "expected rank-2 or rank-4 input, got " + x.shape_str());
}

// Iterates all elements belonging to one batch-norm unit.
template <typename F>
void bn_for_each(const Tensor& x, std::size_t unit, F&& fn) {
  if (x.rank() == 2) {
    for (std::size_t i = 0; i < x.shape[0]; ++i) fn(i * x.shape[1] + unit);
  } else {
    const std::size_t plane = x.shape[2] * x.shape[3];
    for (std::size_t b = 0; b < x.shape[0]; ++b) {
      const std::size_t base = (b * x.shape[1] + unit) * plane;
      for (std::size_t p = 0; p < plane; ++p) fn(base + p);
    }
  }
}

void accumulate_bn_stats(const Tensor& x, std::size_t units, std::vector<double>& sum,
                         std::vector<double>& sumsq, std::size_t& count) {
  for (std::size_t u = 0; u < units; ++u)
    bn_for_each(x, u, [&](std::size_t i) {
      sum[u] += x.v[i];
      sumsq[u] += x.v[i] * x.v[i];
    });
  count += x.rank() == 2 ? x.shape[0] : x.shape[0] * x.shape[2] * x.shape[3];
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::logistic: return "logistic";
    case Activation::tanh_fn: return "tanh";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "logistic") return Activation::logistic;
  if (s == "tanh") return Activation::tanh_fn;
  throw ConfigError("unknown activation: " + s);
}

std::string layer_kind(const LayerSpec& spec) {
  struct V {
    std::string operator()(const DenseSpec&) const { return "Dense"; }
    std::string operator()(const Conv2DSpec&) const { return "Conv2D"; }
    std::string operator()(const MaxPoolSpec&) const { return "MaxPool"; }
    std::string operator()(const GlobalAvgPoolSpec&) const { return "GlobalAvgPool"; }
    std::string operator()(const BatchNormSpec&) const { return "BatchNorm"; }
    std::string operator()(const DropoutSpec&) const { return "Dropout"; }
    std::string operator()(const ActivationSpec&) const { return "Activation"; }
  };
  return std::visit(V{}, spec);
}

std::vector<Tensor*> Network::param_tensors() {
  std::vector<Tensor*> out;
  for (auto& p : params)
    for (Tensor* t : {&p.W, &p.b, &p.gamma, &p.beta})
      if (!t->empty()) out.push_back(t);
  return out;
}

std::vector<const Tensor*> Network::param_tensors() const {
  std::vector<const Tensor*> out;
  for (const auto& p : params)
    for (const Tensor* t : {&p.W, &p.b, &p.gamma, &p.beta})
      if (!t->empty()) out.push_back(t);
  return out;
}

std::size_t Network::param_count() const {
  std::size_t n = 0;
  for (const Tensor* t : param_tensors()) n += t->size();
  return n;
}

std::vector<Tensor*> GradientSet::tensors() {
  std::vector<Tensor*> out;
  for (auto& p : layers)
    for (Tensor* t : {&p.W, &p.b, &p.gamma, &p.beta})
      if (!t->empty()) out.push_back(t);
  return out;
}

std::vector<const Tensor*> GradientSet::tensors() const {
  std::vector<const Tensor*> out;
  for (const auto& p : layers)
    for (const Tensor* t : {&p.W, &p.b, &p.gamma, &p.beta})
      if (!t->empty()) out.push_back(t);
  return out;
}

Network make_network(std::vector<LayerSpec> layers) {
  Network net;
  net.params.resize(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& spec = layers[i];
    LayerParams& p = net.params[i];
    if (const auto* d = std::get_if<DenseSpec>(&spec)) {
      if (d->in == 0 || d->out == 0)
        throw ConfigError("layer " + std::to_string(i) + ": Dense shape unresolved");
      p.W = Tensor({d->out, d->in});
      p.b = Tensor({d->out});
    } else if (const auto* c = std::get_if<Conv2DSpec>(&spec)) {
      if (c->in_ch == 0 || c->out_ch == 0 || c->kt == 0 || c->kf == 0)
        throw ConfigError("layer " + std::to_string(i) + ": Conv2D shape unresolved");
      p.W = Tensor({c->out_ch, c->in_ch, c->kt, c->kf});
      p.b = Tensor({c->out_ch});
    } else if (const auto* bn = std::get_if<BatchNormSpec>(&spec)) {
      if (bn->n == 0)
        throw ConfigError("layer " + std::to_string(i) + ": BatchNorm width unresolved");
      p.gamma = Tensor({bn->n});
      p.beta = Tensor({bn->n});
      p.run_mean = Tensor({bn->n});
      p.run_var = Tensor({bn->n}, 1.0);
    } else if (const auto* drop = std::get_if<DropoutSpec>(&spec)) {
      if (drop->p < 0.0 || drop->p >= 1.0)
        throw ConfigError("layer " + std::to_string(i) + ": dropout p must be in [0,1)");
    } else if (const auto* mp = std::get_if<MaxPoolSpec>(&spec)) {
      if (mp->wt == 0 || mp->wf == 0)
        throw ConfigError("layer " + std::to_string(i) + ": pool window must be >= 1");
    }
  }
  net.layers = std::move(layers);
  return net;
}

void init_params(Network& net, std::uint64_t seed) {
  Rng rng(seed);
  const double sqrt2 = std::sqrt(2.0);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    LayerParams& p = net.params[i];
    double bound = 0.0;
    if (const auto* d = std::get_if<DenseSpec>(&net.layers[i])) {
      bound = std::sqrt(2.0 / static_cast<double>(d->in + d->out));
      if (d->act == Activation::relu) bound *= sqrt2;
    } else if (const auto* c = std::get_if<Conv2DSpec>(&net.layers[i])) {
      const std::size_t fan_in = c->in_ch * c->kt * c->kf;
      const std::size_t fan_out = c->out_ch * c->kt * c->kf;
      bound = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
      if (c->act == Activation::relu) bound *= sqrt2;
    } else if (std::get_if<BatchNormSpec>(&net.layers[i])) {
      std::fill(p.gamma.v.begin(), p.gamma.v.end(), 1.0);
      std::fill(p.beta.v.begin(), p.beta.v.end(), 0.0);
      std::fill(p.run_mean.v.begin(), p.run_mean.v.end(), 0.0);
      std::fill(p.run_var.v.begin(), p.run_var.v.end(), 1.0);
      continue;
    } else {
      continue;
    }
    for (double& w : p.W.v) w = (2.0 * uniform01(rng) - 1.0) * bound;
    std::fill(p.b.v.begin(), p.b.v.end(), 0.0);
  }
}

Tensor forward(Network& net, const Tensor& x, Mode mode, ForwardCache* cache, Rng* rng) {
  if (cache) {
    cache->input = x;
    cache->layers.assign(net.layers.size(), LayerCache{});
    cache->mode = mode;
    cache->valid = true;
  }
  Tensor cur = x;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& spec = net.layers[i];
    LayerParams& p = net.params[i];
    Tensor out;
    LayerCache lc;

    if (const auto* d = std::get_if<DenseSpec>(&spec)) {
      const std::size_t n_in = flat_features(cur);
      if (cur.rank() < 2 || n_in != d->in)
        layer_error(i, spec,
                    "expected " + std::to_string(d->in) + " input features, got " + cur.shape_str());
      const std::size_t batch = cur.shape[0];
      out = Tensor({batch, d->out});
      for (std::size_t r = 0; r < batch; ++r) {
        const double* xr = cur.v.data() + r * n_in;
        double* yr = out.v.data() + r * d->out;
        for (std::size_t j = 0; j < d->out; ++j)
          yr[j] = p.b.v[j] + dot(xr, p.W.v.data() + j * d->in, d->in);
      }
      activate_inplace(d->act, out);
    } else if (const auto* c = std::get_if<Conv2DSpec>(&spec)) {
      const ConvDims dms = conv_dims(*c, cur, i, spec);
      const std::size_t k = c->in_ch * c->kt * c->kf;
      const std::vector<double> col = im2col(*c, dms, cur);
      out = Tensor({dms.batch, c->out_ch, dms.out_t, dms.out_f});
      const std::size_t positions = dms.batch * dms.out_t * dms.out_f;
      const std::size_t plane = dms.out_t * dms.out_f;
      for (std::size_t pos = 0; pos < positions; ++pos) {
        const double* cr = col.data() + pos * k;
        const std::size_t b = pos / plane;
        const std::size_t tf = pos % plane;
        for (std::size_t oc = 0; oc < c->out_ch; ++oc)
          out.v[(b * c->out_ch + oc) * plane + tf] =
              p.b.v[oc] + dot(cr, p.W.v.data() + oc * k, k);
      }
      activate_inplace(c->act, out);
    } else if (const auto* mp = std::get_if<MaxPoolSpec>(&spec)) {
      if (cur.rank() != 4) layer_error(i, spec, "expected rank-4 input, got " + cur.shape_str());
      const std::size_t out_t = cur.shape[2] / mp->wt;
      const std::size_t out_f = cur.shape[3] / mp->wf;
      if (out_t == 0 || out_f == 0) layer_error(i, spec, "pool window larger than input");
      out = Tensor({cur.shape[0], cur.shape[1], out_t, out_f});
      lc.argmax.resize(out.size());
      std::size_t o = 0;
      for (std::size_t b = 0; b < cur.shape[0]; ++b)
        for (std::size_t ch = 0; ch < cur.shape[1]; ++ch)
          for (std::size_t ot = 0; ot < out_t; ++ot)
            for (std::size_t of = 0; of < out_f; ++of, ++o) {
              double best = -std::numeric_limits<double>::infinity();
              std::size_t best_idx = 0;
              for (std::size_t dt = 0; dt < mp->wt; ++dt)
                for (std::size_t df2 = 0; df2 < mp->wf; ++df2) {
                  const std::size_t it = ot * mp->wt + dt, jf = of * mp->wf + df2;
                  const std::size_t idx =
                      ((b * cur.shape[1] + ch) * cur.shape[2] + it) * cur.shape[3] + jf;
                  if (cur.v[idx] > best) {
                    best = cur.v[idx];
                    best_idx = idx;
                  }
                }
              out.v[o] = best;
              lc.argmax[o] = best_idx;
            }
    } else if (std::get_if<GlobalAvgPoolSpec>(&spec)) {
      if (cur.rank() != 4) layer_error(i, spec, "expected rank-4 input, got " + cur.shape_str());
      const std::size_t plane = cur.shape[2] * cur.shape[3];
      out = Tensor({cur.shape[0], cur.shape[1]});
      for (std::size_t b = 0; b < cur.shape[0]; ++b)
        for (std::size_t ch = 0; ch < cur.shape[1]; ++ch) {
          const double* src = cur.v.data() + (b * cur.shape[1] + ch) * plane;
          double acc = 0.0;
          for (std::size_t q = 0; q < plane; ++q) acc += src[q];
          out.at2(b, ch) = acc / static_cast<double>(plane);
        }
    } else if (const auto* bn = std::get_if<BatchNormSpec>(&spec)) {
      const BnDims bd = bn_dims(*bn, cur, i, spec);
      out = Tensor(cur.shape);
      if (mode == Mode::train) {
        if (bd.groups < 1) layer_error(i, spec, "empty batch");
        lc.aux = Tensor(cur.shape);  // xhat
        lc.bn_invstd = Tensor({bd.units});
        for (std::size_t u = 0; u < bd.units; ++u) {
          double sum = 0.0, sumsq = 0.0;
          bn_for_each(cur, u, [&](std::size_t idx) {
            sum += cur.v[idx];
            sumsq += cur.v[idx] * cur.v[idx];
          });
          const double n = static_cast<double>(bd.groups);
          const double mean = sum / n;
          const double var = std::max(0.0, sumsq / n - mean * mean);
          const double invstd = 1.0 / std::sqrt(var + bn->eps);
          lc.bn_invstd.v[u] = invstd;
          bn_for_each(cur, u, [&](std::size_t idx) {
            const double xh = (cur.v[idx] - mean) * invstd;
            lc.aux.v[idx] = xh;
            out.v[idx] = p.gamma.v[u] * xh + p.beta.v[u];
          });
          p.run_mean.v[u] = (1.0 - bn->momentum) * p.run_mean.v[u] + bn->momentum * mean;
          p.run_var.v[u] = (1.0 - bn->momentum) * p.run_var.v[u] + bn->momentum * var;
        }
      } else {
        for (std::size_t u = 0; u < bd.units; ++u) {
          const double invstd = 1.0 / std::sqrt(p.run_var.v[u] + bn->eps);
          bn_for_each(cur, u, [&](std::size_t idx) {
            out.v[idx] = p.gamma.v[u] * (cur.v[idx] - p.run_mean.v[u]) * invstd + p.beta.v[u];
          });
        }
      }
    } else if (const auto* drop = std::get_if<DropoutSpec>(&spec)) {
      if (mode == Mode::train && drop->p > 0.0) {
        if (!rng)
          throw ConfigError("layer " + std::to_string(i) +
                            ": train-mode dropout needs an rng");
        const double keep = 1.0 - drop->p;
        lc.aux = Tensor(cur.shape);
        out = Tensor(cur.shape);
        for (std::size_t q = 0; q < cur.size(); ++q) {
          const double m = uniform01(*rng) < keep ? 1.0 / keep : 0.0;
          lc.aux.v[q] = m;
          out.v[q] = cur.v[q] * m;
        }
      } else {
        out = cur;
      }
    } else if (const auto* act = std::get_if<ActivationSpec>(&spec)) {
      out = cur;
      activate_inplace(act->act, out);
    }

    if (cache) {
      lc.out = out;
      cache->layers[i] = std::move(lc);
    }
    cur = std::move(out);
  }
  return cur;
}

double bce_loss(const Tensor& pred, const Tensor& truth) {
  if (!pred.same_shape(truth))
    throw ShapeError("bce_loss: prediction " + pred.shape_str() + " vs truth " + truth.shape_str());
  if (pred.rank() < 1 || pred.shape[0] == 0) throw ValueError("bce_loss: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double y = truth.v[i];
    if (y != 0.0 && y != 1.0) throw ValueError("bce_loss: truth values must be 0 or 1");
    const double p = std::clamp(pred.v[i], kBceEps, 1.0 - kBceEps);
    total -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return total / static_cast<double>(pred.shape[0]);
}

Tensor bce_loss_grad(const Tensor& pred, const Tensor& truth) {
  if (!pred.same_shape(truth))
    throw ShapeError("bce_loss_grad: prediction " + pred.shape_str() + " vs truth " +
                     truth.shape_str());
  Tensor g(pred.shape);
  const double inv_batch = 1.0 / static_cast<double>(pred.shape[0]);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double y = truth.v[i];
    const double p = std::clamp(pred.v[i], kBceEps, 1.0 - kBceEps);
    g.v[i] = (p - y) / (p * (1.0 - p)) * inv_batch;
  }
  return g;
}

double penalty(const Network& net, double l1, double l2) {
  if (l1 < 0 || l2 < 0) throw ConfigError("penalty: lambdas must be non-negative");
  if (l1 == 0 && l2 == 0) return 0.0;
  double a1 = 0.0, a2 = 0.0;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (!std::holds_alternative<DenseSpec>(net.layers[i]) &&
        !std::holds_alternative<Conv2DSpec>(net.layers[i]))
      continue;
    for (double w : net.params[i].W.v) {
      a1 += std::abs(w);
      a2 += w * w;
    }
  }
  return l1 * a1 + l2 * a2;
}

GradientSet backward(const Network& net, const ForwardCache& cache, const Tensor& loss_grad,
                     double l1, double l2) {
  if (!cache.valid || cache.layers.size() != net.layers.size())
    throw ConfigError("backward: stale or missing forward cache");
  if (cache.mode != Mode::train)
    throw ConfigError("backward: cache must come from a train-mode forward");

  GradientSet gs;
  gs.layers.resize(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerParams& p = net.params[i];
    if (!p.W.empty()) {
      gs.layers[i].W = Tensor(p.W.shape);
      gs.layers[i].b = Tensor(p.b.shape);
    }
    if (!p.gamma.empty()) {
      gs.layers[i].gamma = Tensor(p.gamma.shape);
      gs.layers[i].beta = Tensor(p.beta.shape);
    }
  }

  Tensor grad = loss_grad;
  for (std::size_t ii = net.layers.size(); ii-- > 0;) {
    const LayerSpec& spec = net.layers[ii];
    const LayerParams& p = net.params[ii];
    const LayerCache& lc = cache.layers[ii];
    const Tensor& input = ii == 0 ? cache.input : cache.layers[ii - 1].out;
    if (!grad.same_shape(lc.out))
      layer_error(ii, spec, "gradient shape " + grad.shape_str() + " does not match cached output " +
                                lc.out.shape_str());
    Tensor next;

    if (const auto* d = std::get_if<DenseSpec>(&spec)) {
      Tensor dz = grad;
      for (std::size_t q = 0; q < dz.size(); ++q)
        dz.v[q] *= act_deriv_from_out(d->act, lc.out.v[q]);
      const std::size_t batch = input.shape[0];
      const std::size_t n_in = flat_features(input);
      Tensor& dW = gs.layers[ii].W;
      Tensor& db = gs.layers[ii].b;
      next = Tensor(input.shape);
      for (std::size_t r = 0; r < batch; ++r) {
        const double* xr = input.v.data() + r * n_in;
        double* nxr = next.v.data() + r * n_in;
        const double* dzr = dz.v.data() + r * d->out;
        for (std::size_t j = 0; j < d->out; ++j) {
          const double coef = dzr[j];
          if (coef == 0.0) continue;
          axpy(dW.v.data() + j * d->in, xr, coef, d->in);
          db.v[j] += coef;
          axpy(nxr, p.W.v.data() + j * d->in, coef, d->in);
        }
      }
    } else if (const auto* c = std::get_if<Conv2DSpec>(&spec)) {
      const ConvDims dms = conv_dims(*c, input, ii, spec);
      const std::size_t k = c->in_ch * c->kt * c->kf;
      const std::vector<double> col = im2col(*c, dms, input);
      const std::size_t positions = dms.batch * dms.out_t * dms.out_f;
      const std::size_t plane = dms.out_t * dms.out_f;

      Tensor& dW = gs.layers[ii].W;
      Tensor& db = gs.layers[ii].b;
      std::vector<double> dcol(col.size(), 0.0);
      for (std::size_t pos = 0; pos < positions; ++pos) {
        const std::size_t b = pos / plane;
        const std::size_t tf = pos % plane;
        const double* cr = col.data() + pos * k;
        double* dcr = dcol.data() + pos * k;
        for (std::size_t oc = 0; oc < c->out_ch; ++oc) {
          const std::size_t oidx = (b * c->out_ch + oc) * plane + tf;
          const double coef = grad.v[oidx] * act_deriv_from_out(c->act, lc.out.v[oidx]);
          if (coef == 0.0) continue;
          axpy(dW.v.data() + oc * k, cr, coef, k);
          db.v[oc] += coef;
          axpy(dcr, p.W.v.data() + oc * k, coef, k);
        }
      }
      next = Tensor(input.shape);
      col2im_acc(*c, dms, dcol, next);
    } else if (std::get_if<MaxPoolSpec>(&spec)) {
      next = Tensor(input.shape);
      for (std::size_t o = 0; o < grad.size(); ++o) next.v[lc.argmax[o]] += grad.v[o];
    } else if (std::get_if<GlobalAvgPoolSpec>(&spec)) {
      next = Tensor(input.shape);
      const std::size_t plane = input.shape[2] * input.shape[3];
      const double inv = 1.0 / static_cast<double>(plane);
      for (std::size_t b = 0; b < input.shape[0]; ++b)
        for (std::size_t ch = 0; ch < input.shape[1]; ++ch) {
          const double g = grad.at2(b, ch) * inv;
          double* dst = next.v.data() + (b * input.shape[1] + ch) * plane;
          for (std::size_t q = 0; q < plane; ++q) dst[q] += g;
        }
    } else if (const auto* bn = std::get_if<BatchNormSpec>(&spec)) {
      if (lc.aux.empty())
        throw ConfigError("backward: batch-norm cache missing (layer " + std::to_string(ii) + ")");
      const BnDims bd = bn_dims(*bn, input, ii, spec);
      next = Tensor(input.shape);
      const double n = static_cast<double>(bd.groups);
      for (std::size_t u = 0; u < bd.units; ++u) {
        double sum_dy = 0.0, sum_dy_xh = 0.0;
        bn_for_each(grad, u, [&](std::size_t idx) {
          sum_dy += grad.v[idx];
          sum_dy_xh += grad.v[idx] * lc.aux.v[idx];
        });
        gs.layers[ii].beta.v[u] += sum_dy;
        gs.layers[ii].gamma.v[u] += sum_dy_xh;
        const double scale = p.gamma.v[u] * lc.bn_invstd.v[u];
        bn_for_each(grad, u, [&](std::size_t idx) {
          next.v[idx] =
              scale * (grad.v[idx] - sum_dy / n - lc.aux.v[idx] * sum_dy_xh / n);
        });
      }
    } else if (const auto* drop = std::get_if<DropoutSpec>(&spec)) {
      if (cache.mode == Mode::train && drop->p > 0.0) {
        if (lc.aux.empty())
          throw ConfigError("backward: dropout mask missing (layer " + std::to_string(ii) + ")");
        next = Tensor(input.shape);
        for (std::size_t q = 0; q < grad.size(); ++q) next.v[q] = grad.v[q] * lc.aux.v[q];
      } else {
        next = grad;
      }
    } else if (const auto* act = std::get_if<ActivationSpec>(&spec)) {
      next = grad;
      for (std::size_t q = 0; q < next.size(); ++q)
        next.v[q] *= act_deriv_from_out(act->act, lc.out.v[q]);
    }

    grad = std::move(next);
  }

  // Elastic-net terms; L1 subgradient at 0 is taken as 0.
  if (l1 > 0 || l2 > 0) {
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
      if (gs.layers[i].W.empty()) continue;
      const Tensor& w = net.params[i].W;
      Tensor& dw = gs.layers[i].W;
      for (std::size_t q = 0; q < w.size(); ++q) {
        const double s = w.v[q] > 0 ? 1.0 : (w.v[q] < 0 ? -1.0 : 0.0);
        dw.v[q] += l1 * s + 2.0 * l2 * w.v[q];
      }
    }
  }
  return gs;
}

void batchnorm_finalize(Network& net, const std::vector<Tensor>& input_chunks) {
  if (input_chunks.empty()) throw ConfigError("batchnorm_finalize: empty dataset");
  for (const Tensor& t : input_chunks)
    if (t.empty()) throw ConfigError("batchnorm_finalize: empty chunk");

  for (std::size_t bn_idx = 0; bn_idx < net.layers.size(); ++bn_idx) {
    const auto* bn = std::get_if<BatchNormSpec>(&net.layers[bn_idx]);
    if (!bn) continue;

    // Stream the whole set through the prefix (earlier batch-norm layers
    // already frozen) and collect this layer's input statistics.
    Network prefix;
    prefix.layers.assign(net.layers.begin(), net.layers.begin() + static_cast<long>(bn_idx));
    prefix.params.assign(net.params.begin(), net.params.begin() + static_cast<long>(bn_idx));

    std::vector<double> sum(bn->n, 0.0), sumsq(bn->n, 0.0);
    std::size_t count = 0;
    for (const Tensor& chunk : input_chunks) {
      const Tensor x = forward(prefix, chunk, Mode::eval);
      const BnDims bd = bn_dims(*bn, x, bn_idx, net.layers[bn_idx]);
      accumulate_bn_stats(x, bd.units, sum, sumsq, count);
    }
    if (count == 0) throw ConfigError("batchnorm_finalize: no frames");
    LayerParams& p = net.params[bn_idx];
    for (std::size_t u = 0; u < bn->n; ++u) {
      const double mean = sum[u] / static_cast<double>(count);
      p.run_mean.v[u] = mean;
      p.run_var.v[u] = std::max(0.0, sumsq[u] / static_cast<double>(count) - mean * mean);
    }
  }
}

namespace {

nlohmann::json spec_to_json_obj(const LayerSpec& spec) {
  nlohmann::json j;
  j["kind"] = layer_kind(spec);
  if (const auto* d = std::get_if<DenseSpec>(&spec)) {
    j["in"] = d->in;
    j["out"] = d->out;
    j["act"] = to_string(d->act);
  } else if (const auto* c = std::get_if<Conv2DSpec>(&spec)) {
    j["in_ch"] = c->in_ch;
    j["out_ch"] = c->out_ch;
    j["kt"] = c->kt;
    j["kf"] = c->kf;
    j["pad_t"] = c->pad_t == Padding::same ? "same" : "valid";
    j["pad_f"] = c->pad_f == Padding::same ? "same" : "valid";
    j["act"] = to_string(c->act);
  } else if (const auto* mp = std::get_if<MaxPoolSpec>(&spec)) {
    j["wt"] = mp->wt;
    j["wf"] = mp->wf;
  } else if (const auto* bn = std::get_if<BatchNormSpec>(&spec)) {
    j["n"] = bn->n;
    j["eps"] = bn->eps;
    j["momentum"] = bn->momentum;
  } else if (const auto* drop = std::get_if<DropoutSpec>(&spec)) {
    j["p"] = drop->p;
  } else if (const auto* act = std::get_if<ActivationSpec>(&spec)) {
    j["act"] = to_string(act->act);
  }
  return j;
}

LayerSpec spec_from_json_obj(const nlohmann::json& j) {
  const std::string kind = j.at("kind");
  if (kind == "Dense") {
    DenseSpec d;
    d.in = j.at("in");
    d.out = j.at("out");
    d.act = activation_from_string(j.at("act"));
    return d;
  }
  if (kind == "Conv2D") {
    Conv2DSpec c;
    c.in_ch = j.at("in_ch");
    c.out_ch = j.at("out_ch");
    c.kt = j.at("kt");
    c.kf = j.at("kf");
    c.pad_t = j.at("pad_t") == "same" ? Padding::same : Padding::valid;
    c.pad_f = j.at("pad_f") == "same" ? Padding::same : Padding::valid;
    c.act = activation_from_string(j.at("act"));
    return c;
  }
  if (kind == "MaxPool") {
    MaxPoolSpec m;
    m.wt = j.at("wt");
    m.wf = j.at("wf");
    return m;
  }
  if (kind == "GlobalAvgPool") return GlobalAvgPoolSpec{};
  if (kind == "BatchNorm") {
    BatchNormSpec b;
    b.n = j.at("n");
    b.eps = j.at("eps");
    b.momentum = j.at("momentum");
    return b;
  }
  if (kind == "Dropout") {
    DropoutSpec d;
    d.p = j.at("p");
    return d;
  }
  if (kind == "Activation") {
    ActivationSpec a;
    a.act = activation_from_string(j.at("act"));
    return a;
  }
  throw ParseError("unknown layer kind: " + kind);
}

void append_tensor_blob(std::string& out, const Tensor& t) {
  const std::size_t off = out.size();
  out.resize(off + t.size() * sizeof(double));
  if (t.size() > 0) std::memcpy(out.data() + off, t.v.data(), t.size() * sizeof(double));
}

void read_tensor_blob(const std::string& blob, std::size_t& off, Tensor& t) {
  const std::size_t bytes = t.size() * sizeof(double);
  if (off + bytes > blob.size()) throw ParseError("checkpoint: truncated tensor payload");
  if (bytes > 0) std::memcpy(t.v.data(), blob.data() + off, bytes);
  off += bytes;
}

nlohmann::json shape_json(const Tensor& t) { return nlohmann::json(t.shape); }

Tensor tensor_from_shape(const nlohmann::json& j) {
  std::vector<std::size_t> shape = j.get<std::vector<std::size_t>>();
  if (shape.empty()) return Tensor{};
  return Tensor(shape);
}

}  // namespace

std::string layer_spec_to_json(const LayerSpec& spec) { return spec_to_json_obj(spec).dump(); }

LayerSpec layer_spec_from_json(const std::string& text) {
  return spec_from_json_obj(nlohmann::json::parse(text));
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["layers"] = nlohmann::json::array();
  header["param_shapes"] = nlohmann::json::array();
  for (std::size_t i = 0; i < ckpt.net.layers.size(); ++i) {
    header["layers"].push_back(spec_to_json_obj(ckpt.net.layers[i]));
    const LayerParams& p = ckpt.net.params[i];
    header["param_shapes"].push_back({shape_json(p.W), shape_json(p.b), shape_json(p.gamma),
                                      shape_json(p.beta), shape_json(p.run_mean),
                                      shape_json(p.run_var)});
  }
  header["meta"] = nlohmann::json::parse(ckpt.meta_json);
  header["spec_config_hash"] = ckpt.spec_config_hash;
  header["extra"] = nlohmann::json::array();
  for (const auto& [name, t] : ckpt.extra)
    header["extra"].push_back({{"name", name}, {"shape", shape_json(t)}});

  const std::string h = header.dump();
  std::string blob = "PLCKPT01";
  const std::uint32_t hlen = static_cast<std::uint32_t>(h.size());
  blob.append(reinterpret_cast<const char*>(&hlen), 4);
  blob += h;
  for (const LayerParams& p : ckpt.net.params)
    for (const Tensor* t : {&p.W, &p.b, &p.gamma, &p.beta, &p.run_mean, &p.run_var})
      append_tensor_blob(blob, *t);
  for (const auto& [name, t] : ckpt.extra) append_tensor_blob(blob, t);
  io::atomic_write_file(path, blob);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string blob = io::read_file(path);
  if (blob.size() < 12 || blob.compare(0, 8, "PLCKPT01") != 0)
    throw ParseError("not a checkpoint file: " + path.string());
  std::uint32_t hlen = 0;
  std::memcpy(&hlen, blob.data() + 8, 4);
  if (blob.size() < 12 + hlen) throw ParseError("checkpoint: truncated header");
  const nlohmann::json header = nlohmann::json::parse(blob.substr(12, hlen));

  Checkpoint ckpt;
  for (const auto& lj : header.at("layers")) ckpt.net.layers.push_back(spec_from_json_obj(lj));
  ckpt.net.params.resize(ckpt.net.layers.size());
  const auto& shapes = header.at("param_shapes");
  for (std::size_t i = 0; i < ckpt.net.layers.size(); ++i) {
    LayerParams& p = ckpt.net.params[i];
    p.W = tensor_from_shape(shapes[i][0]);
    p.b = tensor_from_shape(shapes[i][1]);
    p.gamma = tensor_from_shape(shapes[i][2]);
    p.beta = tensor_from_shape(shapes[i][3]);
    p.run_mean = tensor_from_shape(shapes[i][4]);
    p.run_var = tensor_from_shape(shapes[i][5]);
  }
  ckpt.meta_json = header.at("meta").dump();
  ckpt.spec_config_hash = header.value("spec_config_hash", "");
  for (const auto& ej : header.at("extra"))
    ckpt.extra.emplace_back(ej.at("name"), tensor_from_shape(ej.at("shape")));

  std::size_t off = 12 + hlen;
  for (LayerParams& p : ckpt.net.params)
    for (Tensor* t : {&p.W, &p.b, &p.gamma, &p.beta, &p.run_mean, &p.run_var})
      read_tensor_blob(blob, off, *t);
  for (auto& [name, t] : ckpt.extra) read_tensor_blob(blob, off, t);
  return ckpt;
}

}  // namespace pianolab::nn
