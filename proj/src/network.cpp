#include "adabatch/network.hpp"

#include <type_traits>

namespace adabatch {

template <class T>
BasicTensor<T> columns_to_images(const BasicTensor<T>& cols, const SampleShape& shape) {
  if (cols.rank() != 2 || cols.rows() != shape.features()) {
    throw DimensionError("columns_to_images: " + shape_string(cols.shape()) + " vs " +
                         std::to_string(shape.features()) + " features");
  }
  const std::size_t f = cols.rows(), r = cols.cols();
  BasicTensor<T> img({r, shape.channels, shape.height, shape.width});
  auto dst = img.data();
  for (std::size_t b = 0; b < r; ++b)
    for (std::size_t k = 0; k < f; ++k) dst[b * f + k] = cols(k, b);
  return img;
}

template <class T>
BasicTensor<T> images_to_columns(const BasicTensor<T>& images) {
  if (images.rank() != 4) {
    throw DimensionError("images_to_columns: expected rank 4, got " +
                         shape_string(images.shape()));
  }
  const std::size_t r = images.extent(0);
  const std::size_t f = images.size() / r;
  BasicTensor<T> cols({f, r});
  auto src = images.data();
  for (std::size_t b = 0; b < r; ++b)
    for (std::size_t k = 0; k < f; ++k) cols(k, b) = src[b * f + k];
  return cols;
}

namespace {

template <class T>
BasicTensor<T> as_images(const BasicTensor<T>& t, const SampleShape& shape) {
  return t.rank() == 4 ? t : columns_to_images(t, shape);
}

template <class T>
BasicTensor<T> as_columns(const BasicTensor<T>& t) {
  return t.rank() == 2 ? t : images_to_columns(t);
}

template <class T>
const char* kind_name(const AnyLayer<T>& layer) {
  switch (layer.index()) {
    case 0: return "fc";
    case 1: return "conv";
    default: return "bn";
  }
}

}  // namespace

template <class T>
Network<T>::Network(SampleShape input, std::vector<AnyLayer<T>> layers)
    : input_(input), layers_(std::move(layers)) {
  wire();
}

template <class T>
void Network<T>::wire() {
  in_shapes_.clear();
  SampleShape cur = input_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    in_shapes_.push_back(cur);
    const std::string where = "layer " + std::to_string(i) + ": ";
    if (auto* fc = std::get_if<FcLayer<T>>(&layers_[i])) {
      if (fc->in_features() != cur.features()) {
        throw DimensionError(where + "fc expects " + std::to_string(fc->in_features()) +
                             " inputs, previous layer gives " + std::to_string(cur.features()));
      }
      cur = SampleShape{fc->out_features(), 1, 1};
    } else if (auto* conv = std::get_if<ConvLayer<T>>(&layers_[i])) {
      const ConvGeometry& g = conv->geometry();
      if (conv->in_channels() != cur.channels || g.m != cur.height || g.n != cur.width) {
        throw DimensionError(where + "conv expects " + std::to_string(conv->in_channels()) +
                             "x" + std::to_string(g.m) + "x" + std::to_string(g.n) +
                             " input, previous layer gives " + std::to_string(cur.channels) +
                             "x" + std::to_string(cur.height) + "x" + std::to_string(cur.width));
      }
      cur = SampleShape{conv->out_channels(), g.out_rows(), g.out_cols()};
    } else {
      const auto& bn = std::get<BnLayer<T>>(layers_[i]);
      if (bn.features() != cur.features()) {
        throw DimensionError(where + "bn expects " + std::to_string(bn.features()) +
                             " features, previous layer gives " + std::to_string(cur.features()));
      }
    }
  }
  grads_.clear();
  for (auto& slot : param_slots()) grads_.emplace_back(slot.value->shape());
}

template <class T>
Network<T> Network<T>::build(SampleShape input, const std::vector<LayerSpec>& specs, Rng& rng) {
  std::vector<AnyLayer<T>> layers;
  SampleShape cur = input;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const LayerSpec& s = specs[i];
    switch (s.kind) {
      case LayerKind::fc:
        if (s.out == 0) throw ConfigError("layer " + std::to_string(i) + ": fc needs out >= 1");
        layers.emplace_back(FcLayer<T>::initialized(cur.features(), s.out, s.activation, rng));
        cur = SampleShape{s.out, 1, 1};
        break;
      case LayerKind::conv: {
        if (s.out == 0) {
          throw ConfigError("layer " + std::to_string(i) + ": conv needs out_channels >= 1");
        }
        ConvGeometry g;
        g.m = cur.height;
        g.n = cur.width;
        g.k1 = s.k1;
        g.k2 = s.k2;
        g.s1 = s.s1;
        g.s2 = s.s2;
        try {
          g.validate();
        } catch (const DimensionError& e) {
          throw ConfigError("layer " + std::to_string(i) + ": " + e.what());
        }
        layers.emplace_back(ConvLayer<T>::initialized(g, cur.channels, s.out, s.activation,
                                                      s.tied_bias, rng));
        cur = SampleShape{s.out, g.out_rows(), g.out_cols()};
        break;
      }
      case LayerKind::bn:
        if (!(s.eps > 0.0)) throw ConfigError("layer " + std::to_string(i) + ": bn eps must be > 0");
        layers.emplace_back(BnLayer<T>(cur.features(), static_cast<T>(s.eps), s.activation));
        break;
    }
  }
  if (layers.empty()) throw ConfigError("network has no layers");
  return Network(input, std::move(layers));
}

template <class T>
BasicTensor<T> Network<T>::forward(const BasicTensor<T>& x) {
  BasicTensor<T> cur = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    cur = std::visit(
        [&](auto& layer) -> BasicTensor<T> {
          using L = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<L, ConvLayer<T>>) {
            return layer.forward(as_images(cur, in_shapes_[i]));
          } else {
            return layer.forward(as_columns(cur));
          }
        },
        layers_[i]);
  }
  return as_columns(cur);
}

template <class T>
BasicTensor<T> Network<T>::infer(const BasicTensor<T>& x) const {
  BasicTensor<T> cur = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    cur = std::visit(
        [&](const auto& layer) -> BasicTensor<T> {
          using L = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<L, ConvLayer<T>>) {
            return layer.infer(as_images(cur, in_shapes_[i]));
          } else {
            return layer.infer(as_columns(cur));
          }
        },
        layers_[i]);
  }
  return as_columns(cur);
}

template <class T>
BasicTensor<T> Network<T>::backward(const BasicTensor<T>& grad_logits) {
  BasicTensor<T> g = grad_logits;
  std::size_t slot = grads_.size();
  for (std::size_t i = layers_.size(); i-- > 0;) {
    std::visit(
        [&](auto& layer) {
          using L = std::decay_t<decltype(layer)>;
          slot -= 2;
          if constexpr (std::is_same_v<L, ConvLayer<T>>) {
            const ConvGeometry& geo = layer.geometry();
            const SampleShape out_shape{layer.out_channels(), geo.out_rows(), geo.out_cols()};
            auto grads = layer.backward(as_images(g, out_shape));
            axpy(grads_[slot], T{1}, grads.weights);
            axpy(grads_[slot + 1], T{1}, grads.bias);
            g = std::move(grads.input);
          } else if constexpr (std::is_same_v<L, FcLayer<T>>) {
            auto grads = layer.backward(as_columns(g));
            axpy(grads_[slot], T{1}, grads.weights);
            axpy(grads_[slot + 1], T{1}, grads.bias);
            g = std::move(grads.input);
          } else {
            auto grads = layer.backward(as_columns(g));
            axpy(grads_[slot], T{1}, grads.scale);
            axpy(grads_[slot + 1], T{1}, grads.bias);
            g = std::move(grads.input);
          }
        },
        layers_[i]);
  }
  return as_columns(g);
}

template <class T>
void Network<T>::zero_grads() {
  for (auto& g : grads_) g.fill(T{0});
}

template <class T>
std::vector<NamedTensor<T>> Network<T>::params() {
  std::vector<NamedTensor<T>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string prefix = "layers." + std::to_string(i) + "." + kind_name<T>(layers_[i]) + ".";
    std::visit(
        [&](auto& layer) {
          using L = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<L, BnLayer<T>>) {
            out.push_back({prefix + "scale", &layer.scale()});
          } else {
            out.push_back({prefix + "weight", &layer.weights()});
          }
          out.push_back({prefix + "bias", &layer.bias()});
        },
        layers_[i]);
  }
  return out;
}

template <class T>
std::vector<ParamSlot<T>> Network<T>::param_slots() {
  std::vector<ParamSlot<T>> slots;
  auto named = params();
  for (std::size_t k = 0; k < named.size(); ++k) {
    const bool is_bn = named[k].name.find(".bn.") != std::string::npos;
    slots.push_back({named[k].name, named[k].tensor, k < grads_.size() ? &grads_[k] : nullptr,
                     is_bn});
  }
  return slots;
}

template <class T>
std::vector<NamedTensor<T>> Network<T>::state_tensors() {
  auto out = params();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (auto* bn = std::get_if<BnLayer<T>>(&layers_[i])) {
      const std::string prefix = "layers." + std::to_string(i) + ".bn.";
      out.push_back({prefix + "running_mean", &bn->running_mean()});
      out.push_back({prefix + "running_var", &bn->running_var()});
    }
  }
  return out;
}

template <class T>
std::size_t Network<T>::num_classes() const {
  std::size_t classes = input_.features();
  for (const auto& layer : layers_) {
    if (const auto* fc = std::get_if<FcLayer<T>>(&layer)) {
      classes = fc->out_features();
    } else if (const auto* conv = std::get_if<ConvLayer<T>>(&layer)) {
      const auto& g = conv->geometry();
      classes = conv->out_channels() * g.out_rows() * g.out_cols();
    }
  }
  return classes;
}

template <class T>
std::vector<LayerFlops> Network<T>::layer_flops(std::uint64_t r) const {
  std::vector<LayerFlops> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    std::visit(
        [&](const auto& layer) {
          out.push_back({"layers." + std::to_string(i) + "." + kind_name<T>(layers_[i]),
                         layer.forward_flops(r), layer.backward_flops(r)});
        },
        layers_[i]);
  }
  return out;
}

template <class T>
std::uint64_t Network<T>::forward_flops(std::uint64_t r) const {
  std::uint64_t total = 0;
  for (const auto& l : layer_flops(r)) total += l.forward;
  return total;
}

template <class T>
std::uint64_t Network<T>::backward_flops(std::uint64_t r) const {
  std::uint64_t total = 0;
  for (const auto& l : layer_flops(r)) total += l.backward;
  return total;
}

template class Network<float>;
template class Network<double>;
template BasicTensor<float> columns_to_images(const BasicTensor<float>&, const SampleShape&);
template BasicTensor<double> columns_to_images(const BasicTensor<double>&, const SampleShape&);
template BasicTensor<float> images_to_columns(const BasicTensor<float>&);
template BasicTensor<double> images_to_columns(const BasicTensor<double>&);

}  // namespace adabatch
