#pragma once

#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lmcg/adam.hpp"
#include "lmcg/landmarks.hpp"
#include "lmcg/ops.hpp"

// Network architectures as interpretable layer lists: two conditional
// generators, unconditional + conditional global discriminators, three
// local discriminators per direction, and two U-shaped landmark
// regressors. One executor runs them all, which keeps the shape audit
// honest: the audited spec is the executed spec.

namespace lmcg {

enum class LayerOp { Conv, Deconv, Fc, Resblock };
enum class ActKind { None, Relu, LeakyRelu, Tanh };
enum class NormKind { None, Instance };

// concat_with: -1 none, kInput = network input, >= 0 earlier layer index;
// the referenced output is channel-concatenated after this layer's
// activation (U-net skip).
struct LayerDef {
  std::string name;
  LayerOp op = LayerOp::Conv;
  int k = 3, stride = 1, out_ch = 0, output_pad = 0;
  NormKind norm = NormKind::None;
  ActKind act = ActKind::None;
  float lrelu_alpha = 0.2f;
  int concat_with = -1;
  static constexpr int kInput = -2;
};

struct NetworkSpec {
  std::string name;
  int in_channels = 0;
  int out_channels = 0;
  std::vector<LayerDef> layers;
};

// ---------------------------------------------------------------------
// Spec builders
// ---------------------------------------------------------------------

inline LayerDef conv_def(std::string name, int k, int s, int c, NormKind n,
                         ActKind a) {
  LayerDef d;
  d.name = std::move(name);
  d.op = LayerOp::Conv;
  d.k = k;
  d.stride = s;
  d.out_ch = c;
  d.norm = n;
  d.act = a;
  return d;
}

inline LayerDef deconv_def(std::string name, int k, int s, int c, NormKind n,
                           ActKind a, int concat_with) {
  LayerDef d;
  d.name = std::move(name);
  d.op = LayerOp::Deconv;
  d.k = k;
  d.stride = s;
  d.out_ch = c;
  d.output_pad = s - 1;
  d.norm = n;
  d.act = a;
  d.concat_with = concat_with;
  return d;
}

/// Residual translation body between two stride-2 downsampling and two
/// stride-2 upsampling convs; 6 blocks at S>=128, 4 below.
inline NetworkSpec generator_spec(const std::string& name, int image_size,
                                  int width) {
  NetworkSpec s;
  s.name = name;
  s.in_channels = 8;  // 3 image + 5 heatmap channels
  s.out_channels = 3;
  s.layers.push_back(
      conv_def("head", 7, 1, width, NormKind::Instance, ActKind::Relu));
  s.layers.push_back(
      conv_def("down1", 3, 2, 2 * width, NormKind::Instance, ActKind::Relu));
  s.layers.push_back(
      conv_def("down2", 3, 2, 4 * width, NormKind::Instance, ActKind::Relu));
  const int blocks = image_size >= 128 ? 6 : 4;
  for (int i = 1; i <= blocks; ++i) {
    LayerDef d;
    d.name = "res" + std::to_string(i);
    d.op = LayerOp::Resblock;
    d.k = 3;
    d.stride = 1;
    d.out_ch = 4 * width;
    d.norm = NormKind::Instance;
    s.layers.push_back(d);
  }
  s.layers.push_back(deconv_def("up1", 3, 2, 2 * width, NormKind::Instance,
                                ActKind::Relu, -1));
  s.layers.push_back(
      deconv_def("up2", 3, 2, width, NormKind::Instance, ActKind::Relu, -1));
  s.layers.push_back(conv_def("tail", 7, 1, 3, NormKind::None, ActKind::Tanh));
  return s;
}

/// U-shaped heatmap regressor: five 3x3 stride-2 encoder convs doubling
/// channels (width..16*width), one bottleneck residual block, and five
/// deconv stages each concatenated with the matching encoder feature,
/// closed by two 3x3 convs with a linear 5-channel output.
inline NetworkSpec regressor_spec(const std::string& name, int width) {
  require(width % 2 == 0, "regressor_spec: width must be even");
  NetworkSpec s;
  s.name = name;
  s.in_channels = 3;
  s.out_channels = 5;
  s.layers.push_back(
      conv_def("conv1", 3, 2, width, NormKind::Instance, ActKind::Relu));  // 0
  s.layers.push_back(
      conv_def("conv2", 3, 2, 2 * width, NormKind::Instance, ActKind::Relu));
  s.layers.push_back(
      conv_def("conv3", 3, 2, 4 * width, NormKind::Instance, ActKind::Relu));
  s.layers.push_back(
      conv_def("conv4", 3, 2, 8 * width, NormKind::Instance, ActKind::Relu));
  s.layers.push_back(
      conv_def("conv5", 3, 2, 16 * width, NormKind::Instance, ActKind::Relu));
  LayerDef res;
  res.name = "resblock1";
  res.op = LayerOp::Resblock;
  res.out_ch = 16 * width;
  res.norm = NormKind::Instance;
  s.layers.push_back(res);  // 5
  s.layers.push_back(deconv_def("deconv5", 3, 2, 8 * width, NormKind::Instance,
                                ActKind::Relu, 3));  // + conv4
  s.layers.push_back(deconv_def("deconv4", 3, 2, 4 * width, NormKind::Instance,
                                ActKind::Relu, 2));  // + conv3
  s.layers.push_back(deconv_def("deconv3", 3, 2, 2 * width, NormKind::Instance,
                                ActKind::Relu, 1));  // + conv2
  s.layers.push_back(deconv_def("deconv2", 3, 2, width, NormKind::Instance,
                                ActKind::Relu, 0));  // + conv1
  s.layers.push_back(deconv_def("deconv1", 3, 2, width / 2, NormKind::Instance,
                                ActKind::Relu, LayerDef::kInput));
  s.layers.push_back(conv_def("conv_output1", 3, 1, width / 2,
                              NormKind::Instance, ActKind::Relu));
  s.layers.push_back(
      conv_def("conv_output2", 3, 1, 5, NormKind::None, ActKind::None));
  return s;
}

/// Four 4x4 stride-2 convs (no norm on the first) and a scalar head.
inline NetworkSpec global_disc_spec(const std::string& name, bool conditional,
                                    int width) {
  NetworkSpec s;
  s.name = name;
  s.in_channels = conditional ? 8 : 3;
  s.out_channels = 1;
  s.layers.push_back(
      conv_def("conv1", 4, 2, width, NormKind::None, ActKind::LeakyRelu));
  s.layers.push_back(conv_def("conv2", 4, 2, 2 * width, NormKind::Instance,
                              ActKind::LeakyRelu));
  s.layers.push_back(conv_def("conv3", 4, 2, 4 * width, NormKind::Instance,
                              ActKind::LeakyRelu));
  s.layers.push_back(conv_def("conv4", 4, 2, 8 * width, NormKind::Instance,
                              ActKind::LeakyRelu));
  LayerDef fc;
  fc.name = "fc1";
  fc.op = LayerOp::Fc;
  fc.out_ch = 1;
  s.layers.push_back(fc);
  return s;
}

/// Patch critic: three 4x4 stride-2 convs and a scalar head, sized to
/// whatever patch it judges.
inline NetworkSpec local_disc_spec(const std::string& name, int in_channels,
                                   int width) {
  NetworkSpec s;
  s.name = name;
  s.in_channels = in_channels;
  s.out_channels = 1;
  s.layers.push_back(
      conv_def("conv1", 4, 2, width, NormKind::None, ActKind::LeakyRelu));
  s.layers.push_back(conv_def("conv2", 4, 2, 2 * width, NormKind::Instance,
                              ActKind::LeakyRelu));
  s.layers.push_back(conv_def("conv3", 4, 2, 4 * width, NormKind::Instance,
                              ActKind::LeakyRelu));
  LayerDef fc;
  fc.name = "fc1";
  fc.op = LayerOp::Fc;
  fc.out_ch = 1;
  s.layers.push_back(fc);
  return s;
}

inline std::string spec_to_text(const NetworkSpec& s) {
  std::ostringstream os;
  os << "net " << s.name << " in=" << s.in_channels
     << " out=" << s.out_channels << "\n";
  for (const auto& l : s.layers) {
    os << "  " << l.name << ": ";
    switch (l.op) {
      case LayerOp::Conv: os << "conv"; break;
      case LayerOp::Deconv: os << "deconv"; break;
      case LayerOp::Fc: os << "fc"; break;
      case LayerOp::Resblock: os << "resblock"; break;
    }
    if (l.op != LayerOp::Fc)
      os << " k" << l.k << " s" << l.stride;
    os << " c" << l.out_ch;
    if (l.norm == NormKind::Instance) os << " norm=instance";
    switch (l.act) {
      case ActKind::Relu: os << " act=relu"; break;
      case ActKind::LeakyRelu: os << " act=lrelu(" << l.lrelu_alpha << ")"; break;
      case ActKind::Tanh: os << " act=tanh"; break;
      case ActKind::None: break;
    }
    if (l.concat_with == LayerDef::kInput)
      os << " concat=input";
    else if (l.concat_with >= 0)
      os << " concat=" << s.layers[std::size_t(l.concat_with)].name;
    os << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------
// Parameter store and executor
// ---------------------------------------------------------------------

using ParamMap = std::map<std::string, Tensor<float>>;

namespace detail {

inline const Tensor<float>& get_param(const ParamMap& params,
                                      const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw Error("missing parameter tensor: " + name);
  return it->second;
}

struct ShapeState {
  int c = 0, h = 0, w = 0;
};

inline ShapeState layer_out_shape(const LayerDef& l, ShapeState in) {
  switch (l.op) {
    case LayerOp::Conv: {
      const int p = (l.k - 1) / 2;
      in.h = conv_out_dim(in.h, l.k, l.stride, p);
      in.w = conv_out_dim(in.w, l.k, l.stride, p);
      in.c = l.out_ch;
      return in;
    }
    case LayerOp::Deconv: {
      const int p = (l.k - 1) / 2;
      in.h = (in.h - 1) * l.stride - 2 * p + l.k + l.output_pad;
      in.w = (in.w - 1) * l.stride - 2 * p + l.k + l.output_pad;
      in.c = l.out_ch;
      return in;
    }
    case LayerOp::Resblock:
      return in;
    case LayerOp::Fc:
      return ShapeState{l.out_ch, 1, 1};
  }
  return in;
}

inline void init_conv_like(ParamMap& params, const std::string& base,
                           Shape wshape, bool norm, Rng& rng) {
  const int fan_in = wshape[1] * wshape[2] * wshape[3];
  const float stddev = std::sqrt(2.f / float(fan_in));
  params[base + ".w"] = Tensor<float>::randn(wshape, rng, stddev);
  const int out_ch = wshape[0];
  if (norm) {
    params[base + ".gamma"] = Tensor<float>::full({out_ch}, 1.f);
    params[base + ".beta"] = Tensor<float>::zeros({out_ch});
  } else {
    params[base + ".b"] = Tensor<float>::zeros({out_ch});
  }
}

}  // namespace detail

/// Creates all parameter tensors for a spec at a given input size.
/// Tensors are created in layer order so initialization is a pure
/// function of (spec, input size, rng state).
inline void init_network_params(const NetworkSpec& spec, int input_size,
                                ParamMap& params, Rng& rng) {
  detail::ShapeState st{spec.in_channels, input_size, input_size};
  std::vector<detail::ShapeState> outs;
  for (const auto& l : spec.layers) {
    const std::string base = spec.name + "." + l.name;
    const bool norm = l.norm == NormKind::Instance;
    switch (l.op) {
      case LayerOp::Conv:
        detail::init_conv_like(params, base, {l.out_ch, st.c, l.k, l.k}, norm,
                               rng);
        break;
      case LayerOp::Deconv: {
        // Deconv weight initialization: fan-in per output element is
        // roughly in_ch * k^2 / stride^2.
        const int fan = st.c * l.k * l.k / (l.stride * l.stride);
        const float stddev = std::sqrt(2.f / float(std::max(1, fan)));
        params[base + ".w"] =
            Tensor<float>::randn({st.c, l.out_ch, l.k, l.k}, rng, stddev);
        if (norm) {
          params[base + ".gamma"] = Tensor<float>::full({l.out_ch}, 1.f);
          params[base + ".beta"] = Tensor<float>::zeros({l.out_ch});
        } else {
          params[base + ".b"] = Tensor<float>::zeros({l.out_ch});
        }
        break;
      }
      case LayerOp::Resblock:
        detail::init_conv_like(params, base + ".c1",
                               {l.out_ch, st.c, l.k, l.k}, norm, rng);
        detail::init_conv_like(params, base + ".c2",
                               {l.out_ch, l.out_ch, l.k, l.k}, norm, rng);
        break;
      case LayerOp::Fc: {
        const int in_dim = st.c * st.h * st.w;
        const float stddev = std::sqrt(2.f / float(in_dim));
        params[spec.name + "." + l.name + ".w"] =
            Tensor<float>::randn({l.out_ch, in_dim}, rng, stddev);
        params[spec.name + "." + l.name + ".b"] =
            Tensor<float>::zeros({l.out_ch});
        break;
      }
    }
    st = detail::layer_out_shape(l, st);
    if (l.concat_with == LayerDef::kInput)
      st.c += spec.in_channels;
    else if (l.concat_with >= 0)
      st.c += outs[std::size_t(l.concat_with)].c;
    outs.push_back(st);
  }
}

struct ForwardTrace {
  std::vector<Tensor<float>> outputs;  // post-activation, pre-concat
};

/// Runs a network. When `trace` is set, every layer's (pre-concat)
/// output is captured, which the shape audit and the feature extractor
/// rely on.
inline Tensor<float> net_forward(const NetworkSpec& spec,
                                 const ParamMap& params,
                                 const Tensor<float>& input,
                                 ForwardTrace* trace = nullptr) {
  require(input.defined() && input.rank() == 4 &&
              input.dim(1) == spec.in_channels,
          spec.name + ": expected input with " +
              std::to_string(spec.in_channels) + " channels, got " +
              (input.defined() ? shape_str(input.shape())
                               : std::string("<null>")));
  Tensor<float> x = input;
  std::vector<Tensor<float>> outputs;
  outputs.reserve(spec.layers.size());
  const Tensor<float> none;
  for (const auto& l : spec.layers) {
    const std::string base = spec.name + "." + l.name;
    const bool norm = l.norm == NormKind::Instance;
    switch (l.op) {
      case LayerOp::Conv: {
        const auto& w = detail::get_param(params, base + ".w");
        x = conv2d(x, w, norm ? none : detail::get_param(params, base + ".b"),
                   l.stride, (l.k - 1) / 2);
        if (norm)
          x = instance_norm(x, detail::get_param(params, base + ".gamma"),
                            detail::get_param(params, base + ".beta"));
        break;
      }
      case LayerOp::Deconv: {
        const auto& w = detail::get_param(params, base + ".w");
        x = conv_transpose2d(
            x, w, norm ? none : detail::get_param(params, base + ".b"),
            l.stride, (l.k - 1) / 2, l.output_pad);
        if (norm)
          x = instance_norm(x, detail::get_param(params, base + ".gamma"),
                            detail::get_param(params, base + ".beta"));
        break;
      }
      case LayerOp::Resblock: {
        Tensor<float> skip = x;
        const auto& w1 = detail::get_param(params, base + ".c1.w");
        Tensor<float> h =
            conv2d(x, w1, norm ? none : detail::get_param(params, base + ".c1.b"),
                   1, (l.k - 1) / 2);
        if (norm)
          h = instance_norm(h, detail::get_param(params, base + ".c1.gamma"),
                            detail::get_param(params, base + ".c1.beta"));
        h = relu(h);
        const auto& w2 = detail::get_param(params, base + ".c2.w");
        h = conv2d(h, w2,
                   norm ? none : detail::get_param(params, base + ".c2.b"), 1,
                   (l.k - 1) / 2);
        if (norm)
          h = instance_norm(h, detail::get_param(params, base + ".c2.gamma"),
                            detail::get_param(params, base + ".c2.beta"));
        x = add(skip, h);
        break;
      }
      case LayerOp::Fc: {
        Tensor<float> flat = x.rank() == 4 ? flatten_2d(x) : x;
        x = fully_connected(flat, detail::get_param(params, base + ".w"),
                            detail::get_param(params, base + ".b"));
        break;
      }
    }
    switch (l.act) {
      case ActKind::Relu: x = relu(x); break;
      case ActKind::LeakyRelu: x = leaky_relu(x, l.lrelu_alpha); break;
      case ActKind::Tanh: x = tanh(x); break;
      case ActKind::None: break;
    }
    outputs.push_back(x);
    if (trace) trace->outputs.push_back(x);
    if (l.concat_with == LayerDef::kInput)
      x = concat_channels<float>({x, input});
    else if (l.concat_with >= 0)
      x = concat_channels<float>({x, outputs[std::size_t(l.concat_with)]});
  }
  return x;
}

// ---------------------------------------------------------------------
// The model bundle
// ---------------------------------------------------------------------

struct NetWidths {
  int generator = 16;
  int discriminator = 16;
  int local = 16;
  int regressor = 16;
};

/// Named parameters for every network plus Adam state and the training
/// iteration counter; the unit of checkpointing.
struct ModelBundle {
  int image_size = 0;
  NetWidths widths;
  PatchSizes patches;
  std::map<std::string, NetworkSpec> specs;
  ParamMap params;
  std::map<std::string, AdamState<float>> adam;
  std::uint64_t iteration = 0;

  std::vector<std::string> param_names_of(const std::string& net_prefix) const {
    std::vector<std::string> out;
    const std::string p = net_prefix + ".";
    for (const auto& [name, t] : params)
      if (name.rfind(p, 0) == 0) out.push_back(name);
    return out;
  }

  void set_requires_grad(const std::string& net_prefix, bool v) {
    const std::string p = net_prefix + ".";
    for (auto& [name, t] : params)
      if (name.rfind(p, 0) == 0) t.set_requires_grad(v);
  }

  void set_all_requires_grad(bool v) {
    for (auto& [name, t] : params) t.set_requires_grad(v);
  }
};

inline std::vector<std::string> all_net_names() {
  return {"gen_xy",       "gen_yx",       "disc_x",       "disc_y",
          "disc_xc",      "disc_yc",      "local_x_eyes", "local_x_nose",
          "local_x_mouth", "local_y_eyes", "local_y_nose", "local_y_mouth",
          "reg_x",        "reg_y"};
}

inline ModelBundle build_model_bundle(int image_size, const NetWidths& w,
                                      std::uint64_t seed) {
  require(image_size % 32 == 0,
          "image size must be divisible by 32, got " +
              std::to_string(image_size));
  ModelBundle b;
  b.image_size = image_size;
  b.widths = w;
  b.patches = PatchSizes::for_size(image_size);
  b.specs["gen_xy"] = generator_spec("gen_xy", image_size, w.generator);
  b.specs["gen_yx"] = generator_spec("gen_yx", image_size, w.generator);
  b.specs["disc_x"] = global_disc_spec("disc_x", false, w.discriminator);
  b.specs["disc_y"] = global_disc_spec("disc_y", false, w.discriminator);
  b.specs["disc_xc"] = global_disc_spec("disc_xc", true, w.discriminator);
  b.specs["disc_yc"] = global_disc_spec("disc_yc", true, w.discriminator);
  for (const char* d : {"x", "y"}) {
    b.specs[std::string("local_") + d + "_eyes"] =
        local_disc_spec(std::string("local_") + d + "_eyes", 6, w.local);
    b.specs[std::string("local_") + d + "_nose"] =
        local_disc_spec(std::string("local_") + d + "_nose", 3, w.local);
    b.specs[std::string("local_") + d + "_mouth"] =
        local_disc_spec(std::string("local_") + d + "_mouth", 3, w.local);
  }
  b.specs["reg_x"] = regressor_spec("reg_x", w.regressor);
  b.specs["reg_y"] = regressor_spec("reg_y", w.regressor);

  Rng rng(seed);
  for (const auto& name : all_net_names()) {
    const NetworkSpec& spec = b.specs.at(name);
    int input_size = image_size;
    if (name.rfind("local_", 0) == 0) {
      // Local critics see fixed patch sizes; params that depend on the
      // input size (the fc) are created from the patch geometry.
      // Handled below with a rectangular input.
      continue;
    }
    init_network_params(spec, input_size, b.params, rng);
  }
  // Local discriminators take rectangular inputs; initialize with the
  // exact patch shapes.
  auto init_local = [&](const std::string& name, int ph, int pw) {
    const NetworkSpec& spec = b.specs.at(name);
    detail::ShapeState st{spec.in_channels, ph, pw};
    for (const auto& l : spec.layers) {
      const std::string base = spec.name + "." + l.name;
      if (l.op == LayerOp::Fc) {
        const int in_dim = st.c * st.h * st.w;
        const float stddev = std::sqrt(2.f / float(in_dim));
        b.params[base + ".w"] =
            Tensor<float>::randn({l.out_ch, in_dim}, rng, stddev);
        b.params[base + ".b"] = Tensor<float>::zeros({l.out_ch});
      } else {
        detail::init_conv_like(b.params, base, {l.out_ch, st.c, l.k, l.k},
                               l.norm == NormKind::Instance, rng);
      }
      st = detail::layer_out_shape(l, st);
    }
  };
  for (const char* d : {"x", "y"}) {
    init_local(std::string("local_") + d + "_eyes", b.patches.eye_h,
               b.patches.eye_w);
    init_local(std::string("local_") + d + "_nose", b.patches.nose_h,
               b.patches.nose_w);
    init_local(std::string("local_") + d + "_mouth", b.patches.mouth_h,
               b.patches.mouth_w);
  }
  return b;
}

// ---------------------------------------------------------------------
// Typed forward entry points
// ---------------------------------------------------------------------

/// G_(X,L)->Y / G_(Y,L)->X: image [N,3,S,S] in [-1,1] plus heatmaps
/// [N,5,S,S] in [0,1], tanh output in [-1,1] at the input size.
inline Tensor<float> generator_forward(const ModelBundle& b, Direction dir,
                                       const Tensor<float>& image,
                                       const Tensor<float>& heatmaps) {
  require(image.defined() && image.rank() == 4 && image.dim(1) == 3,
          "generator_forward: image must be [N,3,S,S], got " +
              (image.defined() ? shape_str(image.shape())
                               : std::string("<null>")));
  require(heatmaps.defined() && heatmaps.rank() == 4 && heatmaps.dim(1) == 5,
          "generator_forward: heatmaps must be [N,5,S,S], got " +
              (heatmaps.defined() ? shape_str(heatmaps.shape())
                                  : std::string("<null>")));
  const auto& spec =
      b.specs.at(dir == Direction::XtoY ? "gen_xy" : "gen_yx");
  Tensor<float> in = concat_channels<float>({image, heatmaps});
  return net_forward(spec, b.params, in);
}

/// Landmark regressor: [N,3,S,S] -> unsquashed score maps [N,5,S,S];
/// S must be divisible by 32. Optionally taps the bottleneck (conv5).
inline Tensor<float> regressor_forward(const ModelBundle& b, Domain domain,
                                       const Tensor<float>& image,
                                       Tensor<float>* bottleneck = nullptr) {
  require(image.defined() && image.rank() == 4 && image.dim(1) == 3,
          "regressor_forward: image must be [N,3,S,S]");
  require(image.dim(2) % 32 == 0 && image.dim(3) % 32 == 0,
          "regressor_forward: spatial size must be divisible by 32, got " +
              shape_str(image.shape()));
  const auto& spec = b.specs.at(domain == Domain::X ? "reg_x" : "reg_y");
  ForwardTrace trace;
  Tensor<float> out =
      net_forward(spec, b.params, image, bottleneck ? &trace : nullptr);
  if (bottleneck) *bottleneck = trace.outputs[4];  // conv5
  return out;
}

/// Global discriminator logit. The conditional variant consumes
/// image (+) heatmaps (8 channels); heatmaps are rejected otherwise.
inline Tensor<float> global_disc_forward(const ModelBundle& b, Domain domain,
                                         bool conditional,
                                         const Tensor<float>& image,
                                         const Tensor<float>& heatmaps =
                                             Tensor<float>()) {
  require(conditional == heatmaps.defined(),
          conditional
              ? std::string("global_disc_forward: conditional variant needs heatmaps")
              : std::string("global_disc_forward: heatmaps passed to the unconditional variant"));
  const std::string name =
      std::string("disc_") + domain_tag(domain) + (conditional ? "c" : "");
  Tensor<float> in =
      conditional ? concat_channels<float>({image, heatmaps}) : image;
  return net_forward(b.specs.at(name), b.params, in);
}

/// Local discriminator logit over one part patch; the patch shape must
/// match the bundle's configured geometry exactly.
inline Tensor<float> local_disc_forward(const ModelBundle& b, Domain domain,
                                        Part part,
                                        const Tensor<float>& patch) {
  require(patch.defined() && patch.rank() == 4,
          "local_disc_forward: patch must be [N,C,h,w]");
  int want_c = 3, want_h = 0, want_w = 0;
  switch (part) {
    case Part::Eyes:
      want_c = 6;
      want_h = b.patches.eye_h;
      want_w = b.patches.eye_w;
      break;
    case Part::Nose:
      want_h = b.patches.nose_h;
      want_w = b.patches.nose_w;
      break;
    case Part::Mouth:
      want_h = b.patches.mouth_h;
      want_w = b.patches.mouth_w;
      break;
  }
  require(patch.dim(1) == want_c && patch.dim(2) == want_h &&
              patch.dim(3) == want_w,
          std::string("local_disc_forward: ") + part_tag(part) +
              " patch must be [N," + std::to_string(want_c) + "," +
              std::to_string(want_h) + "," + std::to_string(want_w) +
              "], got " + shape_str(patch.shape()));
  const std::string name =
      std::string("local_") + domain_tag(domain) + "_" + part_tag(part);
  return net_forward(b.specs.at(name), b.params, patch);
}

}  // namespace lmcg
