#include "purekit/network.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <limits>

#include "purekit/error.hpp"
#include "purekit/rng.hpp"

namespace purekit {

// ---------------------------------------------------------------------------
// Specs

LayerSpec LayerSpec::conv(int kernel, int in_channels, int out_channels, int stride, int pad) {
  LayerSpec l;
  l.kind = LayerKind::conv;
  l.kernel = kernel;
  l.in_channels = in_channels;
  l.out_channels = out_channels;
  l.stride = stride;
  l.pad = pad;
  return l;
}

LayerSpec LayerSpec::leaky_relu(float slope) {
  LayerSpec l;
  l.kind = LayerKind::leaky_relu;
  l.slope = slope;
  return l;
}

LayerSpec LayerSpec::avg_pool(int kernel) {
  LayerSpec l;
  l.kind = LayerKind::avg_pool;
  l.kernel = kernel;
  return l;
}

LayerSpec LayerSpec::dense(int in, int out) {
  LayerSpec l;
  l.kind = LayerKind::dense;
  l.in_channels = in;
  l.out_channels = out;
  return l;
}

LayerSpec LayerSpec::global_sum() {
  LayerSpec l;
  l.kind = LayerKind::global_sum;
  return l;
}

std::size_t ParamLayout::numel() const {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

namespace {

Shape infer_output(const LayerSpec& l, const Shape& in, std::size_t index) {
  auto fail = [&](const std::string& msg) {
    throw ConfigError("layer " + std::to_string(index) + ": " + msg + " (input " + in.str() +
                      ")");
  };
  switch (l.kind) {
    case LayerKind::conv: {
      if (l.kernel < 1 || l.stride < 1 || l.pad < 0 || l.out_channels < 1) {
        fail("invalid conv geometry");
      }
      if (l.in_channels != in.channels) {
        fail("conv expects " + std::to_string(l.in_channels) + " input channels");
      }
      const int h = in.height + 2 * l.pad - l.kernel;
      const int w = in.width + 2 * l.pad - l.kernel;
      if (h < 0 || w < 0) fail("conv kernel larger than padded input");
      return Shape{l.out_channels, h / l.stride + 1, w / l.stride + 1};
    }
    case LayerKind::leaky_relu:
      if (!std::isfinite(l.slope)) fail("non-finite leaky_relu slope");
      return in;
    case LayerKind::avg_pool:
      if (l.kernel < 1 || in.height % l.kernel != 0 || in.width % l.kernel != 0) {
        fail("avg_pool kernel must divide the spatial size");
      }
      return Shape{in.channels, in.height / l.kernel, in.width / l.kernel};
    case LayerKind::dense:
      if (l.out_channels < 1) fail("dense needs at least one output");
      if (static_cast<std::size_t>(l.in_channels) != in.numel()) {
        fail("dense expects " + std::to_string(l.in_channels) + " inputs");
      }
      return Shape{l.out_channels, 1, 1};
    case LayerKind::global_sum:
      return Shape{in.channels, 1, 1};
  }
  fail("unknown layer kind");
  return in;
}

std::string format_float(float v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t pos = text.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.push_back(text.substr(start));
      break;
    }
    parts.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
  return parts;
}

int parse_int(std::string_view s) {
  int v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError("bad integer '" + std::string(s) + "' in network spec");
  }
  return v;
}

float parse_float(std::string_view s) {
  float v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError("bad number '" + std::string(s) + "' in network spec");
  }
  return v;
}

}  // namespace

std::vector<Shape> NetworkSpec::shapes() const {
  if (input.channels < 1 || input.height < 1 || input.width < 1) {
    throw ConfigError("network input shape must be positive, got " + input.str());
  }
  std::vector<Shape> out{input};
  for (std::size_t i = 0; i < layers.size(); ++i) out.push_back(infer_output(layers[i], out.back(), i));
  return out;
}

void NetworkSpec::validate() const { (void)shapes(); }

Shape NetworkSpec::output_shape() const { return shapes().back(); }

std::vector<ParamLayout> NetworkSpec::param_layout() const {
  validate();
  std::vector<ParamLayout> layout;
  int conv_no = 0;
  int dense_no = 0;
  for (const LayerSpec& l : layers) {
    if (l.kind == LayerKind::conv) {
      const std::string p = "conv" + std::to_string(++conv_no);
      layout.push_back({p + ".weight", {l.out_channels, l.in_channels, l.kernel, l.kernel}});
      layout.push_back({p + ".bias", {l.out_channels}});
    } else if (l.kind == LayerKind::dense) {
      const std::string p = "dense" + std::to_string(++dense_no);
      layout.push_back({p + ".weight", {l.out_channels, l.in_channels}});
      layout.push_back({p + ".bias", {l.out_channels}});
    }
  }
  return layout;
}

std::size_t NetworkSpec::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : param_layout()) n += p.numel();
  return n;
}

std::string NetworkSpec::to_string() const {
  std::string s = "in:" + input.str();
  for (const LayerSpec& l : layers) {
    s += ';';
    switch (l.kind) {
      case LayerKind::conv:
        s += "conv:" + std::to_string(l.kernel) + ":" + std::to_string(l.in_channels) + ":" +
             std::to_string(l.out_channels) + ":" + std::to_string(l.stride) + ":" +
             std::to_string(l.pad);
        break;
      case LayerKind::leaky_relu:
        s += "lrelu:" + format_float(l.slope);
        break;
      case LayerKind::avg_pool:
        s += "pool:" + std::to_string(l.kernel);
        break;
      case LayerKind::dense:
        s += "dense:" + std::to_string(l.in_channels) + ":" + std::to_string(l.out_channels);
        break;
      case LayerKind::global_sum:
        s += "gsum";
        break;
    }
  }
  return s;
}

NetworkSpec NetworkSpec::parse(std::string_view text) {
  NetworkSpec spec;
  const auto tokens = split(text, ';');
  if (tokens.empty() || tokens[0].substr(0, 3) != "in:") {
    throw ConfigError("network spec must start with in:CxHxW");
  }
  const auto dims = split(tokens[0].substr(3), 'x');
  if (dims.size() != 3) throw ConfigError("network input must be CxHxW");
  spec.input = Shape{parse_int(dims[0]), parse_int(dims[1]), parse_int(dims[2])};
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    const auto f = split(tokens[i], ':');
    const std::string_view kind = f[0];
    if (kind == "conv" && f.size() == 6) {
      spec.layers.push_back(LayerSpec::conv(parse_int(f[1]), parse_int(f[2]), parse_int(f[3]),
                                            parse_int(f[4]), parse_int(f[5])));
    } else if (kind == "lrelu" && f.size() == 2) {
      spec.layers.push_back(LayerSpec::leaky_relu(parse_float(f[1])));
    } else if (kind == "pool" && f.size() == 2) {
      spec.layers.push_back(LayerSpec::avg_pool(parse_int(f[1])));
    } else if (kind == "dense" && f.size() == 3) {
      spec.layers.push_back(LayerSpec::dense(parse_int(f[1]), parse_int(f[2])));
    } else if (kind == "gsum" && f.size() == 1) {
      spec.layers.push_back(LayerSpec::global_sum());
    } else {
      throw ConfigError("unrecognized layer token '" + std::string(tokens[i]) + "'");
    }
  }
  spec.validate();
  return spec;
}

NetworkSpec NetworkSpec::energy_net(Shape input, int w1, int w2, int w3, float slope) {
  NetworkSpec s;
  s.input = input;
  s.layers = {LayerSpec::conv(3, input.channels, w1, 1, 1), LayerSpec::leaky_relu(slope),
              LayerSpec::conv(3, w1, w2, 2, 1),             LayerSpec::leaky_relu(slope),
              LayerSpec::conv(3, w2, w3, 2, 1),             LayerSpec::leaky_relu(slope),
              LayerSpec::global_sum(),                      LayerSpec::dense(w3, 1)};
  s.validate();
  return s;
}

NetworkSpec NetworkSpec::classifier_net(Shape input, int classes, int w1, int w2, float slope) {
  NetworkSpec s;
  s.input = input;
  s.layers = {LayerSpec::conv(3, input.channels, w1, 1, 1), LayerSpec::leaky_relu(slope),
              LayerSpec::avg_pool(2),                       LayerSpec::conv(3, w1, w2, 1, 1),
              LayerSpec::leaky_relu(slope),                 LayerSpec::avg_pool(2)};
  const Shape before_dense = s.output_shape();
  s.layers.push_back(LayerSpec::dense(static_cast<int>(before_dense.numel()), classes));
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Parameters

bool operator==(const ParamEntry& a, const ParamEntry& b) {
  return a.name == b.name && a.shape == b.shape && a.values.size() == b.values.size() &&
         (a.values.empty() ||
          std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(float)) == 0);
}

NetworkParams::NetworkParams(std::vector<ParamEntry> entries) : entries_(std::move(entries)) {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    std::size_t n = 1;
    for (int d : entries_[i].shape) {
      if (d < 0) throw ShapeError("negative dimension in parameter " + entries_[i].name);
      n *= static_cast<std::size_t>(d);
    }
    if (n != entries_[i].values.size()) {
      throw ShapeError("parameter " + entries_[i].name + " has " +
                       std::to_string(entries_[i].values.size()) + " values, shape needs " +
                       std::to_string(n));
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (entries_[j].name == entries_[i].name) {
        throw ShapeError("duplicate parameter name " + entries_[i].name);
      }
    }
  }
}

NetworkParams NetworkParams::zeros(const NetworkSpec& spec) {
  std::vector<ParamEntry> entries;
  for (auto& p : spec.param_layout()) {
    entries.push_back({p.name, p.shape, std::vector<float>(p.numel(), 0.0f)});
  }
  return NetworkParams(std::move(entries));
}

NetworkParams NetworkParams::zeros_like(const NetworkParams& other) {
  NetworkParams z = other;
  for (auto& e : z.entries_) std::fill(e.values.begin(), e.values.end(), 0.0f);
  return z;
}

NetworkParams NetworkParams::normal(const NetworkSpec& spec, float stddev, RngStream& rng) {
  NetworkParams p = zeros(spec);
  for (auto& e : p.entries_) {
    for (float& v : e.values) v = stddev * rng.next_normal();
  }
  return p;
}

const ParamEntry* NetworkParams::find(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

ParamEntry* NetworkParams::find(std::string_view name) {
  for (auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::size_t NetworkParams::total_size() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.values.size();
  return n;
}

void NetworkParams::require_same_layout(const NetworkParams& other, const char* what) const {
  if (entries_.size() != other.entries_.size()) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(entries_.size()) +
                     " parameter entries, got " + std::to_string(other.entries_.size()));
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name ||
        entries_[i].shape != other.entries_[i].shape) {
      throw ShapeError(std::string(what) + ": parameter " + entries_[i].name +
                       " does not match " + other.entries_[i].name);
    }
  }
}

void NetworkParams::require_matches(const NetworkSpec& spec) const {
  const auto layout = spec.param_layout();
  if (layout.size() != entries_.size()) {
    throw ShapeError("architecture has " + std::to_string(layout.size()) +
                     " parameter entries, params have " + std::to_string(entries_.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].name != entries_[i].name || layout[i].shape != entries_[i].shape) {
      throw ShapeError("parameter " + entries_[i].name + " does not match architecture entry " +
                       layout[i].name);
    }
  }
}

std::vector<float> NetworkParams::flatten() const {
  std::vector<float> out;
  out.reserve(total_size());
  for (const auto& e : entries_) out.insert(out.end(), e.values.begin(), e.values.end());
  return out;
}

bool NetworkParams::all_finite() const {
  for (const auto& e : entries_) {
    for (float v : e.values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Evaluation

struct Network::Layer {
  LayerSpec spec;
  Shape in;
  Shape out;
  int weight_entry = -1;      // index into the parameter layout; bias is weight_entry + 1
  std::vector<float> w_fwd;   // conv: [K][Co] with K = (ky, kx, ci); dense: [S][O]
  std::vector<float> w_bwd;   // conv: [Co][K]
  std::vector<float> bias;
  std::vector<int> dense_canon;  // dense: storage index s -> canonical CHW index
};

Network::~Network() = default;
Network::Network(const Network&) = default;
Network::Network(Network&&) noexcept = default;
Network& Network::operator=(const Network&) = default;
Network& Network::operator=(Network&&) noexcept = default;

Network::Network(NetworkSpec spec, const NetworkParams& params)
    : spec_(std::move(spec)), shapes_(spec_.shapes()), layout_(spec_.param_layout()) {
  params.require_matches(spec_);
  output_size_ = shapes_.back().numel();
  int entry = 0;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    Layer L;
    L.spec = spec_.layers[i];
    L.in = shapes_[i];
    L.out = shapes_[i + 1];
    if (L.spec.kind == LayerKind::conv) {
      const int k = L.spec.kernel;
      const int ci = L.spec.in_channels;
      const int co = L.spec.out_channels;
      const int K = k * k * ci;
      const auto& w = params.entries()[entry].values;  // [co][ci][ky][kx]
      L.w_fwd.assign(static_cast<std::size_t>(K) * co, 0.0f);
      L.w_bwd.assign(static_cast<std::size_t>(K) * co, 0.0f);
      for (int o = 0; o < co; ++o)
        for (int c = 0; c < ci; ++c)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const float v = w[((static_cast<std::size_t>(o) * ci + c) * k + ky) * k + kx];
              const int kidx = (ky * k + kx) * ci + c;
              L.w_fwd[static_cast<std::size_t>(kidx) * co + o] = v;
              L.w_bwd[static_cast<std::size_t>(o) * K + kidx] = v;
            }
      L.bias = params.entries()[entry + 1].values;
      L.weight_entry = entry;
      entry += 2;
    } else if (L.spec.kind == LayerKind::dense) {
      const int S = L.spec.in_channels;
      const int O = L.spec.out_channels;
      const auto& w = params.entries()[entry].values;  // [O][S canonical]
      L.dense_canon.resize(S);
      const int C = L.in.channels, H = L.in.height, W = L.in.width;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          for (int c = 0; c < C; ++c) {
            const int s = (y * W + x) * C + c;
            L.dense_canon[s] = (c * H + y) * W + x;
          }
      L.w_fwd.assign(static_cast<std::size_t>(S) * O, 0.0f);
      for (int s = 0; s < S; ++s)
        for (int o = 0; o < O; ++o) {
          L.w_fwd[static_cast<std::size_t>(s) * O + o] =
              w[static_cast<std::size_t>(o) * S + L.dense_canon[s]];
        }
      L.bias = params.entries()[entry + 1].values;
      L.weight_entry = entry;
      entry += 2;
    }
    layers_.push_back(std::move(L));
  }
}

Network::Workspace Network::make_workspace() const {
  Workspace ws;
  ws.acts.resize(shapes_.size());
  std::size_t biggest = 0;
  for (std::size_t i = 0; i < shapes_.size(); ++i) {
    ws.acts[i].assign(shapes_[i].numel(), 0.0f);
    biggest = std::max(biggest, shapes_[i].numel());
  }
  ws.grad_a.assign(biggest, 0.0f);
  ws.grad_b.assign(biggest, 0.0f);
  return ws;
}

bool Network::fits(const Workspace& ws) const {
  if (ws.acts.size() != shapes_.size()) return false;
  std::size_t biggest = 0;
  for (std::size_t i = 0; i < shapes_.size(); ++i) {
    if (ws.acts[i].size() != shapes_[i].numel()) return false;
    biggest = std::max(biggest, shapes_[i].numel());
  }
  return ws.grad_a.size() == biggest && ws.grad_b.size() == biggest;
}

Network::Gradients Network::make_gradients() const {
  Gradients g;
  g.buffers.reserve(layout_.size());
  for (const auto& p : layout_) g.buffers.emplace_back(p.numel(), 0.0f);
  return g;
}

namespace {

inline void axpy(float a, const float* __restrict x, float* __restrict y, int n) {
  for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

void conv_forward(const float* __restrict in, const Shape& is, const Shape& os,
                  const LayerSpec& l, const float* __restrict w, const float* __restrict b,
                  float* __restrict out) {
  const int k = l.kernel, s = l.stride, pad = l.pad;
  const int ci = is.channels, co = os.channels;
  for (int oy = 0; oy < os.height; ++oy) {
    for (int ox = 0; ox < os.width; ++ox) {
      float* o = out + (static_cast<std::size_t>(oy) * os.width + ox) * co;
      std::copy(b, b + co, o);
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * s + ky - pad;
        if (iy < 0 || iy >= is.height) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * s + kx - pad;
          if (ix < 0 || ix >= is.width) continue;
          const float* a = in + (static_cast<std::size_t>(iy) * is.width + ix) * ci;
          const float* wk = w + static_cast<std::size_t>((ky * k + kx) * ci) * co;
          for (int c = 0; c < ci; ++c) axpy(a[c], wk + static_cast<std::size_t>(c) * co, o, co);
        }
      }
    }
  }
}

void conv_backward(const float* __restrict in, const Shape& is, const Shape& os,
                   const LayerSpec& l, const float* __restrict w_bwd,
                   const float* __restrict dout, float* __restrict din, float* __restrict dw,
                   float* __restrict db, float* __restrict dcols) {
  const int k = l.kernel, s = l.stride, pad = l.pad;
  const int ci = is.channels, co = os.channels;
  const int K = k * k * ci;
  if (din != nullptr) std::fill(din, din + is.numel(), 0.0f);
  for (int oy = 0; oy < os.height; ++oy) {
    for (int ox = 0; ox < os.width; ++ox) {
      const float* g = dout + (static_cast<std::size_t>(oy) * os.width + ox) * co;
      if (dw != nullptr) {
        for (int o = 0; o < co; ++o) db[o] += g[o];
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * s + ky - pad;
          if (iy < 0 || iy >= is.height) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * s + kx - pad;
            if (ix < 0 || ix >= is.width) continue;
            const float* a = in + (static_cast<std::size_t>(iy) * is.width + ix) * ci;
            float* dwk = dw + static_cast<std::size_t>((ky * k + kx) * ci) * co;
            for (int c = 0; c < ci; ++c) axpy(a[c], g, dwk + static_cast<std::size_t>(c) * co, co);
          }
        }
      }
      if (din != nullptr) {
        // dcols = W^T g over the full receptive field, then scatter the
        // in-bounds taps back onto the input grid.
        std::fill(dcols, dcols + K, 0.0f);
        for (int o = 0; o < co; ++o) axpy(g[o], w_bwd + static_cast<std::size_t>(o) * K, dcols, K);
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * s + ky - pad;
          if (iy < 0 || iy >= is.height) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * s + kx - pad;
            if (ix < 0 || ix >= is.width) continue;
            float* d = din + (static_cast<std::size_t>(iy) * is.width + ix) * ci;
            const float* src = dcols + (ky * k + kx) * ci;
            for (int c = 0; c < ci; ++c) d[c] += src[c];
          }
        }
      }
    }
  }
}

}  // namespace

std::span<const float> Network::forward(const ImageTensor& x, Workspace& ws) const {
  require_same_shape(spec_.input, x.shape(), "network input");
  if (!fits(ws)) ws = make_workspace();
  {
    const Shape& s = spec_.input;
    float* a0 = ws.acts[0].data();
    for (int c = 0; c < s.channels; ++c)
      for (int y = 0; y < s.height; ++y)
        for (int xx = 0; xx < s.width; ++xx)
          a0[(static_cast<std::size_t>(y) * s.width + xx) * s.channels + c] = x.at(c, y, xx);
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& L = layers_[i];
    const float* in = ws.acts[i].data();
    float* out = ws.acts[i + 1].data();
    switch (L.spec.kind) {
      case LayerKind::conv:
        conv_forward(in, L.in, L.out, L.spec, L.w_fwd.data(), L.bias.data(), out);
        break;
      case LayerKind::leaky_relu: {
        const float slope = L.spec.slope;
        const std::size_t n = L.in.numel();
        for (std::size_t j = 0; j < n; ++j) out[j] = in[j] > 0.0f ? in[j] : slope * in[j];
        break;
      }
      case LayerKind::avg_pool: {
        const int k = L.spec.kernel, C = L.in.channels;
        const float inv = 1.0f / static_cast<float>(k * k);
        for (int oy = 0; oy < L.out.height; ++oy)
          for (int ox = 0; ox < L.out.width; ++ox) {
            float* o = out + (static_cast<std::size_t>(oy) * L.out.width + ox) * C;
            std::fill(o, o + C, 0.0f);
            for (int dy = 0; dy < k; ++dy)
              for (int dx = 0; dx < k; ++dx) {
                const float* a =
                    in + (static_cast<std::size_t>(oy * k + dy) * L.in.width + ox * k + dx) * C;
                for (int c = 0; c < C; ++c) o[c] += a[c];
              }
            for (int c = 0; c < C; ++c) o[c] *= inv;
          }
        break;
      }
      case LayerKind::global_sum: {
        const int C = L.in.channels;
        const int P = L.in.height * L.in.width;
        std::fill(out, out + C, 0.0f);
        for (int p = 0; p < P; ++p) {
          const float* a = in + static_cast<std::size_t>(p) * C;
          for (int c = 0; c < C; ++c) out[c] += a[c];
        }
        break;
      }
      case LayerKind::dense: {
        const int S = L.spec.in_channels, O = L.spec.out_channels;
        std::copy(L.bias.begin(), L.bias.end(), out);
        for (int s = 0; s < S; ++s) axpy(in[s], L.w_fwd.data() + static_cast<std::size_t>(s) * O, out, O);
        break;
      }
    }
  }
  return ws.acts.back();
}

void Network::backward(std::span<const float> output_grad, Workspace& ws, ImageTensor* input_grad,
                       Gradients* grads) const {
  if (output_grad.size() != output_size_) {
    throw ShapeError("output gradient has " + std::to_string(output_grad.size()) +
                     " values, network output has " + std::to_string(output_size_));
  }
  if (grads != nullptr && grads->buffers.size() != layout_.size()) *grads = make_gradients();
  std::copy(output_grad.begin(), output_grad.end(), ws.grad_a.begin());
  for (std::size_t ii = layers_.size(); ii-- > 0;) {
    const Layer& L = layers_[ii];
    const float* in = ws.acts[ii].data();
    const float* dout = ws.grad_a.data();
    const bool need_din = ii > 0 || input_grad != nullptr;
    float* din = need_din ? ws.grad_b.data() : nullptr;
    switch (L.spec.kind) {
      case LayerKind::conv: {
        float* dw = grads ? grads->buffers[L.weight_entry].data() : nullptr;
        float* db = grads ? grads->buffers[L.weight_entry + 1].data() : nullptr;
        if (din != nullptr || dw != nullptr) {
          const std::size_t K = static_cast<std::size_t>(L.spec.kernel) * L.spec.kernel * L.spec.in_channels;
          if (ws.scratch.size() < K) ws.scratch.resize(K);
          conv_backward(in, L.in, L.out, L.spec, L.w_bwd.data(), dout, din, dw, db, ws.scratch.data());
        }
        break;
      }
      case LayerKind::leaky_relu: {
        if (din == nullptr) break;
        const float slope = L.spec.slope;
        const std::size_t n = L.in.numel();
        for (std::size_t j = 0; j < n; ++j) din[j] = in[j] > 0.0f ? dout[j] : slope * dout[j];
        break;
      }
      case LayerKind::avg_pool: {
        if (din == nullptr) break;
        const int k = L.spec.kernel, C = L.in.channels;
        const float inv = 1.0f / static_cast<float>(k * k);
        for (int oy = 0; oy < L.out.height; ++oy)
          for (int ox = 0; ox < L.out.width; ++ox) {
            const float* g = dout + (static_cast<std::size_t>(oy) * L.out.width + ox) * C;
            for (int dy = 0; dy < k; ++dy)
              for (int dx = 0; dx < k; ++dx) {
                float* d =
                    din + (static_cast<std::size_t>(oy * k + dy) * L.in.width + ox * k + dx) * C;
                for (int c = 0; c < C; ++c) d[c] = g[c] * inv;
              }
          }
        break;
      }
      case LayerKind::global_sum: {
        if (din == nullptr) break;
        const int C = L.in.channels;
        const int P = L.in.height * L.in.width;
        for (int p = 0; p < P; ++p) std::copy(dout, dout + C, din + static_cast<std::size_t>(p) * C);
        break;
      }
      case LayerKind::dense: {
        const int S = L.spec.in_channels, O = L.spec.out_channels;
        if (grads != nullptr) {
          float* dw = grads->buffers[L.weight_entry].data();
          float* db = grads->buffers[L.weight_entry + 1].data();
          for (int o = 0; o < O; ++o) db[o] += dout[o];
          for (int s = 0; s < S; ++s) axpy(in[s], dout, dw + static_cast<std::size_t>(s) * O, O);
        }
        if (din != nullptr) {
          for (int s = 0; s < S; ++s) {
            const float* w = L.w_fwd.data() + static_cast<std::size_t>(s) * O;
            float acc = 0.0f;
            for (int o = 0; o < O; ++o) acc += dout[o] * w[o];
            din[s] = acc;
          }
        }
        break;
      }
    }
    if (need_din) std::swap(ws.grad_a, ws.grad_b);
  }
  if (input_grad != nullptr) {
    const Shape& s = spec_.input;
    if (!(input_grad->shape() == s)) *input_grad = ImageTensor(s);
    const float* g = ws.grad_a.data();
    for (int c = 0; c < s.channels; ++c)
      for (int y = 0; y < s.height; ++y)
        for (int xx = 0; xx < s.width; ++xx)
          input_grad->at(c, y, xx) =
              g[(static_cast<std::size_t>(y) * s.width + xx) * s.channels + c];
  }
}

NetworkParams Network::to_params(const Gradients& grads, float scale) const {
  if (grads.buffers.size() != layout_.size()) {
    throw ShapeError("gradient buffers do not match the network layout");
  }
  std::vector<ParamEntry> entries;
  for (const auto& p : layout_) entries.push_back({p.name, p.shape, std::vector<float>(p.numel())});
  for (const Layer& L : layers_) {
    if (L.weight_entry < 0) continue;
    const auto& gw = grads.buffers[L.weight_entry];
    const auto& gb = grads.buffers[L.weight_entry + 1];
    auto& w = entries[L.weight_entry].values;
    auto& b = entries[L.weight_entry + 1].values;
    if (L.spec.kind == LayerKind::conv) {
      const int k = L.spec.kernel, ci = L.spec.in_channels, co = L.spec.out_channels;
      for (int o = 0; o < co; ++o)
        for (int c = 0; c < ci; ++c)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int kidx = (ky * k + kx) * ci + c;
              w[((static_cast<std::size_t>(o) * ci + c) * k + ky) * k + kx] =
                  gw[static_cast<std::size_t>(kidx) * co + o] * scale;
            }
    } else {
      const int S = L.spec.in_channels, O = L.spec.out_channels;
      for (int s = 0; s < S; ++s)
        for (int o = 0; o < O; ++o) {
          w[static_cast<std::size_t>(o) * S + L.dense_canon[s]] =
              gw[static_cast<std::size_t>(s) * O + o] * scale;
        }
    }
    for (std::size_t o = 0; o < b.size(); ++o) b[o] = gb[o] * scale;
  }
  return NetworkParams(std::move(entries));
}

// ---------------------------------------------------------------------------
// Losses and convenience entry points

std::vector<float> softmax(std::span<const float> logits) {
  std::vector<float> p(logits.size());
  if (logits.empty()) return p;
  const float m = *std::max_element(logits.begin(), logits.end());
  float z = 0.0f;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    z += p[i];
  }
  for (float& v : p) v /= z;
  return p;
}

float softmax_cross_entropy(std::span<const float> logits, int label, std::span<float> dlogits) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw ConfigError("label " + std::to_string(label) + " outside [0, " +
                      std::to_string(logits.size()) + ")");
  }
  const float m = *std::max_element(logits.begin(), logits.end());
  float z = 0.0f;
  for (float v : logits) z += std::exp(v - m);
  const float log_z = m + std::log(z);
  if (!dlogits.empty()) {
    if (dlogits.size() != logits.size()) throw ShapeError("dlogits size mismatch");
    for (std::size_t i = 0; i < logits.size(); ++i) dlogits[i] = std::exp(logits[i] - log_z);
    dlogits[label] -= 1.0f;
  }
  return log_z - logits[label];
}

int argmax(std::span<const float> values) {
  if (values.empty()) throw ShapeError("argmax of an empty vector");
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

namespace {

void require_scalar(const NetworkSpec& spec) {
  if (spec.output_size() != 1) {
    throw ShapeError("energy network must output one scalar, architecture outputs " +
                     std::to_string(spec.output_size()));
  }
}

}  // namespace

float energy(const NetworkSpec& spec, const NetworkParams& params, const ImageTensor& x) {
  require_scalar(spec);
  Network net(spec, params);
  auto ws = net.make_workspace();
  return net.forward(x, ws)[0];
}

ImageTensor energy_input_grad(const NetworkSpec& spec, const NetworkParams& params,
                              const ImageTensor& x) {
  require_scalar(spec);
  Network net(spec, params);
  auto ws = net.make_workspace();
  net.forward(x, ws);
  ImageTensor grad(spec.input);
  const float one = 1.0f;
  net.backward(std::span(&one, 1), ws, &grad, nullptr);
  return grad;
}

NetworkParams energy_param_grad(const NetworkSpec& spec, const NetworkParams& params,
                                std::span<const ImageTensor> batch) {
  require_scalar(spec);
  if (batch.empty()) throw ConfigError("energy_param_grad needs a non-empty batch");
  Network net(spec, params);
  auto ws = net.make_workspace();
  auto grads = net.make_gradients();
  const float one = 1.0f;
  for (const ImageTensor& x : batch) {
    net.forward(x, ws);
    net.backward(std::span(&one, 1), ws, nullptr, &grads);
  }
  return net.to_params(grads, 1.0f / static_cast<float>(batch.size()));
}

std::vector<float> classifier_forward(const NetworkSpec& spec, const NetworkParams& params,
                                      const ImageTensor& x) {
  Network net(spec, params);
  auto ws = net.make_workspace();
  auto out = net.forward(x, ws);
  return {out.begin(), out.end()};
}

LossAndGrads classifier_backward(const NetworkSpec& spec, const NetworkParams& params,
                                 const ImageTensor& x, int label) {
  Network net(spec, params);
  if (label < 0 || static_cast<std::size_t>(label) >= net.output_size()) {
    throw ConfigError("label " + std::to_string(label) + " outside [0, " +
                      std::to_string(net.output_size()) + ")");
  }
  auto ws = net.make_workspace();
  auto logits = net.forward(x, ws);
  std::vector<float> dlogits(logits.size());
  LossAndGrads out;
  out.loss = softmax_cross_entropy(logits, label, dlogits);
  auto grads = net.make_gradients();
  net.backward(dlogits, ws, nullptr, &grads);
  out.grads = net.to_params(grads, 1.0f);
  return out;
}

}  // namespace purekit
