// SPDX-License-Identifier: Apache-2.0

#include "soar/encoder.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

#include "soar/errors.hpp"
#include "soar/io.hpp"
#include "soar/ssm.hpp"

namespace soar::encoder {
namespace {

static_assert(std::endian::native == std::endian::little, "weight files assume a little-endian host");

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double silu(double x) { return x * sigmoid(x); }
double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }
double gelu_grad(double x) {
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

template <class F>
MatrixXd map(const MatrixXd& m, F f) {
  return m.unaryExpr([&](double v) { return f(v); });
}

struct NormCache {
  MatrixXd xhat;
  VectorXd inv_std;
};

MatrixXd norm_forward(const MatrixXd& x, const VectorXd& scale, const VectorXd& offset,
                      NormCache* cache) {
  const auto cols = static_cast<double>(x.cols());
  MatrixXd xhat(x.rows(), x.cols());
  VectorXd inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / cols;
    const double var = (x.row(r).array() - mean).square().sum() / cols;
    inv_std[r] = 1.0 / std::sqrt(var + kNormEpsilon);
    xhat.row(r) = (x.row(r).array() - mean) * inv_std[r];
  }
  MatrixXd y = (xhat.array().rowwise() * scale.transpose().array()).rowwise() +
               offset.transpose().array();
  if (cache) *cache = {std::move(xhat), std::move(inv_std)};
  return y;
}

MatrixXd norm_backward(const MatrixXd& dy, const VectorXd& scale, const NormCache& cache,
                       VectorXd& dscale, VectorXd& doffset) {
  dscale += (dy.array() * cache.xhat.array()).colwise().sum().transpose().matrix();
  doffset += dy.colwise().sum().transpose();
  const MatrixXd dxhat = dy.array().rowwise() * scale.transpose().array();
  const auto cols = static_cast<double>(dy.cols());
  MatrixXd dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double mean_d = dxhat.row(r).sum() / cols;
    const double mean_dx = dxhat.row(r).dot(cache.xhat.row(r)) / cols;
    dx.row(r) = cache.inv_std[r] *
                (dxhat.row(r).array() - mean_d - cache.xhat.row(r).array() * mean_dx);
  }
  return dx;
}

MatrixXd reversed(const MatrixXd& m) { return m.colwise().reverse(); }

struct DirectionCache {
  MatrixXd x;    // direction input, already reversed for the backward pass
  MatrixXd pre;  // conv output
  MatrixXd act;  // SiLU(pre)
  MatrixXd delta_raw;
  MatrixXd delta;
  MatrixXd f;
  MatrixXd g;
  MatrixXd y;
};

struct BlockCache {
  NormCache norm;
  MatrixXd normed;
  MatrixXd x;
  MatrixXd z;
  DirectionCache fwd;
  DirectionCache bwd;
  MatrixXd s;  // y_f + reverse(y_b)
  MatrixXd h;  // combined, before the output projection
};

ssm::SelectiveParams channel_params(const DirectionCache& c, const MatrixXd& evolution,
                                    Eigen::Index ch) {
  const RowMajor f = c.f;
  const RowMajor g = c.g;
  ssm::SelectiveParams sel;
  const VectorXd e = evolution.row(ch).transpose();
  sel.evolution.assign(e.data(), e.data() + e.size());
  sel.delta.assign(c.delta.col(ch).data(), c.delta.col(ch).data() + c.delta.rows());
  sel.input_proj.assign(f.data(), f.data() + f.size());
  sel.output_proj.assign(g.data(), g.data() + g.size());
  return sel;
}

void direction_forward(const MatrixXd& x, const DirectionWeights& w, const MatrixXd& evolution,
                       DirectionCache& c) {
  const Eigen::Index steps = x.rows();
  const Eigen::Index inner = x.cols();
  const Eigen::Index width = w.conv.rows();
  c.x = x;
  c.pre = MatrixXd(steps, inner);
  for (Eigen::Index t = 0; t < steps; ++t) {
    c.pre.row(t) = w.conv_bias.transpose();
    for (Eigen::Index k = 0; k < width; ++k) {
      const Eigen::Index src = t - (width - 1) + k;
      if (src >= 0) c.pre.row(t).array() += w.conv.row(k).array() * x.row(src).array();
    }
  }
  c.act = map(c.pre, silu);
  c.delta_raw = (c.act * w.delta_proj).rowwise() + w.delta_bias.transpose();
  c.delta = map(c.delta_raw, softplus);
  c.f = c.act * w.input_proj;
  c.g = c.act * w.output_proj;
  c.y = MatrixXd(steps, inner);
  const std::vector<double> z0(static_cast<std::size_t>(evolution.cols()), 0.0);
  for (Eigen::Index ch = 0; ch < inner; ++ch) {
    const auto sel = channel_params(c, evolution, ch);
    const VectorXd u = c.act.col(ch);
    const auto out = ssm::selective_scan(sel, std::span<const double>(u.data(), u.size()), z0);
    for (Eigen::Index t = 0; t < steps; ++t) c.y(t, ch) = out.output[t];
  }
}

// Returns the gradient with respect to the direction input x.
MatrixXd direction_backward(const DirectionCache& c, const MatrixXd& dy, const DirectionWeights& w,
                            const MatrixXd& evolution, DirectionWeights& gw, MatrixXd& gevolution) {
  const Eigen::Index steps = c.x.rows();
  const Eigen::Index inner = c.x.cols();
  const Eigen::Index width = w.conv.rows();
  const Eigen::Index n_state = evolution.cols();
  MatrixXd dact = MatrixXd::Zero(steps, inner);
  MatrixXd ddelta(steps, inner);
  MatrixXd df = MatrixXd::Zero(steps, n_state);
  MatrixXd dg = MatrixXd::Zero(steps, n_state);
  const std::vector<double> z0(static_cast<std::size_t>(n_state), 0.0);
  for (Eigen::Index ch = 0; ch < inner; ++ch) {
    const auto sel = channel_params(c, evolution, ch);
    const VectorXd u = c.act.col(ch);
    const VectorXd v = dy.col(ch);
    const auto g = ssm::selective_scan_grad(sel, std::span<const double>(u.data(), u.size()), z0,
                                            std::span<const double>(v.data(), v.size()));
    for (Eigen::Index t = 0; t < steps; ++t) {
      dact(t, ch) += g.input[t];
      ddelta(t, ch) = g.delta[t];
      for (Eigen::Index n = 0; n < n_state; ++n) {
        df(t, n) += g.input_proj[t * n_state + n];
        dg(t, n) += g.output_proj[t * n_state + n];
      }
    }
    for (Eigen::Index n = 0; n < n_state; ++n) gevolution(ch, n) += g.evolution[n];
  }
  const MatrixXd ddelta_raw = ddelta.cwiseProduct(map(c.delta_raw, sigmoid));
  gw.delta_proj += c.act.transpose() * ddelta_raw;
  gw.delta_bias += ddelta_raw.colwise().sum().transpose();
  gw.input_proj += c.act.transpose() * df;
  gw.output_proj += c.act.transpose() * dg;
  dact += ddelta_raw * w.delta_proj.transpose() + df * w.input_proj.transpose() +
          dg * w.output_proj.transpose();

  const MatrixXd dpre = dact.cwiseProduct(map(c.pre, silu_grad));
  gw.conv_bias += dpre.colwise().sum().transpose();
  MatrixXd dx = MatrixXd::Zero(steps, inner);
  for (Eigen::Index t = 0; t < steps; ++t) {
    for (Eigen::Index k = 0; k < width; ++k) {
      const Eigen::Index src = t - (width - 1) + k;
      if (src < 0) continue;
      gw.conv.row(k).array() += dpre.row(t).array() * c.x.row(src).array();
      dx.row(src).array() += dpre.row(t).array() * w.conv.row(k).array();
    }
  }
  return dx;
}

MatrixXd block_forward(const MatrixXd& v, const SoarBlockWeights& w, Combine combine,
                       BlockCache& c) {
  if (!v.allFinite()) throw NumericError("soar_block: non-finite input");
  c.normed = norm_forward(v, w.norm_scale, w.norm_offset, &c.norm);
  c.x = c.normed * w.in_x;
  c.z = c.normed * w.in_z;
  direction_forward(c.x, w.forward, w.evolution, c.fwd);
  direction_forward(reversed(c.x), w.backward, w.evolution, c.bwd);
  c.s = c.fwd.y + reversed(c.bwd.y);
  c.h = combine == Combine::gated ? MatrixXd(c.s.cwiseProduct(map(c.z, silu))) : c.s;
  MatrixXd out = v + c.h * w.out_proj;
  if (!out.allFinite()) throw NumericError("soar_block: non-finite output");
  return out;
}

MatrixXd block_backward(const BlockCache& c, const MatrixXd& dout, const SoarBlockWeights& w,
                        Combine combine, SoarBlockWeights& gw) {
  gw.out_proj += c.h.transpose() * dout;
  const MatrixXd dh = dout * w.out_proj.transpose();
  MatrixXd ds = dh;
  MatrixXd dz = MatrixXd::Zero(c.z.rows(), c.z.cols());
  if (combine == Combine::gated) {
    ds = dh.cwiseProduct(map(c.z, silu));
    dz = dh.cwiseProduct(c.s).cwiseProduct(map(c.z, silu_grad));
  }
  MatrixXd dx = direction_backward(c.fwd, ds, w.forward, w.evolution, gw.forward, gw.evolution);
  dx += reversed(
      direction_backward(c.bwd, reversed(ds), w.backward, w.evolution, gw.backward, gw.evolution));
  gw.in_x += c.normed.transpose() * dx;
  gw.in_z += c.normed.transpose() * dz;
  const MatrixXd dnormed = dx * w.in_x.transpose() + dz * w.in_z.transpose();
  return dout + norm_backward(dnormed, w.norm_scale, c.norm, gw.norm_scale, gw.norm_offset);
}

void shape_direction(DirectionWeights& d, int width, int inner, int state) {
  d.conv = MatrixXd::Zero(width, inner);
  d.conv_bias = VectorXd::Zero(inner);
  d.delta_proj = MatrixXd::Zero(inner, inner);
  d.delta_bias = VectorXd::Zero(inner);
  d.input_proj = MatrixXd::Zero(inner, state);
  d.output_proj = MatrixXd::Zero(inner, state);
}

void add_view(std::vector<TensorView>& out, std::string name, MatrixXd& m) {
  out.push_back({std::move(name),
                 {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())},
                 m.data(),
                 static_cast<std::size_t>(m.size())});
}

void add_view(std::vector<TensorView>& out, std::string name, VectorXd& v) {
  out.push_back({std::move(name), {static_cast<std::uint64_t>(v.size())}, v.data(),
                 static_cast<std::size_t>(v.size())});
}

void add_direction(std::vector<TensorView>& out, const std::string& prefix, DirectionWeights& d) {
  add_view(out, prefix + ".conv.weight", d.conv);
  add_view(out, prefix + ".conv.bias", d.conv_bias);
  add_view(out, prefix + ".delta_proj.weight", d.delta_proj);
  add_view(out, prefix + ".delta_proj.bias", d.delta_bias);
  add_view(out, prefix + ".f_proj.weight", d.input_proj);
  add_view(out, prefix + ".g_proj.weight", d.output_proj);
}

bool is_unit_init(const std::string& name) { return name.ends_with("norm.scale"); }
bool is_zero_init(const std::string& name) {
  return name.ends_with(".bias") || name.ends_with("norm.offset");
}

int parse_int(const std::string& key, const std::string& value, std::size_t line,
              const std::string& source) {
  try {
    std::size_t used = 0;
    const long v = std::stol(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return static_cast<int>(v);
  } catch (const std::exception&) {
    throw ParseError("invalid integer for " + key + ": '" + value + "'", line, source);
  }
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class T>
void put(std::string& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.append(bytes, sizeof(T));
}

class Reader {
 public:
  Reader(std::string data, std::string source) : data_(std::move(data)), source_(std::move(source)) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw IoError(source_ + ": truncated weight file");
  }

  std::string data_;
  std::string source_;
  std::size_t pos_{0};
};

}  // namespace

void EncoderConfig::validate() const {
  for (int v : {image_h, image_w, channels, embed_dim, inner_dim, state_dim, depth, num_classes,
                mlp_hidden, conv_width}) {
    if (v <= 0) throw ContractError("EncoderConfig: all sizes must be positive");
  }
  if (patch_mode == PatchMode::nonoverlap) {
    if (patch_size <= 0 || image_h % patch_size != 0 || image_w % patch_size != 0) {
      throw ContractError("EncoderConfig: patch_size must divide image_h and image_w");
    }
  } else {
    if (kernel <= 0 || stride <= 0 || kernel > image_h || kernel > image_w ||
        (image_h - kernel) % stride != 0 || (image_w - kernel) % stride != 0) {
      throw ContractError("EncoderConfig: (image - kernel) must be a multiple of stride");
    }
  }
}

int EncoderConfig::grid_h() const {
  return patch_mode == PatchMode::nonoverlap ? image_h / patch_size : (image_h - kernel) / stride + 1;
}

int EncoderConfig::grid_w() const {
  return patch_mode == PatchMode::nonoverlap ? image_w / patch_size : (image_w - kernel) / stride + 1;
}

int EncoderConfig::patch_len() const {
  const int side = patch_mode == PatchMode::nonoverlap ? patch_size : kernel;
  return side * side * channels;
}

EncoderConfig EncoderConfig::parse(const std::string& text, const std::string& source) {
  EncoderConfig cfg;
  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string body = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", line, source);
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    auto integer = [&] { return parse_int(key, value, line, source); };
    if (key == "image_h") cfg.image_h = integer();
    else if (key == "image_w") cfg.image_w = integer();
    else if (key == "channels") cfg.channels = integer();
    else if (key == "patch_size") cfg.patch_size = integer();
    else if (key == "kernel") cfg.kernel = integer();
    else if (key == "stride") cfg.stride = integer();
    else if (key == "embed_dim") cfg.embed_dim = integer();
    else if (key == "inner_dim") cfg.inner_dim = integer();
    else if (key == "state_dim") cfg.state_dim = integer();
    else if (key == "depth") cfg.depth = integer();
    else if (key == "num_classes") cfg.num_classes = integer();
    else if (key == "mlp_hidden") cfg.mlp_hidden = integer();
    else if (key == "conv_width") cfg.conv_width = integer();
    else if (key == "seed") {
      try {
        std::size_t used = 0;
        cfg.seed = std::stoull(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
      } catch (const std::exception&) {
        throw ParseError("invalid seed: '" + value + "'", line, source);
      }
    } else if (key == "patch_mode") {
      if (value == "nonoverlap") cfg.patch_mode = PatchMode::nonoverlap;
      else if (value == "conv") cfg.patch_mode = PatchMode::conv;
      else throw ParseError("patch_mode must be nonoverlap or conv", line, source);
    } else if (key == "combine") {
      if (value == "gated") cfg.combine = Combine::gated;
      else if (value == "sum") cfg.combine = Combine::sum;
      else throw ParseError("combine must be gated or sum", line, source);
    } else {
      throw ParseError("unknown key '" + key + "'", line, source);
    }
  }
  return cfg;
}

EncoderConfig EncoderConfig::load(const std::filesystem::path& path) {
  return parse(read_file(path), path.string());
}

std::string EncoderConfig::to_text() const {
  std::ostringstream out;
  out << "image_h = " << image_h << "\nimage_w = " << image_w << "\nchannels = " << channels
      << "\npatch_mode = " << (patch_mode == PatchMode::nonoverlap ? "nonoverlap" : "conv")
      << "\npatch_size = " << patch_size << "\nkernel = " << kernel << "\nstride = " << stride
      << "\nembed_dim = " << embed_dim << "\ninner_dim = " << inner_dim
      << "\nstate_dim = " << state_dim << "\ndepth = " << depth
      << "\nnum_classes = " << num_classes << "\nmlp_hidden = " << mlp_hidden
      << "\nconv_width = " << conv_width
      << "\ncombine = " << (combine == Combine::gated ? "gated" : "sum") << "\nseed = " << seed
      << "\n";
  return out.str();
}

EncoderWeights zero_weights(const EncoderConfig& config) {
  config.validate();
  const int d = config.embed_dim, inner = config.inner_dim, n = config.state_dim;
  EncoderWeights w;
  w.patch_proj = MatrixXd::Zero(config.patch_len(), d);
  w.cls = VectorXd::Zero(d);
  w.pos = MatrixXd::Zero(config.token_count() + 1, d);
  w.blocks.resize(static_cast<std::size_t>(config.depth));
  for (auto& b : w.blocks) {
    b.norm_scale = VectorXd::Zero(d);
    b.norm_offset = VectorXd::Zero(d);
    b.in_x = MatrixXd::Zero(d, inner);
    b.in_z = MatrixXd::Zero(d, inner);
    shape_direction(b.forward, config.conv_width, inner, n);
    shape_direction(b.backward, config.conv_width, inner, n);
    b.evolution = MatrixXd::Zero(inner, n);
    b.out_proj = MatrixXd::Zero(inner, d);
  }
  w.head_norm_scale = VectorXd::Zero(d);
  w.head_norm_offset = VectorXd::Zero(d);
  w.fc1 = MatrixXd::Zero(d, config.mlp_hidden);
  w.fc1_bias = VectorXd::Zero(config.mlp_hidden);
  w.fc2 = MatrixXd::Zero(config.mlp_hidden, config.num_classes);
  w.fc2_bias = VectorXd::Zero(config.num_classes);
  return w;
}

EncoderWeights init_weights(const EncoderConfig& config) {
  EncoderWeights w = zero_weights(config);
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, kInitScale);
  for (auto& t : tensors(w)) {
    if (t.name.ends_with(".evolution")) {
      // column-major storage: entry i belongs to state index i / rows
      for (std::size_t i = 0; i < t.size; ++i) {
        t.data[i] = -static_cast<double>(i / static_cast<std::size_t>(t.dims[0]) + 1);
      }
    } else if (is_unit_init(t.name)) {
      std::fill(t.data, t.data + t.size, 1.0);
    } else if (!is_zero_init(t.name)) {
      for (std::size_t i = 0; i < t.size; ++i) t.data[i] = normal(rng);
    }
  }
  return w;
}

std::vector<TensorView> tensors(EncoderWeights& w) {
  std::vector<TensorView> out;
  add_view(out, "embed.patch_proj", w.patch_proj);
  add_view(out, "embed.cls", w.cls);
  add_view(out, "embed.pos", w.pos);
  for (std::size_t i = 0; i < w.blocks.size(); ++i) {
    auto& b = w.blocks[i];
    const std::string p = "blocks." + std::to_string(i);
    add_view(out, p + ".norm.scale", b.norm_scale);
    add_view(out, p + ".norm.offset", b.norm_offset);
    add_view(out, p + ".in_x.weight", b.in_x);
    add_view(out, p + ".in_z.weight", b.in_z);
    add_direction(out, p + ".forward", b.forward);
    add_direction(out, p + ".backward", b.backward);
    add_view(out, p + ".evolution", b.evolution);
    add_view(out, p + ".out_proj.weight", b.out_proj);
  }
  add_view(out, "head.norm.scale", w.head_norm_scale);
  add_view(out, "head.norm.offset", w.head_norm_offset);
  add_view(out, "head.fc1.weight", w.fc1);
  add_view(out, "head.fc1.bias", w.fc1_bias);
  add_view(out, "head.fc2.weight", w.fc2);
  add_view(out, "head.fc2.bias", w.fc2_bias);
  return out;
}

std::size_t parameter_count(const EncoderWeights& weights) {
  std::size_t total = 0;
  for (const auto& t : tensors(const_cast<EncoderWeights&>(weights))) total += t.size;
  return total;
}

void save_weights(const std::filesystem::path& path, const EncoderWeights& weights) {
  auto views = tensors(const_cast<EncoderWeights&>(weights));
  std::string out = "SOAR";
  put<std::uint32_t>(out, 1);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(views.size()));
  for (const auto& t : views) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) put<std::uint64_t>(out, d);
    // payload is row-major regardless of in-memory layout
    if (t.dims.size() == 2) {
      const Eigen::Map<const MatrixXd> m(t.data, static_cast<Eigen::Index>(t.dims[0]),
                                         static_cast<Eigen::Index>(t.dims[1]));
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) put<double>(out, m(r, c));
    } else {
      for (std::size_t i = 0; i < t.size; ++i) put<double>(out, t.data[i]);
    }
  }
  write_file_atomic(path, out);
}

EncoderWeights load_weights(const std::filesystem::path& path, const EncoderConfig& config) {
  EncoderWeights w = zero_weights(config);
  auto views = tensors(w);
  Reader in(read_file(path), path.string());
  if (in.bytes(4) != "SOAR") throw IoError(path.string() + ": bad magic");
  if (const auto version = in.get<std::uint32_t>(); version != 1) {
    throw SchemaError(path.string() + ": unsupported version " + std::to_string(version));
  }
  if (in.get<std::uint32_t>() != views.size()) {
    throw SchemaError(path.string() + ": tensor count does not match the config");
  }
  for (auto& t : views) {
    const std::string name = in.bytes(in.get<std::uint32_t>());
    if (name != t.name) throw SchemaError(path.string() + ": expected tensor " + t.name + ", found " + name);
    const auto rank = in.get<std::uint32_t>();
    std::vector<std::uint64_t> dims(rank);
    for (auto& d : dims) d = in.get<std::uint64_t>();
    if (dims != t.dims) throw SchemaError(path.string() + ": shape mismatch for " + name);
    if (rank == 2) {
      Eigen::Map<MatrixXd> m(t.data, static_cast<Eigen::Index>(dims[0]),
                             static_cast<Eigen::Index>(dims[1]));
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = in.get<double>();
    } else {
      for (std::size_t i = 0; i < t.size; ++i) t.data[i] = in.get<double>();
    }
  }
  if (!in.done()) throw IoError(path.string() + ": trailing bytes");
  return w;
}

MatrixXd patchify(const ImageTensor& image, const EncoderConfig& config) {
  config.validate();
  if (image.height != config.image_h || image.width != config.image_w ||
      image.channels != config.channels ||
      image.data.size() != static_cast<std::size_t>(image.height) * image.width * image.channels) {
    throw ContractError("patchify: image does not match the configured geometry");
  }
  const bool conv = config.patch_mode == PatchMode::conv;
  const int side = conv ? config.kernel : config.patch_size;
  const int step = conv ? config.stride : config.patch_size;
  MatrixXd out(config.token_count(), config.patch_len());
  Eigen::Index row = 0;
  for (int gy = 0; gy < config.grid_h(); ++gy) {
    for (int gx = 0; gx < config.grid_w(); ++gx, ++row) {
      Eigen::Index col = 0;
      for (int dy = 0; dy < side; ++dy)
        for (int dx = 0; dx < side; ++dx)
          for (int c = 0; c < image.channels; ++c) out(row, col++) = image.at(gy * step + dy, gx * step + dx, c);
    }
  }
  return out;
}

MatrixXd embed_tokens(const MatrixXd& patches, const MatrixXd& patch_proj, const VectorXd& cls,
                      const MatrixXd& pos) {
  if (patches.cols() != patch_proj.rows() || patch_proj.cols() != cls.size() ||
      pos.rows() != patches.rows() + 1 || pos.cols() != cls.size()) {
    throw ContractError("embed_tokens: inconsistent shapes");
  }
  MatrixXd v(patches.rows() + 1, cls.size());
  v.row(0) = cls.transpose();
  v.bottomRows(patches.rows()) = patches * patch_proj;
  return v + pos;
}

MatrixXd layer_norm(const MatrixXd& x, const VectorXd& scale, const VectorXd& offset) {
  if (scale.size() != x.cols() || offset.size() != x.cols()) {
    throw ContractError("layer_norm: scale/offset must match the feature width");
  }
  return norm_forward(x, scale, offset, nullptr);
}

MatrixXd soar_block(const MatrixXd& tokens, const SoarBlockWeights& w, Combine combine) {
  if (tokens.cols() != w.in_x.rows() || tokens.cols() != w.out_proj.cols()) {
    throw ContractError("soar_block: token width does not match the block");
  }
  BlockCache cache;
  return block_forward(tokens, w, combine, cache);
}

Encoder::Encoder(EncoderConfig config) : config_(config), weights_(init_weights(config)) {}

Encoder::Encoder(EncoderConfig config, EncoderWeights weights)
    : config_(config), weights_(std::move(weights)) {
  config_.validate();
  check_shapes();
}

void Encoder::check_shapes() const {
  auto expected = zero_weights(config_);
  const auto want = tensors(expected);
  const auto have = tensors(const_cast<EncoderWeights&>(weights_));
  if (want.size() != have.size()) throw ContractError("Encoder: weights do not match the config");
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (want[i].dims != have[i].dims) {
      throw ContractError("Encoder: shape mismatch for " + want[i].name);
    }
  }
}

MatrixXd Encoder::sequence(const ImageTensor& image) const {
  MatrixXd v = embed_tokens(patchify(image, config_), weights_.patch_proj, weights_.cls,
                            weights_.pos);
  for (const auto& b : weights_.blocks) v = soar_block(v, b, config_.combine);
  return v;
}

VectorXd Encoder::encode(const ImageTensor& image) const {
  const MatrixXd v = sequence(image);
  const MatrixXd q = layer_norm(v.topRows(1), weights_.head_norm_scale, weights_.head_norm_offset);
  const MatrixXd hidden =
      map((q * weights_.fc1).rowwise() + weights_.fc1_bias.transpose(), gelu);
  return ((hidden * weights_.fc2).rowwise() + weights_.fc2_bias.transpose()).transpose();
}

EncoderWeights Encoder::gradient(const ImageTensor& image, const VectorXd& score_grad) const {
  if (score_grad.size() != config_.num_classes) {
    throw ContractError("Encoder::gradient: score_grad must have num_classes entries");
  }
  EncoderWeights g = zero_weights(config_);
  const MatrixXd patches = patchify(image, config_);
  MatrixXd v = embed_tokens(patches, weights_.patch_proj, weights_.cls, weights_.pos);
  std::vector<BlockCache> caches(weights_.blocks.size());
  for (std::size_t i = 0; i < weights_.blocks.size(); ++i) {
    v = block_forward(v, weights_.blocks[i], config_.combine, caches[i]);
  }

  NormCache head_norm;
  const MatrixXd q =
      norm_forward(v.topRows(1), weights_.head_norm_scale, weights_.head_norm_offset, &head_norm);
  const MatrixXd pre = (q * weights_.fc1).rowwise() + weights_.fc1_bias.transpose();
  const MatrixXd hidden = map(pre, gelu);

  const MatrixXd dscores = score_grad.transpose();
  g.fc2 = hidden.transpose() * dscores;
  g.fc2_bias = score_grad;
  const MatrixXd dpre = (dscores * weights_.fc2.transpose()).cwiseProduct(map(pre, gelu_grad));
  g.fc1 = q.transpose() * dpre;
  g.fc1_bias = dpre.transpose();
  const MatrixXd dq = dpre * weights_.fc1.transpose();
  MatrixXd dv = MatrixXd::Zero(v.rows(), v.cols());
  dv.topRows(1) = norm_backward(dq, weights_.head_norm_scale, head_norm, g.head_norm_scale,
                                g.head_norm_offset);

  for (std::size_t i = weights_.blocks.size(); i-- > 0;) {
    dv = block_backward(caches[i], dv, weights_.blocks[i], config_.combine, g.blocks[i]);
  }
  g.pos = dv;
  g.cls = dv.row(0).transpose();
  g.patch_proj = patches.transpose() * dv.bottomRows(patches.rows());
  return g;
}

ComputeBudget count_params_gflops(const EncoderConfig& config) {
  config.validate();
  using U = std::uint64_t;
  const U d = static_cast<U>(config.embed_dim), inner = static_cast<U>(config.inner_dim),
          n = static_cast<U>(config.state_dim), width = static_cast<U>(config.conv_width),
          hidden = static_cast<U>(config.mlp_hidden), classes = static_cast<U>(config.num_classes),
          j = static_cast<U>(config.token_count()), len = static_cast<U>(config.patch_len());
  const U tokens = j + 1;
  ComputeBudget b;
  b.items.push_back({"embed.patch_proj", len * d, j * len * d});
  b.items.push_back({"embed.cls", d, 0});
  b.items.push_back({"embed.pos", tokens * d, 0});
  for (int i = 0; i < config.depth; ++i) {
    const std::string p = "blocks." + std::to_string(i);
    b.items.push_back({p + ".norm", 2 * d, 0});
    b.items.push_back({p + ".in_proj", 2 * d * inner, 2 * tokens * d * inner});
    for (const char* dir : {".forward", ".backward"}) {
      b.items.push_back({p + dir + ".conv", width * inner + inner, tokens * width * inner});
      b.items.push_back({p + dir + ".delta_proj", inner * inner + inner, tokens * inner * inner});
      b.items.push_back({p + dir + ".f_proj", inner * n, tokens * inner * n});
      b.items.push_back({p + dir + ".g_proj", inner * n, tokens * inner * n});
      b.items.push_back({p + dir + ".scan", 0, ssm::scan_macs(tokens, n, inner)});
    }
    b.items.push_back({p + ".evolution", inner * n, 0});
    b.items.push_back({p + ".out_proj", inner * d, tokens * inner * d});
  }
  b.items.push_back({"head.norm", 2 * d, 0});
  b.items.push_back({"head.fc1", d * hidden + hidden, d * hidden});
  b.items.push_back({"head.fc2", hidden * classes + classes, hidden * classes});
  U macs = 0;
  for (const auto& item : b.items) {
    b.params += item.params;
    macs += item.macs;
  }
  b.gflops = 2.0 * static_cast<double>(macs) / 1e9;
  return b;
}

}  // namespace soar::encoder
