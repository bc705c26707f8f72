#include "dmc/tcn.hpp"

#include <cmath>
#include <stdexcept>

#include "dmc/rng.hpp"

namespace dmc::tcn {

using ag::Mode;
using ag::Shape;
using ag::Tensor;

TcnConfig TcnConfig::preset(const std::string &name, std::size_t width) {
  TcnConfig c;
  if (name == "tcn10")
    c.n_blocks = 10;
  else if (name == "tcn20")
    c.n_blocks = 20;
  else if (name == "tcn30")
    c.n_blocks = 30;
  else
    throw std::invalid_argument("unknown TCN preset '" + name + "' (tcn10, tcn20, tcn30)");
  c.channel_width = width;
  c.validate();
  return c;
}

void TcnConfig::validate() const {
  if (n_blocks == 0)
    throw std::invalid_argument("TcnConfig: n_blocks must be positive");
  if (kernel_size < 2)
    throw std::invalid_argument("TcnConfig: kernel_size must be at least 2");
  if (channel_width == 0 || cond_dim == 0 || film_hidden == 0 || n_params == 0)
    throw std::invalid_argument("TcnConfig: widths must be positive");
}

nlohmann::ordered_json TcnConfig::to_json() const {
  nlohmann::ordered_json j;
  j["n_blocks"] = n_blocks;
  j["kernel_size"] = kernel_size;
  j["channel_width"] = channel_width;
  j["cond_dim"] = cond_dim;
  j["film_hidden"] = film_hidden;
  j["n_params"] = n_params;
  return j;
}

TcnConfig TcnConfig::from_json(const nlohmann::ordered_json &j) {
  TcnConfig c;
  c.n_blocks = j.at("n_blocks").get<std::size_t>();
  c.kernel_size = j.at("kernel_size").get<std::size_t>();
  c.channel_width = j.at("channel_width").get<std::size_t>();
  c.cond_dim = j.at("cond_dim").get<std::size_t>();
  c.film_hidden = j.at("film_hidden").get<std::size_t>();
  c.n_params = j.at("n_params").get<std::size_t>();
  c.validate();
  return c;
}

std::size_t dilation(std::size_t block_1based) {
  if (block_1based == 0)
    throw std::invalid_argument("dilation: blocks are numbered from 1");
  return std::size_t{1} << ((block_1based - 1) % 10);
}

std::size_t receptive_field(const TcnConfig &cfg) {
  std::size_t s = 0;
  for (std::size_t l = 1; l <= cfg.n_blocks; ++l)
    s += dilation(l);
  return 1 + (cfg.kernel_size - 1) * s;
}

double receptive_field_ms(const TcnConfig &cfg, int sample_rate) {
  return 1000.0 * static_cast<double>(receptive_field(cfg)) / sample_rate;
}

namespace {

std::vector<double> uniform_init(Rng &rng, std::size_t n, double bound) {
  std::vector<double> v(n);
  for (double &x : v)
    x = uniform(rng, -bound, bound);
  return v;
}

Tensor linear(const Tensor &x, const Tensor &w, const Tensor &b) { return ag::matmul(x, w) + b; }

} // namespace

Tcn::Tcn(const TcnConfig &cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = make_stream(seed, "init");
  const std::size_t W = cfg_.channel_width, K = cfg_.kernel_size, C = cfg_.cond_dim;

  // conditioning MLP
  const std::size_t dims[4] = {cfg_.n_params, cfg_.film_hidden, cfg_.film_hidden, C};
  for (std::size_t l = 0; l < 3; ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
    const std::string p = "film.l" + std::to_string(l);
    params_.add(p + ".w", {dims[l], dims[l + 1]}, uniform_init(rng, dims[l] * dims[l + 1], bound));
    params_.add(p + ".b", {dims[l + 1]}, uniform_init(rng, dims[l + 1], bound));
    if (l < 2)
      params_.add("film.a" + std::to_string(l), {1}, {0.25});
  }

  for (std::size_t i = 0; i < cfg_.n_blocks; ++i) {
    const std::string p = "block" + std::to_string(i);
    const std::size_t in = i == 0 ? 1 : W;
    params_.add(p + ".conv.w", {W, in, K},
                uniform_init(rng, W * in * K, 1.0 / std::sqrt(static_cast<double>(in * K))));
    params_.add(p + ".film.w", {C, 2 * W},
                uniform_init(rng, C * 2 * W, 0.1 / std::sqrt(static_cast<double>(C))));
    std::vector<double> fb(2 * W, 0.0);
    std::fill_n(fb.begin(), W, 1.0);
    params_.add(p + ".film.b", {2 * W}, fb);
    params_.add(p + ".prelu", {W}, std::vector<double>(W, 0.25));
    params_.add(p + ".res_gain", {}, {1.0});
    if (in != W)
      params_.add(p + ".res_proj.w", {W, in, 1}, uniform_init(rng, W * in, 1.0));
    bn_.emplace_back(W);
  }
  params_.add("out.w", {1, W, 1}, uniform_init(rng, W, 1.0 / std::sqrt(static_cast<double>(W))));
  params_.add("out.b", {1}, {0.0});
}

Tensor Tcn::conditioning(const Tensor &proc) const {
  if (proc.rank() != 2 || proc.dim(1) != cfg_.n_params)
    throw std::invalid_argument("Tcn: conditioning input must be [batch, " +
                                std::to_string(cfg_.n_params) + "], got " +
                                ag::shape_string(proc.shape()));
  Tensor h = proc;
  for (std::size_t l = 0; l < 3; ++l) {
    const std::string p = "film.l" + std::to_string(l);
    h = linear(h, params_.get(p + ".w"), params_.get(p + ".b"));
    if (l < 2)
      h = ag::prelu(h, params_.get("film.a" + std::to_string(l)));
  }
  return h;
}

std::pair<Tensor, Tensor> Tcn::film_params(std::size_t i, const Tensor &c_global) const {
  const std::string p = "block" + std::to_string(i);
  const std::size_t W = cfg_.channel_width;
  Tensor gb = linear(c_global, params_.get(p + ".film.w"), params_.get(p + ".film.b"));
  return {ag::slice(gb, 1, 0, W), ag::slice(gb, 1, W, W)};
}

BlockOutput Tcn::block_forward(std::size_t i, const Tensor &x, const Tensor &c_global, Mode mode) {
  if (i >= cfg_.n_blocks)
    throw std::out_of_range("Tcn: block index out of range");
  const std::string p = "block" + std::to_string(i);
  const std::size_t in = i == 0 ? 1 : cfg_.channel_width;
  if (x.rank() != 3 || x.dim(1) != in)
    throw std::invalid_argument("Tcn: block " + std::to_string(i) + " expects " +
                                std::to_string(in) + " input channels, got " +
                                ag::shape_string(x.shape()));
  const std::size_t d = dilation(i + 1);
  const std::size_t growth = d * (cfg_.kernel_size - 1);
  if (x.dim(2) <= growth)
    throw std::invalid_argument("Tcn: block " + std::to_string(i) + " needs more than " +
                                std::to_string(growth) + " input samples, got " +
                                std::to_string(x.dim(2)));

  Tensor h = ag::conv1d(x, params_.get(p + ".conv.w"), Tensor(), d);
  h = ag::batchnorm(h, &bn_[i], mode);
  if (c_global.defined()) {
    auto [gamma, beta] = film_params(i, c_global);
    h = ag::film(h, gamma, beta);
  }
  h = ag::prelu(h, params_.get(p + ".prelu"));

  Tensor res = ag::center_crop(x, 2, h.dim(2));
  if (params_.contains(p + ".res_proj.w"))
    res = ag::conv1d(res, params_.get(p + ".res_proj.w"), Tensor());
  return {h + res * params_.get(p + ".res_gain"), h};
}

Tensor Tcn::forward_impl(const Tensor &x, const Tensor *c_global, Mode mode) {
  const std::size_t rf = receptive_field(cfg_);
  if (x.rank() != 3 || x.dim(1) != 1)
    throw std::invalid_argument("Tcn: input must be [batch, 1, time], got " +
                                ag::shape_string(x.shape()));
  if (x.dim(2) < rf)
    throw std::invalid_argument("Tcn: input of " + std::to_string(x.dim(2)) +
                                " samples is shorter than the receptive field (" +
                                std::to_string(rf) + ")");
  std::vector<Tensor> skips;
  Tensor h = x;
  for (std::size_t i = 0; i < cfg_.n_blocks; ++i) {
    auto o = block_forward(i, h, c_global ? *c_global : Tensor(), mode);
    skips.push_back(o.skip);
    h = o.out;
  }
  const std::size_t len = h.dim(2);
  Tensor acc;
  for (auto &s : skips) {
    Tensor c = ag::center_crop(s, 2, len);
    acc = acc.defined() ? acc + c : c;
  }
  h = h + acc * (1.0 / static_cast<double>(skips.size()));
  return ag::conv1d(h, params_.get("out.w"), params_.get("out.b"));
}

Tensor Tcn::forward(const Tensor &x, const Tensor &proc, Mode mode) {
  if (proc.rank() != 2 || proc.dim(0) != x.dim(0))
    throw std::invalid_argument("Tcn: one parameter vector per batch item required");
  Tensor c = conditioning(proc);
  return forward_impl(x, &c, mode);
}

Tensor Tcn::forward_unconditioned(const Tensor &x, Mode mode) {
  return forward_impl(x, nullptr, mode);
}

Checkpoint Tcn::to_checkpoint() const {
  Checkpoint ck;
  ck.meta["model"] = "tcn";
  ck.meta["config"] = cfg_.to_json();
  for (const auto &[name, t] : params_.items()) {
    auto v = t.values();
    ck.arrays.push_back({name, t.shape(), std::vector<double>(v.begin(), v.end())});
  }
  for (std::size_t i = 0; i < bn_.size(); ++i) {
    const std::string p = "block" + std::to_string(i) + ".bn.";
    ck.arrays.push_back({p + "mean", {bn_[i].mean.size()}, bn_[i].mean});
    ck.arrays.push_back({p + "var", {bn_[i].var.size()}, bn_[i].var});
  }
  return ck;
}

Tcn Tcn::from_checkpoint(const Checkpoint &ck) {
  if (!ck.meta.contains("model") || ck.meta["model"] != "tcn")
    throw std::runtime_error("checkpoint does not hold a TCN");
  Tcn net(TcnConfig::from_json(ck.meta.at("config")), 0);
  for (const auto &[name, t] : net.params_.items()) {
    const auto &a = ck.find(name);
    if (a.shape != t.shape())
      throw std::runtime_error("checkpoint array '" + name + "' has shape " +
                               ag::shape_string(a.shape) + ", expected " +
                               ag::shape_string(t.shape()));
    Tensor dst_t = t;
    auto dst = dst_t.mutable_values();
    std::copy(a.data.begin(), a.data.end(), dst.begin());
  }
  for (std::size_t i = 0; i < net.bn_.size(); ++i) {
    const std::string p = "block" + std::to_string(i) + ".bn.";
    net.bn_[i].mean = ck.find(p + "mean").data;
    net.bn_[i].var = ck.find(p + "var").data;
    if (net.bn_[i].mean.size() != net.cfg_.channel_width ||
        net.bn_[i].var.size() != net.cfg_.channel_width)
      throw std::runtime_error("checkpoint batchnorm statistics have the wrong size");
  }
  return net;
}

std::vector<double> processor_vector(const console::ChannelParams &p) {
  auto u = p.normalized();
  return {u.begin() + console::kProcessorBegin,
          u.begin() + console::kProcessorBegin + console::kProcessorCount};
}

AudioBuffer tcn_forward(const AudioBuffer &x, const console::ChannelParams &p, Tcn &net,
                        Mode mode) {
  if (x.channels() != 1)
    throw std::invalid_argument("tcn_forward: mono input required");
  auto xv = x.channel(0);
  Tensor in = Tensor::constant({1, 1, x.frames()}, {xv.begin(), xv.end()});
  Tensor proc = Tensor::constant({1, console::kProcessorCount}, processor_vector(p));
  Tensor y = net.forward(in, proc, mode);
  auto yv = y.values();
  return AudioBuffer::mono({yv.begin(), yv.end()}, x.sample_rate());
}

ChannelTensors ChannelTensors::constant(const console::ChannelParams &p) {
  ChannelTensors c;
  c.gain_db = Tensor::scalar(p.gain_db);
  c.polarity = p.polarity;
  c.fader_db = Tensor::scalar(p.fader_db);
  c.pan = Tensor::scalar(p.pan);
  c.proc = Tensor::constant({console::kProcessorCount}, processor_vector(p));
  return c;
}

Tensor diff_channel_forward(const Tensor &x, const ChannelTensors &p, ChannelMode mode, Tcn *net,
                            Mode run) {
  if (x.rank() != 1)
    throw std::invalid_argument("diff_channel_forward: input must be 1-D, got " +
                                ag::shape_string(x.shape()));
  Tensor g = ag::db_to_amp(p.gain_db) * p.polarity;
  Tensor v = x * g;
  if (mode == ChannelMode::full) {
    if (!net)
      throw std::invalid_argument("diff_channel_forward: full mode needs a TCN");
    const std::size_t n = net->config().n_params;
    if (!p.proc.defined() || p.proc.size() != n)
      throw std::invalid_argument("diff_channel_forward: full mode needs " + std::to_string(n) +
                                  " processor values");
    Tensor y = net->forward(ag::reshape(v, {1, 1, x.size()}), ag::reshape(p.proc, {1, n}), run);
    v = ag::reshape(y, {y.size()});
  }
  v = v * ag::db_to_amp(p.fader_db);
  Tensor theta = p.pan * console::kHalfPi;
  Tensor left = v * ag::cos(theta);
  Tensor right = v * ag::sin(theta);
  const std::size_t len = v.size();
  return ag::concat({ag::reshape(left, {1, len}), ag::reshape(right, {1, len})}, 0);
}

} // namespace dmc::tcn
