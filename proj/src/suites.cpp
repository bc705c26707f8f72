#include "dmc/suites.hpp"

#include <functional>
#include <stdexcept>

#include "dmc/autograd.hpp"
#include "dmc/console.hpp"
#include "dmc/controller.hpp"
#include "dmc/gradcheck.hpp"
#include "dmc/rng.hpp"
#include "dmc/stereo_loss.hpp"
#include "dmc/synth.hpp"
#include "dmc/tcn.hpp"

namespace dmc {

using namespace ag;

namespace {

std::vector<double> draw(std::size_t n, std::uint64_t seed, double lo, double hi) {
  Rng rng = make_stream(seed, "gradcheck-input");
  std::vector<double> v(n);
  for (auto &x : v)
    x = uniform(rng, lo, hi);
  return v;
}

using Op = std::function<Tensor(std::vector<Tensor> &)>;

struct In {
  Shape shape;
  double lo = -1.0, hi = 1.0;
};

SuiteCheck check_op(const std::string &name, const Op &op, const std::vector<In> &ins,
                    std::uint64_t seed, double tol) {
  std::vector<Tensor> in;
  for (std::size_t i = 0; i < ins.size(); ++i)
    in.push_back(Tensor::parameter(ins[i].shape, draw(shape_size(ins[i].shape), seed * 64 + i,
                                                      ins[i].lo, ins[i].hi)));
  std::vector<Tensor> probe = in;
  const Tensor out = op(probe);
  // sum(op * w) with a fixed random w so every output element counts
  const Tensor w = Tensor::constant(out.shape(), draw(out.size(), seed * 64 + 63, -1.0, 1.0));
  std::vector<std::pair<std::string, Tensor>> named;
  for (std::size_t i = 0; i < in.size(); ++i)
    named.emplace_back("in" + std::to_string(i), in[i]);
  GradCheckOptions opt;
  opt.seed = seed;
  auto r = grad_check([&] { return sum(mul(op(in), w)); }, named, opt);
  return {"grad_engine", name, seed, r.max_rel_error, tol, r.checked, r.kinks.size()};
}

void engine_suite(std::uint64_t s, std::vector<SuiteCheck> &out) {
  auto add = [&](const std::string &n, const Op &op, std::vector<In> ins) {
    out.push_back(check_op(n, op, ins, s, 1e-6));
  };
  add("add", [](auto &v) { return ag::add(v[0], v[1]); }, {{{3, 4}}, {{4}}});
  add("sub", [](auto &v) { return ag::sub(v[0], v[1]); }, {{{4}}, {{3, 4}}});
  add("mul", [](auto &v) { return ag::mul(v[0], v[1]); }, {{{2, 3, 4}}, {{3, 4}}});
  add("mul_scalar", [](auto &v) { return ag::mul_scalar(v[0], -2.5); }, {{{6}}});
  add("add_scalar", [](auto &v) { return ag::add_scalar(v[0], 0.3); }, {{{6}}});
  add("abs", [](auto &v) { return ag::abs(v[0]); }, {{{8}, 0.1, 1.0}});
  add("log", [](auto &v) { return ag::log(v[0]); }, {{{8}, 0.2, 3.0}});
  add("sqrt", [](auto &v) { return ag::sqrt(v[0]); }, {{{8}, 0.2, 3.0}});
  add("exp", [](auto &v) { return ag::exp(v[0]); }, {{{8}}});
  add("sin", [](auto &v) { return ag::sin(v[0]); }, {{{8}}});
  add("cos", [](auto &v) { return ag::cos(v[0]); }, {{{8}}});
  add("power", [](auto &v) { return ag::power(v[0], 2.7); }, {{{8}, 0.2, 2.0}});
  add("sigmoid", [](auto &v) { return ag::sigmoid(v[0]); }, {{{8}, -4.0, 4.0}});
  add("tanh", [](auto &v) { return ag::tanh(v[0]); }, {{{8}, -2.0, 2.0}});
  add("db_to_amp", [](auto &v) { return ag::db_to_amp(v[0]); }, {{{8}, -24.0, 24.0}});
  add("prelu", [](auto &v) { return ag::prelu(v[0], v[1]); }, {{{2, 3, 4}}, {{3}, 0.0, 0.5}});
  add("film", [](auto &v) { return ag::film(v[0], v[1], v[2]); }, {{{2, 3, 4}}, {{2, 3}}, {{2, 3}}});
  add("sum", [](auto &v) { return ag::sum(v[0]); }, {{{3, 5}}});
  add("mean", [](auto &v) { return ag::mean(v[0]); }, {{{3, 5}}});
  add("mean_axis", [](auto &v) { return ag::mean_axis(v[0], 1); }, {{{2, 3, 4}}});
  add("set_sum", [](auto &v) { return ag::set_sum(v[0]); }, {{{4, 3}}});
  add("set_mean", [](auto &v) { return ag::set_mean(v[0]); }, {{{4, 3}}});
  add("reshape", [](auto &v) { return ag::reshape(v[0], {4, 3}); }, {{{2, 6}}});
  add("concat", [](auto &v) { return ag::concat(v, 1); }, {{{2, 3, 2}}, {{2, 1, 2}}});
  add("slice", [](auto &v) { return ag::slice(v[0], 1, 1, 3); }, {{{2, 5, 2}}});
  add("center_crop", [](auto &v) { return ag::center_crop(v[0], 2, 5); }, {{{2, 2, 9}}});
  add("matmul", [](auto &v) { return ag::matmul(v[0], v[1]); }, {{{3, 4}}, {{4, 5}}});
  add("conv1d", [](auto &v) { return ag::conv1d(v[0], v[1], v[2], 2); },
      {{{2, 3, 16}}, {{2, 3, 3}}, {{2}}});
  add("conv1d_strided", [](auto &v) { return ag::conv1d(v[0], v[1], v[2], 1, 2); },
      {{{1, 2, 17}}, {{3, 2, 3}}, {{3}}});
  add("frame", [](auto &v) { return ag::frame(v[0], 8, 3); }, {{{20}}});
  add("batchnorm", [](auto &v) { return ag::batchnorm(v[0], nullptr, Mode::train); }, {{{3, 2, 5}}});
  add("rfft_mag", [](auto &v) { return ag::rfft_mag(v[0]); }, {{{3, 16}}});
  add("rfft_mag_odd", [](auto &v) { return ag::rfft_mag(v[0]); }, {{{2, 15}}});
}

void channel_suite(std::uint64_t s, std::vector<SuiteCheck> &out) {
  const auto src = draw(4096, 1000 + s, -1.0, 1.0);
  const Tensor x = Tensor::constant({src.size()}, src);
  const auto hidden = console::random_params(s, console::RandomMode::basic);
  const auto target = console::channel_process(AudioBuffer::mono(src, 44100), hidden);
  const auto init = draw(2, 2000 + s, 0.0, 1.0);
  auto p = tcn::ChannelTensors::constant(console::ChannelParams::neutral());
  p.gain_db = Tensor::scalar(-12.0 + 24.0 * init[0], true);
  p.pan = Tensor::scalar(0.1 + 0.8 * init[1], true);
  GradCheckOptions opt;
  opt.seed = s;
  auto r = grad_check(
      [&] { return loss::stereo_loss(tcn::diff_channel_forward(x, p, tcn::ChannelMode::basic), target); },
      {{"gain_db", p.gain_db}, {"pan", p.pan}}, opt);
  out.push_back({"channel", "basic channel -> stereo loss", s, r.max_rel_error, 1e-4, r.checked,
                 r.kinks.size()});
}

tcn::TcnConfig tiny_tcn() {
  tcn::TcnConfig c;
  c.n_blocks = 2;
  c.channel_width = 4;
  c.film_hidden = 16;
  c.cond_dim = 8;
  return c;
}

void tcn_suite(std::uint64_t s, std::vector<SuiteCheck> &out) {
  const auto cfg = tiny_tcn();
  tcn::Tcn net(cfg, s);
  const Tensor x = Tensor::constant({2, 1, 256}, draw(512, 3000 + s, -1.0, 1.0));
  const Tensor p = Tensor::constant({2, cfg.n_params}, draw(2 * cfg.n_params, 4000 + s, 0.0, 1.0));
  const std::size_t L = 256 - tcn::receptive_field(cfg) + 1;
  const Tensor y = Tensor::constant({2, 1, L}, draw(2 * L, 5000 + s, -0.2, 0.2));
  GradCheckOptions opt;
  opt.h = 1e-4;
  opt.max_coords = 40;
  opt.seed = s;
  auto r = grad_check([&] { return mean(abs(net.forward(x, p, Mode::train) - y)); },
                      net.params().items(), opt);
  out.push_back({"tcn", "tiny TCN -> L1", s, r.max_rel_error, 1e-4, r.checked, r.kinks.size()});
}

void controller_suite(std::uint64_t s, std::vector<SuiteCheck> &out) {
  ctrl::ControllerConfig cfg;
  cfg.encoder.n_layers = 2;
  cfg.encoder.conv_width = 6;
  cfg.encoder.embedding_dim = 8;
  cfg.encoder.min_duration_s = 0.0;
  cfg.hidden = 8;
  ctrl::Controller c(cfg, s);
  ctrl::MixSession session;
  session.tracks = synth::make_song_stems(2, 4096.0 / 44100.0, 20 + s);
  std::vector<console::ChannelParams> hidden;
  for (std::size_t i = 0; i < 2; ++i)
    hidden.push_back(console::random_params(s * 7 + i, console::RandomMode::basic));
  const AudioBuffer target = console::console_mix(session.tracks, hidden);
  const Tensor feats = ctrl::track_features(session.tracks, cfg.encoder);
  GradCheckOptions opt;
  opt.h = 1e-4;
  opt.max_coords = 12;
  opt.seed = s;
  auto r = grad_check(
      [&] {
        Rng drop(s);
        return loss::stereo_loss(
            c.forward(session, Mode::train, &drop, nullptr, Mode::infer, &feats).mix, target);
      },
      c.params().items(), opt);
  out.push_back({"controller", "controller -> basic mix -> stereo loss", s, r.max_rel_error, 1e-4,
                 r.checked, r.kinks.size()});
}

} // namespace

std::vector<std::string> gradcheck_suite_names() { return {"grad_engine", "channel", "tcn", "controller"}; }

std::vector<SuiteCheck> run_gradcheck_suites(const std::vector<std::string> &suites,
                                             const std::vector<std::uint64_t> &seeds) {
  const auto names = suites.empty() ? gradcheck_suite_names() : suites;
  std::vector<SuiteCheck> out;
  for (const auto &n : names) {
    void (*fn)(std::uint64_t, std::vector<SuiteCheck> &) = nullptr;
    if (n == "grad_engine")
      fn = engine_suite;
    else if (n == "channel")
      fn = channel_suite;
    else if (n == "tcn")
      fn = tcn_suite;
    else if (n == "controller")
      fn = controller_suite;
    else
      throw std::invalid_argument("unknown gradcheck suite '" + n + "'");
    for (auto s : seeds)
      fn(s, out);
  }
  return out;
}

} // namespace dmc
