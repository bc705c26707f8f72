#include "catch_amalgamated.hpp"

#include <cmath>
#include <filesystem>

#include "dmc/console.hpp"
#include "dmc/gradcheck.hpp"
#include "dmc/stereo_loss.hpp"
#include "dmc/tcn.hpp"
#include "oracles.hpp"

using namespace dmc;
using namespace dmc::ag;
using namespace dmc::tcn;

namespace {

TcnConfig tiny(std::size_t blocks = 2, std::size_t width = 4) {
  TcnConfig c;
  c.n_blocks = blocks;
  c.channel_width = width;
  c.film_hidden = 16;
  c.cond_dim = 8;
  return c;
}

void set_values(Tcn &net, const std::string &name, double v) {
  Tensor t = net.params().get(name);
  for (double &x : t.mutable_values())
    x = v;
}

Tensor random_input(Shape s, std::uint64_t seed, double amp = 0.5) {
  auto n = shape_size(s);
  return Tensor::constant(std::move(s), oracle::random_vector(n, seed, -amp, amp));
}

Tensor random_proc(std::size_t batch, std::uint64_t seed) {
  return Tensor::constant({batch, console::kProcessorCount},
                          oracle::random_vector(batch * console::kProcessorCount, seed, 0.0, 1.0));
}

// per-channel normalization with biased variance, eps 1e-5
std::vector<double> bn_oracle(std::span<const double> x, std::size_t C, std::size_t T) {
  std::vector<double> y(x.size());
  for (std::size_t c = 0; c < C; ++c) {
    long double m = 0;
    for (std::size_t t = 0; t < T; ++t)
      m += x[c * T + t];
    m /= T;
    long double v = 0;
    for (std::size_t t = 0; t < T; ++t)
      v += (x[c * T + t] - m) * (x[c * T + t] - m);
    v /= T;
    for (std::size_t t = 0; t < T; ++t)
      y[c * T + t] = static_cast<double>((x[c * T + t] - m) / std::sqrt(v + 1e-5L));
  }
  return y;
}

} // namespace

TEST_CASE("receptive field arithmetic", "[tcn]") {
  CHECK(receptive_field(TcnConfig::preset("tcn10")) == 14323);
  CHECK(receptive_field(TcnConfig::preset("tcn20")) == 28645);
  CHECK(receptive_field(TcnConfig::preset("tcn30")) == 42967);
  CHECK(receptive_field(tiny(1)) == 15);

  CHECK(receptive_field_ms(TcnConfig::preset("tcn10")) == Catch::Approx(324.8).margin(0.05));
  CHECK(receptive_field_ms(TcnConfig::preset("tcn20")) == Catch::Approx(649.5).margin(0.05));
  CHECK(receptive_field_ms(TcnConfig::preset("tcn30")) == Catch::Approx(974.3).margin(0.05));
  const double nominal[] = {320.0, 650.0, 970.0};
  const char *names[] = {"tcn10", "tcn20", "tcn30"};
  for (int i = 0; i < 3; ++i)
    CHECK(std::abs(receptive_field_ms(TcnConfig::preset(names[i])) - nominal[i]) / nominal[i] < 0.02);

  for (std::size_t l = 1; l <= 30; ++l)
    CHECK(dilation(l) == (std::size_t{1} << ((l - 1) % 10)));
  CHECK(dilation(10) == 512);
  CHECK(dilation(11) == 1);
  CHECK_THROWS(dilation(0));
  CHECK_THROWS(TcnConfig::preset("tcn15"));
}

TEST_CASE("TCN block examples", "[tcn]") {
  const std::size_t W = 3, T = 200;
  auto cfg = tiny(2, W);
  Tcn net(cfg, 1);
  // block 1 has dilation 2 and W input channels
  const Tensor x = random_input({1, W, T}, 11);
  const Tensor c = Tensor::constant({1, cfg.cond_dim}, oracle::random_vector(cfg.cond_dim, 12));
  set_values(net, "block1.film.w", 0.0); // gamma = 1, beta = 0 from the bias

  SECTION("delta kernel and zero residual gain isolate the normalization path") {
    Tensor w = net.params().get("block1.conv.w");
    auto wv = w.mutable_values();
    std::fill(wv.begin(), wv.end(), 0.0);
    for (std::size_t o = 0; o < W; ++o)
      wv[(o * W + o) * cfg.kernel_size + 7] = 1.0;
    set_values(net, "block1.res_gain", 0.0);
    auto out = net.block_forward(1, x, c, Mode::train);
    const std::size_t L = T - 2 * 14;
    REQUIRE(out.out.shape() == Shape{1, W, L});
    const Tensor crop = center_crop(x, 2, L);
    auto expect = bn_oracle(crop.values(), W, L);
    for (std::size_t i = 0; i < expect.size(); ++i) {
      const double e = expect[i] > 0 ? expect[i] : 0.25 * expect[i];
      CHECK(out.out.values()[i] == Catch::Approx(e).margin(1e-12));
    }
  }

  SECTION("zero conv weights leave the pure residual") {
    set_values(net, "block1.conv.w", 0.0);
    auto out = net.block_forward(1, x, c, Mode::train);
    const Tensor crop = center_crop(x, 2, out.out.dim(2));
    for (std::size_t i = 0; i < crop.size(); ++i)
      CHECK(out.out.values()[i] == crop.values()[i]);
    for (double v : out.skip.values())
      CHECK(v == 0.0);
  }

  SECTION("output length follows the no-padding rule") {
    auto big = tiny(10, 2);
    Tcn deep(big, 2);
    const Tensor xin = random_input({1, 2, 20000}, 13);
    const Tensor cg = Tensor::constant({1, big.cond_dim}, oracle::random_vector(big.cond_dim, 14));
    auto out = deep.block_forward(9, xin, cg, Mode::infer);
    CHECK(out.out.dim(2) == 12832);
    CHECK_THROWS_AS(deep.block_forward(9, random_input({1, 2, 7168}, 1), cg, Mode::infer),
                    std::invalid_argument);
    CHECK_THROWS_AS(deep.block_forward(9, random_input({1, 3, 9000}, 1), cg, Mode::infer),
                    std::invalid_argument);
  }
}

TEST_CASE("TCN forward", "[tcn]") {
  SECTION("TCN-10 output length") {
    Tcn net(TcnConfig::preset("tcn10", 4), 3);
    auto y = net.forward(random_input({1, 1, 66150}, 1), random_proc(1, 2), Mode::infer);
    CHECK(y.shape() == Shape{1, 1, 51828});
    CHECK_THROWS_AS(net.forward(random_input({1, 1, 14000}, 1), random_proc(1, 2), Mode::infer),
                    std::invalid_argument);
  }

  SECTION("zero input with zero biases gives zero output") {
    auto cfg = tiny(3, 4);
    Tcn net(cfg, 4);
    // beta is a bias too: its columns of the FiLM maps go to zero
    for (std::size_t i = 0; i < cfg.n_blocks; ++i) {
      const std::string p = "block" + std::to_string(i);
      Tensor w = net.params().get(p + ".film.w");
      auto wv = w.mutable_values();
      for (std::size_t r = 0; r < cfg.cond_dim; ++r)
        for (std::size_t j = cfg.channel_width; j < 2 * cfg.channel_width; ++j)
          wv[r * 2 * cfg.channel_width + j] = 0.0;
    }
    set_values(net, "out.b", 0.0);
    auto y = net.forward(Tensor::zeros({2, 1, 300}), random_proc(2, 5), Mode::train);
    for (double v : y.values())
      CHECK(v == 0.0);
  }

  SECTION("inference is deterministic") {
    Tcn net(tiny(3, 4), 6);
    const Tensor x = random_input({1, 1, 500}, 7);
    const Tensor p = random_proc(1, 8);
    auto a = net.forward(x, p, Mode::infer);
    auto b = net.forward(x, p, Mode::infer);
    CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
  }

  SECTION("identical skip taps average to the tap itself") {
    // zero convs and residual gains: every block emits PReLU(beta) with the
    // same beta, so the last activation and the skip mean both equal it
    auto cfg = tiny(4, 3);
    Tcn net(cfg, 9);
    const double beta[] = {0.3, 0.7, 1.1};
    for (std::size_t i = 0; i < cfg.n_blocks; ++i) {
      const std::string p = "block" + std::to_string(i);
      set_values(net, p + ".conv.w", 0.0);
      set_values(net, p + ".film.w", 0.0);
      set_values(net, p + ".res_gain", 0.0);
      Tensor b = net.params().get(p + ".film.b");
      for (std::size_t c = 0; c < 3; ++c)
        b.mutable_values()[3 + c] = beta[c];
    }
    auto y = net.forward(random_input({1, 1, 400}, 10), random_proc(1, 11), Mode::train);
    auto w = net.params().get("out.w").values();
    const double expect = 2.0 * (w[0] * beta[0] + w[1] * beta[1] + w[2] * beta[2]) +
                          net.params().get("out.b").values()[0];
    for (double v : y.values())
      CHECK(v == Catch::Approx(expect).epsilon(1e-14));
  }

  SECTION("unit FiLM equals the unconditioned network") {
    auto cfg = tiny(3, 4);
    Tcn net(cfg, 12);
    for (std::size_t i = 0; i < cfg.n_blocks; ++i)
      set_values(net, "block" + std::to_string(i) + ".film.w", 0.0);
    const Tensor x = random_input({1, 1, 400}, 13);
    auto a = net.forward(x, random_proc(1, 14), Mode::train);
    auto b = net.forward_unconditioned(x, Mode::train);
    CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
  }

  SECTION("conditioning has the configured width") {
    Tcn net(TcnConfig::preset("tcn10", 8), 1);
    CHECK(net.conditioning(random_proc(3, 1)).shape() == Shape{3, 128});
    auto [g, b] = net.film_params(4, net.conditioning(random_proc(3, 1)));
    CHECK(g.shape() == Shape{3, 8});
    CHECK(b.shape() == Shape{3, 8});
    CHECK(net.params().get("block0.res_gain").values()[0] == 1.0);
  }

  SECTION("mono wrapper") {
    Tcn net(tiny(2, 4), 15);
    auto x = AudioBuffer::mono(oracle::random_vector(300, 16), 44100);
    auto y = tcn_forward(x, console::ChannelParams::neutral(), net);
    CHECK(y.frames() == 300 - receptive_field(net.config()) + 1);
    CHECK_THROWS(tcn_forward(AudioBuffer(2, 300, 44100), console::ChannelParams::neutral(), net));
  }
}

TEST_CASE("TCN checkpoint round trip", "[tcn]") {
  Tcn net(tiny(3, 4), 21);
  const Tensor x = random_input({2, 1, 300}, 22);
  const Tensor p = random_proc(2, 23);
  net.forward(x, p, Mode::train); // moves the running statistics
  auto path = std::filesystem::temp_directory_path() / "dmc_test_tcn.ckpt";
  net.save(path);
  Tcn back = Tcn::load(path);
  std::filesystem::remove(path);
  CHECK(back.config() == net.config());
  auto a = net.forward(x, p, Mode::infer);
  auto b = back.forward(x, p, Mode::infer);
  CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
}

TEST_CASE("TCN gradients", "[tcn][gradcheck]") {
  // 2 blocks, width 4, 256 samples, every weight class
  auto cfg = tiny(2, 4);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Tcn net(cfg, seed);
    const Tensor x = random_input({2, 1, 256}, 100 + seed);
    const Tensor p = random_proc(2, 200 + seed);
    const std::size_t out_len = 256 - receptive_field(cfg) + 1;
    const Tensor y = random_input({2, 1, out_len}, 300 + seed, 0.2);
    GradCheckOptions opt;
    opt.h = 1e-4;
    opt.max_coords = 40;
    opt.seed = seed;
    auto res = grad_check([&] { return mean(abs(net.forward(x, p, Mode::train) - y)); },
                          net.params().items(), opt);
    INFO("seed " << seed << " worst " << res.worst.tensor << "[" << res.worst.index << "] "
                 << res.worst.analytic << " vs " << res.worst.numeric);
    CHECK(res.max_rel_error < 1e-4);
    CHECK(res.checked > 300);
  }
}

TEST_CASE("differentiable channel", "[tcn]") {
  const auto xs = oracle::random_vector(2048, 31);
  const Tensor x = Tensor::constant({xs.size()}, xs);

  SECTION("neutral basic channel is the center pan") {
    auto y = diff_channel_forward(x, ChannelTensors::constant(console::ChannelParams::neutral()),
                                  ChannelMode::basic);
    REQUIRE(y.shape() == Shape{2, xs.size()});
    for (std::size_t i = 0; i < xs.size(); ++i) {
      CHECK(y.values()[i] == Catch::Approx(xs[i] / std::sqrt(2.0)).epsilon(1e-15).margin(1e-300));
      CHECK(y.values()[xs.size() + i] ==
            Catch::Approx(xs[i] / std::sqrt(2.0)).epsilon(1e-15).margin(1e-300));
    }
  }

  SECTION("basic mode matches the reference strip bitwise") {
    auto in = AudioBuffer::mono(xs, 44100);
    for (std::uint64_t s = 0; s < 10; ++s) {
      auto p = console::random_params(s, console::RandomMode::basic);
      p.fader_db = oracle::random_vector(1, s + 50, -20.0, 6.0)[0];
      p.polarity = s % 2 ? -1.0 : 1.0;
      auto ref = console::channel_process(in, p);
      auto y = diff_channel_forward(x, ChannelTensors::constant(p), ChannelMode::basic);
      CHECK(std::equal(ref.data().begin(), ref.data().end(), y.values().begin()));
    }
  }

  SECTION("basic gradient of the stereo loss") {
    const auto src = oracle::random_vector(4096, 42);
    const Tensor xin = Tensor::constant({4096}, src);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      // target: the same source through a hidden gain and pan
      auto hidden = console::random_params(seed, console::RandomMode::basic);
      auto target = console::channel_process(AudioBuffer::mono(src, 44100), hidden);
      auto init = oracle::random_vector(2, 60 + seed, 0.0, 1.0);
      ChannelTensors p = ChannelTensors::constant(console::ChannelParams::neutral());
      p.gain_db = Tensor::scalar(-12.0 + 24.0 * init[0], true);
      p.pan = Tensor::scalar(0.1 + 0.8 * init[1], true);
      auto res = grad_check(
          [&] { return loss::stereo_loss(diff_channel_forward(xin, p, ChannelMode::basic), target); },
          {{"gain_db", p.gain_db}, {"pan", p.pan}}, {.h = 1e-5});
      INFO("seed " << seed << " " << res.worst.tensor << " " << res.worst.analytic << " vs "
                   << res.worst.numeric);
      CHECK(res.max_rel_error < 1e-4);
      CHECK(res.checked == 2);
    }
  }

  SECTION("full mode crops by the receptive field and differentiates end to end") {
    auto cfg = tiny(2, 4);
    Tcn net(cfg, 70);
    const Tensor xin = Tensor::constant({256}, oracle::random_vector(256, 71));
    ChannelTensors p = ChannelTensors::constant(console::random_params(3, console::RandomMode::full));
    p.polarity = 1.0;
    p.gain_db = Tensor::scalar(-3.0, true);
    p.fader_db = Tensor::scalar(-1.0, true);
    p.pan = Tensor::scalar(0.3, true);
    p.proc = Tensor::parameter({console::kProcessorCount},
                               oracle::random_vector(console::kProcessorCount, 72, 0.0, 1.0));
    auto y = diff_channel_forward(xin, p, ChannelMode::full, &net, Mode::train);
    CHECK(y.shape() == Shape{2, 256 - receptive_field(cfg) + 1});
    const Tensor w = Tensor::constant(y.shape(), oracle::random_vector(y.size(), 73));
    auto inputs = net.params().items();
    inputs.insert(inputs.end(), {{"gain_db", p.gain_db}, {"fader_db", p.fader_db},
                                 {"pan", p.pan}, {"proc", p.proc}});
    GradCheckOptions opt;
    opt.max_coords = 20;
    opt.h = 1e-4;
    auto res = grad_check(
        [&] { return sum(diff_channel_forward(xin, p, ChannelMode::full, &net, Mode::train) * w); },
        inputs, opt);
    INFO(res.worst.tensor << "[" << res.worst.index << "] " << res.worst.analytic << " vs "
                          << res.worst.numeric);
    CHECK(res.max_rel_error < 1e-4);
    CHECK_THROWS_AS(diff_channel_forward(xin, p, ChannelMode::full), std::invalid_argument);
  }
}
