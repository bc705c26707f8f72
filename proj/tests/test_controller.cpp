#include "catch_amalgamated.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "dmc/console.hpp"
#include "dmc/controller.hpp"
#include "dmc/gradcheck.hpp"
#include "dmc/stereo_loss.hpp"
#include "dmc/synth.hpp"
#include "oracles.hpp"

using namespace dmc;
using namespace dmc::ag;
using namespace dmc::ctrl;

namespace {

ControllerConfig small_config(Task task = Task::basic) {
  ControllerConfig c;
  c.encoder.conv_width = 8;
  c.encoder.embedding_dim = 16;
  c.hidden = 16;
  c.task = task;
  return c;
}

AudioBuffer noise_track(std::size_t n, std::uint64_t seed, double amp = 0.3) {
  return AudioBuffer::mono(oracle::random_vector(n, seed, -amp, amp), 44100);
}

bool same(const Tensor &a, const Tensor &b) {
  return a.shape() == b.shape() &&
         std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

} // namespace

TEST_CASE("log band features", "[controller]") {
  EncoderConfig cfg;
  auto e = band_edges(1024, 44100, 64);
  REQUIRE(e.size() == 65);
  CHECK(e.front() >= 1);
  CHECK(e.back() == 513);
  for (std::size_t i = 1; i < e.size(); ++i)
    CHECK(e[i] > e[i - 1]);

  SECTION("silence sits at the floor") {
    std::vector<double> x(44100, 0.0);
    auto f = log_band_features(x, 44100, cfg);
    CHECK(f.size() == 64 * cfg.frames(44100));
    for (double v : f)
      CHECK(v == std::log(1e-8));
  }
  SECTION("a sine lights up its own band") {
    const std::size_t bin = 100;
    const double freq = bin * 44100.0 / 1024.0;
    std::vector<double> x(8192);
    for (std::size_t n = 0; n < x.size(); ++n)
      x[n] = 0.5 * std::sin(2.0 * std::numbers::pi * freq * n / 44100.0);
    auto f = log_band_features(x, 44100, cfg);
    const std::size_t F = cfg.frames(x.size());
    const auto band = static_cast<std::size_t>(std::upper_bound(e.begin(), e.end(), bin) - e.begin() - 1);
    for (std::size_t fr = 0; fr < F; ++fr) {
      std::size_t best = 0;
      for (std::size_t b = 1; b < 64; ++b)
        if (f[b * F + fr] > f[best * F + fr])
          best = b;
      CHECK(best == band);
    }
  }
}

TEST_CASE("encoder", "[controller]") {
  Controller c(small_config(), 1);
  auto a = noise_track(44100, 1);
  SECTION("identical tracks give identical embeddings") { CHECK(same(c.encode(a), c.encode(a))); }
  SECTION("silence has one fixed embedding") {
    auto s1 = c.encode(AudioBuffer::mono(std::vector<double>(44100, 0.0), 44100));
    auto s2 = c.encode(AudioBuffer::mono(std::vector<double>(44100, 0.0), 44100));
    auto s3 = c.encode(AudioBuffer::mono(std::vector<double>(50000, 0.0), 44100));
    CHECK(same(s1, s2));
    for (std::size_t i = 0; i < 16; ++i)
      CHECK(s3.values()[i] == Catch::Approx(s1.values()[i]).epsilon(1e-12));
  }
  SECTION("embedding length does not depend on duration") {
    CHECK(c.encode(a).shape() == Shape{16});
    CHECK(c.encode(noise_track(441000, 2)).shape() == Shape{16});
    Controller big(ControllerConfig{}, 2);
    CHECK(big.encode(a).shape() == Shape{128});
  }
  SECTION("too short") {
    CHECK_THROWS_AS(c.encode(noise_track(40000, 3)), std::invalid_argument);
    CHECK_THROWS_AS(c.encode(AudioBuffer(2, 44100, 44100)), std::invalid_argument);
  }
  SECTION("batched encoding matches one at a time") {
    auto b = noise_track(44100, 4);
    auto both = c.encode_features(track_features({a, b}, c.config().encoder));
    const Tensor ta = c.encode(a), tb = c.encode(b);
    auto ea = ta.values();
    auto eb = tb.values();
    CHECK(std::equal(ea.begin(), ea.end(), both.values().begin()));
    CHECK(std::equal(eb.begin(), eb.end(), both.values().begin() + 16));
  }
}

TEST_CASE("context embedding", "[controller]") {
  auto a = oracle::random_vector(8, 1), b = oracle::random_vector(8, 2), d = oracle::random_vector(8, 3);
  auto one = context_embedding(Tensor::constant({1, 8}, a));
  CHECK(std::equal(a.begin(), a.end(), one.values().begin()));
  std::vector<double> ab = a;
  ab.insert(ab.end(), b.begin(), b.end());
  auto two = context_embedding(Tensor::constant({2, 8}, ab));
  for (std::size_t i = 0; i < 8; ++i)
    CHECK(two.values()[i] == Catch::Approx((a[i] + b[i]) / 2).epsilon(1e-15));
  std::vector<double> abd = ab, dba = d;
  abd.insert(abd.end(), d.begin(), d.end());
  dba.insert(dba.end(), b.begin(), b.end());
  dba.insert(dba.end(), a.begin(), a.end());
  CHECK(same(context_embedding(Tensor::constant({3, 8}, abd)),
             context_embedding(Tensor::constant({3, 8}, dba))));
  CHECK_THROWS(context_embedding(Tensor::constant({0, 8}, {})));
}

TEST_CASE("post-processor", "[controller]") {
  for (Task task : {Task::basic, Task::full}) {
    Controller c(small_config(task), 5);
    const Tensor emb = Tensor::constant({3, 16}, oracle::random_vector(48, 6, -3.0, 3.0));
    const Tensor ctx = context_embedding(emb);
    auto y = c.post_process(emb, ctx, Mode::infer, nullptr);
    CHECK(y.shape() == Shape{3, task == Task::basic ? 2u : 26u});
    for (double v : y.values()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
    CHECK(same(y, c.post_process(emb, ctx, Mode::infer, nullptr)));
    Rng r1(1), r2(2);
    auto t1 = c.post_process(emb, ctx, Mode::train, &r1);
    auto t2 = c.post_process(emb, ctx, Mode::train, &r2);
    CHECK_FALSE(same(t1, t2));
    CHECK_THROWS_AS(c.post_process(emb, Tensor::constant({8}, std::vector<double>(8, 0.0)),
                                   Mode::infer, nullptr),
                    std::invalid_argument);
  }
}

TEST_CASE("permutation contract", "[controller]") {
  const std::size_t len = 44100;
  std::vector<AudioBuffer> pool;
  for (std::size_t i = 0; i < 8; ++i)
    pool.push_back(synth::make_stem(synth::stem_kind_for_index(i), 1.0, 100 + i));
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Controller c(small_config(), 40 + seed);
    for (std::size_t n = 2; n <= 8; ++n) {
      MixSession s;
      s.tracks.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n));
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      Rng rng(seed * 10 + n);
      std::shuffle(perm.begin(), perm.end(), rng);
      MixSession t;
      for (std::size_t i : perm)
        t.tracks.push_back(s.tracks[i]);
      auto a = c.forward(s, Mode::infer);
      auto b = c.forward(t, Mode::infer);
      for (std::size_t k = 0; k < n; ++k)
        CHECK(b.params[k] == a.params[perm[k]]);
      double worst = 0.0;
      for (std::size_t i = 0; i < a.mix.size(); ++i)
        worst = std::max(worst, std::abs(a.mix.values()[i] - b.mix.values()[i]));
      CHECK(worst < 1e-9);
      CHECK(a.mix.shape() == Shape{2, len});
    }
  }
}

TEST_CASE("controller session behavior", "[controller]") {
  Controller c(small_config(), 7);
  auto a = synth::make_stem(synth::StemKind::bass, 1.0, 1);

  SECTION("identical tracks get identical params") {
    MixSession s;
    s.tracks = {a, synth::make_stem(synth::StemKind::kick, 1.0, 2), a};
    auto out = c.forward(s, Mode::infer);
    CHECK(out.params[0] == out.params[2]);
  }
  SECTION("a silent track mixes to silence") {
    MixSession s;
    s.tracks = {AudioBuffer::mono(std::vector<double>(44100, 0.0), 44100)};
    auto out = c.forward(s, Mode::infer);
    for (double v : out.mix.values())
      CHECK(v == 0.0);
  }
  SECTION("the same weights run 2 and 12 tracks") {
    MixSession s2, s12;
    s2.tracks = synth::make_song_stems(2, 1.0, 3);
    s12.tracks = synth::make_song_stems(12, 1.0, 4);
    CHECK(c.forward(s2, Mode::infer).params.size() == 2);
    CHECK(c.forward(s12, Mode::infer).params.size() == 12);
  }
  SECTION("basic mix equals the reference console with the emitted params") {
    MixSession s;
    s.tracks = synth::make_song_stems(4, 1.0, 5);
    auto out = c.forward(s, Mode::infer);
    for (const auto &p : out.params) {
      CHECK(p.polarity == 1.0);
      CHECK(p.fader_db == 0.0);
      CHECK(p.gain_db >= -24.0);
      CHECK(p.gain_db <= 24.0);
    }
    auto ref = console::console_mix(s.tracks, out.params);
    CHECK(std::equal(ref.data().begin(), ref.data().end(), out.mix.values().begin()));
  }
  SECTION("bad sessions") {
    MixSession empty;
    CHECK_THROWS(c.forward(empty, Mode::infer));
    MixSession rates;
    rates.tracks = {a, AudioBuffer::mono(std::vector<double>(44100, 0.0), 48000)};
    CHECK_THROWS_AS(c.forward(rates, Mode::infer), std::invalid_argument);
    MixSession lengths;
    lengths.tracks = {a, noise_track(44101, 1)};
    CHECK_THROWS_AS(c.forward(lengths, Mode::infer), std::invalid_argument);
    MixSession train;
    train.tracks = {a};
    CHECK_THROWS_AS(c.forward(train, Mode::train), std::invalid_argument);
  }
}

TEST_CASE("full task", "[controller]") {
  tcn::TcnConfig tc;
  tc.n_blocks = 2;
  tc.channel_width = 4;
  tc.film_hidden = 16;
  tc.cond_dim = 8;
  tcn::Tcn net(tc, 3);
  Controller c(small_config(Task::full), 8);
  MixSession s;
  s.tracks = synth::make_song_stems(3, 1.0, 9);
  auto out = c.forward(s, Mode::infer, nullptr, &net);
  const std::size_t L = 44100 - tcn::receptive_field(tc) + 1;
  CHECK(out.mix.shape() == Shape{2, L});
  CHECK(out.normalized.shape() == Shape{3, 26});
  for (const auto &p : out.params) {
    CHECK(p.polarity == 1.0);
    CHECK_NOTHROW(p.validate());
  }
  auto target = AudioBuffer::stereo(oracle::random_vector(44100, 1), oracle::random_vector(44100, 2), 44100);
  auto cropped = crop_target(target, L);
  CHECK(cropped.frames() == L);
  CHECK(cropped.at(0, 0) == target.at(0, (44100 - L) / 2));
  CHECK_THROWS(c.forward(s, Mode::infer));
}

TEST_CASE("controller checkpoint round trip", "[controller]") {
  Controller c(small_config(Task::full), 11);
  auto path = std::filesystem::temp_directory_path() / "dmc_test_ctrl.ckpt";
  c.save(path);
  Controller back = Controller::load(path);
  std::filesystem::remove(path);
  CHECK(back.config().to_json() == c.config().to_json());
  auto t = noise_track(44100, 12);
  CHECK(same(c.encode(t), back.encode(t)));
}

TEST_CASE("end-to-end controller gradients", "[controller][gradcheck]") {
  // embedding 8, 2 tracks, 4096 samples, basic task
  ControllerConfig cfg;
  cfg.encoder.n_layers = 2;
  cfg.encoder.conv_width = 6;
  cfg.encoder.embedding_dim = 8;
  cfg.encoder.min_duration_s = 0.0;
  cfg.hidden = 8;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Controller c(cfg, seed);
    MixSession s;
    s.tracks = synth::make_song_stems(2, 4096.0 / 44100.0, 20 + seed);
    REQUIRE(s.frames() == 4096);
    std::vector<console::ChannelParams> hidden;
    for (std::size_t i = 0; i < 2; ++i)
      hidden.push_back(console::random_params(seed * 7 + i, console::RandomMode::basic));
    const AudioBuffer target = console::console_mix(s.tracks, hidden);
    const Tensor feats = track_features(s.tracks, cfg.encoder);
    auto f = [&] {
      Rng r(seed); // same dropout masks on every evaluation
      return loss::stereo_loss(c.forward(s, Mode::train, &r, nullptr, Mode::infer, &feats).mix, target);
    };
    GradCheckOptions opt;
    opt.h = 1e-4;
    opt.max_coords = 12;
    opt.seed = seed;
    auto res = grad_check(f, c.params().items(), opt);
    INFO("seed " << seed << " worst " << res.worst.tensor << "[" << res.worst.index << "] "
                 << res.worst.analytic << " vs " << res.worst.numeric << ", kinks "
                 << res.kinks.size());
    CHECK(res.max_rel_error < 1e-4);
    CHECK(res.checked > res.kinks.size());
  }
}
