#include "catch_amalgamated.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "dmc/console.hpp"
#include "dmc/rng.hpp"
#include "dmc/stereo_loss.hpp"
#include "dmc/synth.hpp"
#include "dmc/train.hpp"

using namespace dmc;
using namespace dmc::train;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string &name) {
  auto p = fs::temp_directory_path() / ("dmc_test_train_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ctrl::ControllerConfig tiny_controller() {
  ctrl::ControllerConfig c;
  c.encoder.conv_width = 8;
  c.encoder.embedding_dim = 16;
  c.hidden = 16;
  return c;
}

} // namespace

TEST_CASE("emulation batches", "[train]") {
  std::vector<AudioBuffer> src = {synth::make_stem(synth::StemKind::bass, 3.0, 1),
                                  synth::make_stem(synth::StemKind::snare, 2.0, 2)};
  auto a = gen_emulation_batch(src, 5, 32);
  auto b = gen_emulation_batch(src, 5, 32);
  REQUIRE(a.size() == 32);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].input.frames() == 66150);
    CHECK(a[i].target.frames() == 66150);
    CHECK(a[i].input.channels() == 1);
    CHECK(a[i].params.values() == b[i].params.values());
    CHECK(std::ranges::equal(a[i].target.channel(0), b[i].target.channel(0)));
  }
  auto c = gen_emulation_batch(src, 6, 32);
  CHECK(a[0].params.values() != c[0].params.values());

  auto [x, p] = emulation_inputs(a);
  CHECK(x.shape() == ag::Shape{32, 1, 66150});
  CHECK(p.shape() == ag::Shape{32, 22});
}

TEST_CASE("zeroed output layer predicts silence", "[train]") {
  tcn::TcnConfig cfg;
  cfg.n_blocks = 3;
  cfg.channel_width = 4;
  cfg.film_hidden = 16;
  cfg.cond_dim = 8;
  tcn::Tcn net(cfg, 3);
  for (const char *name : {"out.w", "out.b"}) {
    auto t = net.params().get(name);
    std::ranges::fill(t.mutable_values(), 0.0);
  }
  std::vector<AudioBuffer> src = {synth::make_stem(synth::StemKind::pad, 1.0, 4)};
  auto ex = gen_emulation_batch(src, 1, 1, 0.5)[0];
  const std::size_t L = ex.input.frames() - tcn::receptive_field(cfg) + 1;
  double expect = 0.0;
  const std::size_t off = (ex.target.frames() - L) / 2;
  for (std::size_t n = 0; n < L; ++n)
    expect += std::abs(ex.target.at(0, off + n));
  expect /= static_cast<double>(L);
  auto r = overfit_emulation(net, ex, 0, 0.0);
  REQUIRE(r.losses.size() == 1);
  CHECK(r.losses[0] == Catch::Approx(expect).epsilon(1e-12));
  CHECK_FALSE(r.reached);
}

TEST_CASE("song splits", "[train]") {
  std::vector<std::string> names;
  for (int i = 0; i < 10; ++i)
    names.push_back("song" + std::to_string(i));
  auto s = split_songs(names, 3);
  CHECK(s.train.size() == 8);
  CHECK(s.val.size() == 1);
  CHECK(s.test.size() == 1);
  std::set<std::string> all(s.train.begin(), s.train.end());
  all.insert(s.val.begin(), s.val.end());
  all.insert(s.test.begin(), s.test.end());
  CHECK(all.size() == 10);
  CHECK(std::ranges::is_sorted(s.train));
  auto again = split_songs(names, 3);
  CHECK(again.train == s.train);
  CHECK(again.test == s.test);
  CHECK(Split::from_json(s.to_json()).val == s.val);

  auto tiny = split_songs({"a", "b"}, 0);
  CHECK(tiny.train.size() == 2);
  CHECK(tiny.val.empty());
}

TEST_CASE("mix dataset targets", "[train]") {
  auto songs = synth_mix_dataset(2, 3, 1.0, ctrl::Task::basic, 4);
  for (const auto &s : songs) {
    REQUIRE(s.hidden.size() == 3);
    auto y = console::console_mix(s.record.stems, s.hidden);
    CHECK(std::ranges::equal(y.channel(0), s.record.mix.channel(0)));
    CHECK(std::ranges::equal(y.channel(1), s.record.mix.channel(1)));
    // oracle injection: the hidden params reproduce the target exactly
    CHECK(loss::stereo_loss(y, s.record.mix) == 0.0);
    for (const auto &p : s.hidden) {
      CHECK(p.eq_ls_gain_db == 0.0);
      CHECK(p.comp_ratio == console::ChannelParams::neutral().comp_ratio);
    }
  }
  CHECK_THROWS(gen_mix_dataset({{synth::make_stem(synth::StemKind::bass, 1.0, 1)}}, ctrl::Task::basic, 0));

  auto full = synth_mix_dataset(1, 2, 1.0, ctrl::Task::full, 4);
  CHECK(full[0].hidden[0].values() != console::ChannelParams::neutral().values());
}

TEST_CASE("record patches stay aligned", "[train]") {
  auto song = synth_mix_dataset(1, 3, 2.0, ctrl::Task::basic, 9)[0];
  auto p = sample_record_patch(song.record, 0.5, 2);
  REQUIRE(p.mix.frames() == patch_frames(0.5, 44100));
  auto y = console::console_mix(p.stems, song.hidden);
  // channel processing of the basic task is memoryless, so the patch mix is the mix patch
  double worst = 0.0;
  for (std::size_t n = 0; n < y.frames(); ++n)
    worst = std::max(worst, std::abs(y.at(0, n) - p.mix.at(0, n)));
  CHECK(worst < 1e-12);
}

TEST_CASE("training never reads hidden parameters", "[train]") {
  auto dir = scratch("audit");
  auto songs = synth_mix_dataset(5, 2, 2.0, ctrl::Task::basic, 21);
  std::vector<std::string> names;
  for (const auto &s : songs)
    names.push_back(s.record.name);
  write_mix_dataset(dir, songs, split_songs(names, 21), {{"note", "audit"}});

  MixTrainOptions opt;
  opt.epochs = 2;
  opt.epoch = {2, 1.0, 2};
  opt.val_patches_per_song = 1;
  opt.seed = 8;
  auto train_once = [&] {
    auto ds = load_mix_dataset(dir);
    return train_mix(ctrl::Controller(tiny_controller(), 8), ds.train, ds.val, opt).curve;
  };
  const auto before = train_once();
  REQUIRE(load_hidden_params(dir, names[0]).size() == 2);
  for (const auto &n : names)
    std::ofstream(dir / "songs" / n / "hidden_params.json") << "{ not json";
  const auto after = train_once();
  REQUIRE(before.size() == 3);
  REQUIRE(after.size() == before.size());
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(after[i].val == before[i].val);
    CHECK((std::isnan(before[i].train) ? std::isnan(after[i].train) : after[i].train == before[i].train));
  }
  CHECK_THROWS(load_hidden_params(dir, names[0]));
  fs::remove_all(dir);
}

TEST_CASE("curve csv", "[train]") {
  auto dir = scratch("csv");
  const double nan = std::nan("");
  write_curve_csv(dir / "c.csv", {{0, nan, 2.5, 3e-4}, {1, 1.25, 0.1, 1.5e-4}});
  std::ifstream f(dir / "c.csv");
  std::string header, l0, l1;
  std::getline(f, header);
  std::getline(f, l0);
  std::getline(f, l1);
  CHECK(header == "epoch,train,val,lr");
  CHECK(l0.rfind("0,,2.5,", 0) == 0);
  CHECK(l1.rfind("1,1.25,0.10000000000000001,", 0) == 0);
  CHECK_FALSE(fs::exists(dir / "c.csv.tmp"));
  fs::remove_all(dir);
}

TEST_CASE("direct fit on one track", "[train]") {
  console::ChannelParams hidden;
  hidden.gain_db = -7.5;
  hidden.pan = 0.8;
  ctrl::MixSession s;
  s.tracks = {synth::make_stem(synth::StemKind::pad, 0.5, 12)};
  s.target = console::console_mix(s.tracks, std::vector{hidden});
  FitOptions opt;
  opt.max_steps = 600;
  auto r = direct_param_fit(s, opt);
  CHECK(r.final_loss < 0.01 * r.neutral_loss);
  CHECK(std::abs(r.params[0].gain_db - hidden.gain_db) < 0.1);
  // a lone track only fixes |L - R|, so the mirrored pan fits equally well
  const double pe = std::min(std::abs(r.params[0].pan - 0.8), std::abs(r.params[0].pan - 0.2));
  CHECK(pe < 0.01);
  CHECK(r.steps <= 600);
}

TEST_CASE("evaluation baselines", "[train]") {
  auto songs = synth_mix_dataset(2, 3, 1.0, ctrl::Task::basic, 31);
  std::vector<MixRecord> recs;
  for (const auto &s : songs)
    recs.push_back(s.record);
  auto self = evaluate(recs, [](const MixRecord &r) { return r.mix; });
  CHECK(self.mean.total == 0.0);
  CHECK(self.mean.mae == 0.0);

  auto mono = evaluate(recs, mono_mixer());
  REQUIRE(mono.songs.size() == 2);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    auto m = mono_mix(recs[i].stems);
    CHECK(std::ranges::equal(m.channel(0), m.channel(1)));
    // a mono mix has no difference signal: its diff branch is l_MR(0, y_diff)
    const auto &y = recs[i].mix;
    std::vector<double> d(y.frames()), zero(y.frames(), 0.0);
    for (std::size_t n = 0; n < d.size(); ++n)
      d[n] = y.at(0, n) - y.at(1, n);
    CHECK(mono.songs[i].mr_diff == Catch::Approx(loss::loss_mr(zero, d)).epsilon(1e-12));
  }
  auto j = mono.to_json();
  CHECK(j["songs"].size() == 2);
}
