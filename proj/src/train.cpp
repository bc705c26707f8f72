#include "dmc/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "dmc/optim.hpp"
#include "dmc/rng.hpp"
#include "dmc/summation.hpp"
#include "dmc/synth.hpp"

namespace dmc::train {

using ag::Tensor;
namespace fs = std::filesystem;

namespace {

template <class Model> Model deep_copy(const Model &m) {
  return Model::from_checkpoint(m.to_checkpoint());
}

std::string fmt_double(double v) {
  if (std::isnan(v))
    return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void check_finite(double v, const char *what) {
  if (!std::isfinite(v))
    throw std::domain_error(std::string(what) + ": loss is not finite");
}

} // namespace

// ---------------------------------------------------------------------------
// Emulation

std::vector<EmulationExample> gen_emulation_batch(const std::vector<AudioBuffer> &sources,
                                                  std::uint64_t seed, std::size_t batch,
                                                  double patch_s) {
  if (sources.empty())
    throw std::invalid_argument("gen_emulation_batch: no sources");
  for (const auto &s : sources) {
    if (s.channels() != 1)
      throw std::invalid_argument("gen_emulation_batch: sources must be mono");
    if (s.frames() < patch_frames(patch_s, s.sample_rate()))
      throw std::invalid_argument("gen_emulation_batch: source shorter than the patch");
  }
  Rng rng = make_stream(seed, "emulation");
  std::vector<EmulationExample> out;
  out.reserve(batch);
  for (std::size_t k = 0; k < batch; ++k) {
    const auto &src = sources[uniform_index(rng, sources.size())];
    EmulationExample ex;
    ex.input = sample_patch(src, {patch_s, rng()});
    ex.params = console::random_params(rng(), console::RandomMode::full);
    ex.target = console::processor_chain_process(ex.input, ex.params);
    out.push_back(std::move(ex));
  }
  return out;
}

void write_curve_csv(const fs::path &path, const std::vector<CurvePoint> &curve) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp);
    if (!f)
      throw std::runtime_error("cannot write " + path.string());
    f << "epoch,train,val,lr\n";
    for (const auto &c : curve)
      f << c.epoch << ',' << fmt_double(c.train) << ',' << fmt_double(c.val) << ','
        << fmt_double(c.lr) << '\n';
  }
  fs::rename(tmp, path);
}

std::pair<Tensor, Tensor> emulation_inputs(const std::vector<EmulationExample> &batch) {
  if (batch.empty())
    throw std::invalid_argument("emulation_inputs: empty batch");
  const std::size_t T = batch[0].input.frames();
  std::vector<double> x, proc;
  x.reserve(batch.size() * T);
  for (const auto &ex : batch) {
    if (ex.input.frames() != T)
      throw std::invalid_argument("emulation_inputs: patches differ in length");
    auto s = ex.input.channel(0);
    x.insert(x.end(), s.begin(), s.end());
    auto p = tcn::processor_vector(ex.params);
    proc.insert(proc.end(), p.begin(), p.end());
  }
  const std::size_t B = batch.size();
  const std::size_t P = proc.size() / B;
  return {Tensor::constant({B, 1, T}, std::move(x)), Tensor::constant({B, P}, std::move(proc))};
}

Tensor emulation_loss(const Tensor &pred, const std::vector<EmulationExample> &batch) {
  if (pred.rank() != 3 || pred.dim(0) != batch.size() || pred.dim(1) != 1)
    throw std::invalid_argument("emulation_loss: prediction must be [B, 1, T']");
  const std::size_t L = pred.dim(2);
  std::vector<double> y;
  y.reserve(batch.size() * L);
  for (const auto &ex : batch) {
    if (ex.target.frames() < L)
      throw std::invalid_argument("emulation_loss: target shorter than prediction");
    auto t = ex.target.channel(0);
    const std::size_t off = (t.size() - L) / 2;
    y.insert(y.end(), t.begin() + static_cast<std::ptrdiff_t>(off),
             t.begin() + static_cast<std::ptrdiff_t>(off + L));
  }
  return ag::mean(ag::abs(pred - Tensor::constant(pred.shape(), std::move(y))));
}

namespace {

double emulation_val(tcn::Tcn &net, const std::vector<EmulationExample> &val, std::size_t chunk) {
  double total = 0.0;
  for (std::size_t i = 0; i < val.size(); i += chunk) {
    std::vector<EmulationExample> part(val.begin() + static_cast<std::ptrdiff_t>(i),
                                       val.begin() + static_cast<std::ptrdiff_t>(std::min(val.size(), i + chunk)));
    auto [x, p] = emulation_inputs(part);
    total += emulation_loss(net.forward(x, p, ag::Mode::infer), part).item() *
             static_cast<double>(part.size());
  }
  return total / static_cast<double>(val.size());
}

} // namespace

EmulationResult train_emulation(const tcn::TcnConfig &cfg, const std::vector<AudioBuffer> &sources,
                                const EmulationOptions &opt) {
  cfg.validate();
  const int sr = sources.at(0).sample_rate();
  if (patch_frames(opt.epoch.patch_s, sr) <= tcn::receptive_field(cfg))
    throw std::invalid_argument("train_emulation: patch is not longer than the receptive field");
  if (opt.epoch.batch == 0 || opt.epoch.patches == 0)
    throw std::invalid_argument("train_emulation: empty epoch");

  tcn::Tcn net(cfg, derive_seed(opt.seed, "init"));
  ag::Adam adam(net.params().tensors(), {opt.lr});
  ag::PlateauScheduler sched(opt.lr, opt.patience);
  const auto val = gen_emulation_batch(sources, derive_seed(opt.seed, "val"),
                                       std::max<std::size_t>(opt.val_examples, 1), opt.epoch.patch_s);
  Rng data = make_stream(opt.seed, "dataset");

  EmulationResult res;
  auto keep = [&](std::size_t epoch, double v) {
    res.best_val = v;
    res.best = deep_copy(net);
    if (opt.checkpoint) {
      auto ck = res.best.to_checkpoint();
      ck.meta["epoch"] = epoch;
      ck.meta["val_loss"] = v;
      save_checkpoint(*opt.checkpoint, ck);
    }
  };
  const double v0 = emulation_val(net, val, opt.epoch.batch);
  res.curve.push_back({0, std::numeric_limits<double>::quiet_NaN(), v0, opt.lr});
  keep(0, v0);
  spdlog::info("emulation epoch 0 val {:.6f}", v0);

  for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    double train_sum = 0.0;
    std::size_t left = opt.epoch.patches;
    while (left > 0) {
      const std::size_t b = std::min(left, opt.epoch.batch);
      left -= b;
      auto batch = gen_emulation_batch(sources, data(), b, opt.epoch.patch_s);
      auto [x, p] = emulation_inputs(batch);
      net.params().zero_grad();
      Tensor loss = emulation_loss(net.forward(x, p, ag::Mode::train), batch);
      check_finite(loss.item(), "train_emulation");
      train_sum += loss.item() * static_cast<double>(b);
      ag::backward(loss);
      adam.step();
    }
    const double v = emulation_val(net, val, opt.epoch.batch);
    const double lr_used = adam.lr();
    adam.set_lr(sched.update(v));
    res.curve.push_back({epoch, train_sum / static_cast<double>(opt.epoch.patches), v, lr_used});
    if (v < res.best_val)
      keep(epoch, v);
    if (opt.curve_csv)
      write_curve_csv(*opt.curve_csv, res.curve);
    spdlog::info("emulation epoch {} train {:.6f} val {:.6f} lr {:.3g}", epoch,
                 res.curve.back().train, v, lr_used);
  }
  if (opt.curve_csv)
    write_curve_csv(*opt.curve_csv, res.curve);
  return res;
}

OverfitResult overfit_emulation(tcn::Tcn &net, const EmulationExample &ex, std::size_t max_steps,
                                double target_mae, double lr) {
  std::vector<EmulationExample> batch{ex};
  auto [x, p] = emulation_inputs(batch);
  ag::Adam adam(net.params().tensors(), {lr});
  OverfitResult res;
  for (;;) {
    net.params().zero_grad();
    Tensor loss = emulation_loss(net.forward(x, p, ag::Mode::train), batch);
    check_finite(loss.item(), "overfit_emulation");
    res.losses.push_back(loss.item());
    if (loss.item() < target_mae) {
      res.reached = true;
      break;
    }
    if (res.steps == max_steps)
      break;
    ag::backward(loss);
    adam.step();
    ++res.steps;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Mix data

nlohmann::ordered_json Split::to_json() const {
  nlohmann::ordered_json j;
  j["train"] = train;
  j["val"] = val;
  j["test"] = test;
  return j;
}

Split Split::from_json(const nlohmann::ordered_json &j) {
  Split s;
  s.train = j.at("train").get<std::vector<std::string>>();
  s.val = j.at("val").get<std::vector<std::string>>();
  s.test = j.at("test").get<std::vector<std::string>>();
  return s;
}

Split split_songs(const std::vector<std::string> &names, std::uint64_t seed) {
  std::vector<std::string> order = names;
  Rng rng = make_stream(seed, "split");
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n = order.size();
  std::size_t n_val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
  std::size_t n_test = n_val;
  if (n >= 3) {
    n_val = std::max<std::size_t>(n_val, 1);
    n_test = std::max<std::size_t>(n_test, 1);
  }
  Split s;
  s.train.assign(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val + n_test));
  s.val.assign(order.end() - static_cast<std::ptrdiff_t>(n_val + n_test),
               order.end() - static_cast<std::ptrdiff_t>(n_test));
  s.test.assign(order.end() - static_cast<std::ptrdiff_t>(n_test), order.end());
  for (auto *v : {&s.train, &s.val, &s.test})
    std::sort(v->begin(), v->end());
  return s;
}

std::vector<MixExample> gen_mix_dataset(const std::vector<std::vector<AudioBuffer>> &song_stems,
                                        ctrl::Task task, std::uint64_t seed) {
  Rng rng = make_stream(seed, "dataset");
  const auto mode = task == ctrl::Task::basic ? console::RandomMode::basic : console::RandomMode::full;
  std::vector<MixExample> out;
  for (std::size_t s = 0; s < song_stems.size(); ++s) {
    if (song_stems[s].size() < 2)
      throw std::invalid_argument("gen_mix_dataset: a song needs at least 2 stems");
    MixExample ex;
    char name[32];
    std::snprintf(name, sizeof name, "song%03zu", s);
    ex.record.name = name;
    ex.record.stems = song_stems[s];
    for (std::size_t i = 0; i < ex.record.stems.size(); ++i)
      ex.hidden.push_back(console::random_params(rng(), mode));
    ex.record.mix = console::console_mix(ex.record.stems, ex.hidden);
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<MixExample> synth_mix_dataset(std::size_t n_songs, std::size_t stems_per_song,
                                          double duration_s, ctrl::Task task, std::uint64_t seed) {
  if (stems_per_song < 2)
    throw std::invalid_argument("synth_mix_dataset: a song needs at least 2 stems");
  Rng rng = make_stream(seed, "stems");
  std::vector<std::vector<AudioBuffer>> stems;
  for (std::size_t s = 0; s < n_songs; ++s)
    stems.push_back(synth::make_song_stems(stems_per_song, duration_s, rng()));
  return gen_mix_dataset(stems, task, seed);
}

namespace {

void write_text(const fs::path &path, const std::string &text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f)
      throw std::runtime_error("cannot write " + path.string());
    f << text;
  }
  fs::rename(tmp, path);
}

nlohmann::ordered_json read_json(const fs::path &path) {
  std::ifstream f(path);
  if (!f)
    throw std::runtime_error("cannot read " + path.string());
  return nlohmann::ordered_json::parse(f);
}

std::vector<console::NamedParams> named(const std::vector<console::ChannelParams> &ps) {
  std::vector<console::NamedParams> out;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    char name[16];
    std::snprintf(name, sizeof name, "track%02zu", i);
    out.push_back({name, ps[i]});
  }
  return out;
}

} // namespace

void write_json(const fs::path &path, const nlohmann::ordered_json &j) {
  write_text(path, j.dump(2) + "\n");
}

void write_mix_dataset(const fs::path &dir, const std::vector<MixExample> &songs, const Split &split,
                       const nlohmann::ordered_json &info) {
  for (const auto &s : songs) {
    const fs::path song = dir / "songs" / s.record.name;
    fs::create_directories(song / "stems");
    for (std::size_t i = 0; i < s.record.stems.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "%02zu.wav", i);
      write_wav(s.record.stems[i], song / "stems" / name);
    }
    write_wav(s.record.mix, song / "mix.wav");
    console::write_params_file(song / "hidden_params.json", named(s.hidden));
  }
  write_json(dir / "split.json", split.to_json());
  write_json(dir / "dataset.json", info);
}

namespace {

MixRecord load_record(const fs::path &dir, const std::string &name) {
  const fs::path song = dir / "songs" / name;
  MixRecord r;
  r.name = name;
  std::vector<fs::path> files;
  if (!fs::is_directory(song / "stems"))
    throw std::runtime_error("missing stems directory for " + name);
  for (const auto &e : fs::directory_iterator(song / "stems"))
    if (e.path().extension() == ".wav")
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto &f : files)
    r.stems.push_back(read_wav(f));
  r.mix = read_wav(song / "mix.wav");
  ctrl::MixSession check{r.stems, r.mix, std::nullopt};
  check.validate();
  return r;
}

} // namespace

MixDataset load_mix_dataset(const fs::path &dir) {
  MixDataset d;
  d.split = Split::from_json(read_json(dir / "split.json"));
  if (fs::exists(dir / "dataset.json"))
    d.info = read_json(dir / "dataset.json");
  for (const auto &n : d.split.train)
    d.train.push_back(load_record(dir, n));
  for (const auto &n : d.split.val)
    d.val.push_back(load_record(dir, n));
  for (const auto &n : d.split.test)
    d.test.push_back(load_record(dir, n));
  return d;
}

std::vector<console::ChannelParams> load_hidden_params(const fs::path &dir, const std::string &song) {
  std::vector<console::ChannelParams> out;
  for (const auto &np : console::read_params_file(dir / "songs" / song / "hidden_params.json"))
    out.push_back(np.params);
  return out;
}

MixRecord sample_record_patch(const MixRecord &song, double patch_s, std::uint64_t seed) {
  const std::size_t n = patch_frames(patch_s, song.mix.sample_rate());
  if (n > song.mix.frames())
    throw std::invalid_argument("sample_record_patch: song " + song.name + " is shorter than the patch");
  const std::size_t off = patch_offset(song.mix.frames(), n, seed);
  MixRecord r;
  r.name = song.name;
  for (const auto &s : song.stems)
    r.stems.push_back(s.slice(off, n));
  r.mix = song.mix.slice(off, n);
  return r;
}

// ---------------------------------------------------------------------------
// Mix training

namespace {

Tensor session_loss(const ctrl::Controller &model, const MixRecord &r, ag::Mode mode, Rng *drop,
                    tcn::Tcn *net, ag::Mode net_mode) {
  ctrl::MixSession s;
  s.tracks = r.stems;
  auto out = model.forward(s, mode, drop, net, net_mode);
  const std::size_t L = out.mix.dim(1);
  return loss::stereo_loss(out.mix, L == r.mix.frames() ? r.mix : ctrl::crop_target(r.mix, L));
}

} // namespace

double mix_loss(const ctrl::Controller &model, const std::vector<MixRecord> &patches, tcn::Tcn *net) {
  if (patches.empty())
    throw std::invalid_argument("mix_loss: no patches");
  double total = 0.0;
  for (const auto &p : patches)
    total += session_loss(model, p, ag::Mode::infer, nullptr, net, ag::Mode::infer).item();
  return total / static_cast<double>(patches.size());
}

MixTrainResult train_mix(ctrl::Controller model, const std::vector<MixRecord> &train_songs,
                         const std::vector<MixRecord> &val_songs, const MixTrainOptions &opt,
                         std::optional<tcn::Tcn> net) {
  if (model.config().task != opt.task)
    throw std::invalid_argument("train_mix: controller task differs from the requested task");
  if (train_songs.empty() || val_songs.empty())
    throw std::invalid_argument("train_mix: need train and validation songs");
  if (opt.epoch.batch == 0 || opt.epoch.patches == 0)
    throw std::invalid_argument("train_mix: empty epoch");
  const bool full = opt.task == ctrl::Task::full;
  if (full && !net)
    throw std::invalid_argument("train_mix: the full task needs a pretrained transformation network");
  if (full && patch_frames(opt.epoch.patch_s, train_songs[0].mix.sample_rate()) <=
                  tcn::receptive_field(net->config()))
    throw std::invalid_argument("train_mix: patch is not longer than the receptive field");
  tcn::Tcn *np = net ? &*net : nullptr;
  const ag::Mode net_mode = opt.train_tcn ? ag::Mode::train : ag::Mode::infer;
  if (np)
    np->params().set_requires_grad(opt.train_tcn);

  std::vector<Tensor> trainable = model.params().tensors();
  if (np && opt.train_tcn)
    for (auto &t : np->params().tensors())
      trainable.push_back(t);
  ag::Adam adam(trainable, {opt.lr});
  ag::PlateauScheduler sched(opt.lr, opt.patience);

  std::vector<MixRecord> val;
  {
    Rng vr = make_stream(opt.seed, "val");
    for (const auto &s : val_songs)
      for (std::size_t k = 0; k < std::max<std::size_t>(opt.val_patches_per_song, 1); ++k)
        val.push_back(sample_record_patch(s, opt.epoch.patch_s, vr()));
  }
  Rng data = make_stream(opt.seed, "dataset");
  Rng drop = make_stream(opt.seed, "dropout");

  MixTrainResult res;
  auto keep = [&](std::size_t epoch, double v) {
    res.best_val = v;
    res.best = deep_copy(model);
    if (np)
      res.best_tcn = deep_copy(*np);
    if (opt.checkpoint) {
      auto ck = res.best.to_checkpoint();
      ck.meta["epoch"] = epoch;
      ck.meta["val_loss"] = v;
      save_checkpoint(*opt.checkpoint, ck);
      if (np && opt.train_tcn)
        res.best_tcn->save(opt.checkpoint->string() + ".tcn");
    }
  };
  auto log_point = [&](const CurvePoint &c) {
    res.curve.push_back(c);
    if (opt.curve_csv)
      write_curve_csv(*opt.curve_csv, res.curve);
    if (opt.on_epoch)
      opt.on_epoch(c);
  };

  const double v0 = mix_loss(model, val, np);
  keep(0, v0);
  log_point({0, std::numeric_limits<double>::quiet_NaN(), v0, opt.lr});
  spdlog::info("mix epoch 0 val {:.6f}", v0);

  for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    double train_sum = 0.0;
    std::size_t left = opt.epoch.patches;
    while (left > 0) {
      const std::size_t b = std::min(left, opt.epoch.batch);
      left -= b;
      model.params().zero_grad();
      if (np && opt.train_tcn)
        np->params().zero_grad();
      // one graph per session; leaf gradients accumulate across the batch
      for (std::size_t j = 0; j < b; ++j) {
        const auto &song = train_songs[uniform_index(data, train_songs.size())];
        const MixRecord patch = sample_record_patch(song, opt.epoch.patch_s, data());
        Tensor l = session_loss(model, patch, ag::Mode::train, &drop, np, net_mode);
        check_finite(l.item(), "train_mix");
        train_sum += l.item();
        ag::backward(ag::mul_scalar(l, 1.0 / static_cast<double>(b)));
      }
      adam.step();
    }
    const double v = mix_loss(model, val, np);
    const double lr_used = adam.lr();
    adam.set_lr(sched.update(v));
    if (v < res.best_val)
      keep(epoch, v);
    log_point({epoch, train_sum / static_cast<double>(opt.epoch.patches), v, lr_used});
    spdlog::info("mix epoch {} train {:.6f} val {:.6f} lr {:.3g}", epoch, res.curve.back().train, v,
                 lr_used);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Direct fit

namespace {

Tensor basic_mix(const std::vector<Tensor> &xs, const std::vector<Tensor> &gains,
                 const std::vector<Tensor> &pans) {
  std::vector<Tensor> ch;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    tcn::ChannelTensors ct;
    ct.gain_db = gains[i];
    ct.fader_db = Tensor::scalar(0.0);
    ct.pan = pans[i];
    Tensor y = tcn::diff_channel_forward(xs[i], ct, tcn::ChannelMode::basic);
    ch.push_back(ag::reshape(y, {1, 2, y.dim(1)}));
  }
  return ag::set_sum(ag::concat(ch, 0));
}

double reflect01(double p) {
  p = std::fmod(std::abs(p), 2.0);
  return p > 1.0 ? 2.0 - p : p;
}

} // namespace

FitResult direct_param_fit(const ctrl::MixSession &session, const FitOptions &opt) {
  session.validate();
  if (!session.target)
    throw std::invalid_argument("direct_param_fit: the session has no target mix");
  const AudioBuffer &target = *session.target;
  const std::size_t N = session.tracks.size();

  std::vector<Tensor> xs, gains, pans;
  for (const auto &t : session.tracks) {
    auto v = t.channel(0);
    xs.push_back(Tensor::constant({v.size()}, {v.begin(), v.end()}));
    gains.push_back(Tensor::parameter({}, {0.0}));
    pans.push_back(Tensor::parameter({}, {opt.init_pan}));
  }
  FitResult res;
  {
    std::vector<console::ChannelParams> neutral(N);
    res.neutral_loss = loss::stereo_loss(console::console_mix(session.tracks, neutral), target);
  }
  ag::Adam gain_opt(gains, {opt.gain_lr});
  ag::Adam pan_opt(pans, {opt.pan_lr});
  const auto &gs = console::kParamSpecs[console::kGainIndex];
  auto set = [](Tensor t, double v) { t.mutable_values()[0] = v; };
  auto eval = [&] { return loss::stereo_loss(basic_mix(xs, gains, pans), target).item(); };
  double best = std::numeric_limits<double>::infinity();
  std::size_t stagnant = 0, halvings = 0;
  for (;;) {
    for (auto &t : gains)
      t.zero_grad();
    for (auto &t : pans)
      t.zero_grad();
    Tensor l = loss::stereo_loss(basic_mix(xs, gains, pans), target);
    const double lv = l.item();
    check_finite(lv, "direct_param_fit");
    res.losses.push_back(lv);
    if (res.steps == opt.max_steps || halvings > opt.max_halvings ||
        (opt.stop_ratio > 0.0 && lv < opt.stop_ratio * res.neutral_loss))
      break;
    if (lv < best) {
      best = lv;
      stagnant = 0;
    } else if (++stagnant >= opt.patience) {
      stagnant = 0;
      // A pan mirrored through the center only flips the sign of that
      // track's difference signal, which gradient steps cannot cross.
      bool flipped = false;
      double cur = eval();
      for (std::size_t i = 0; i < N; ++i) {
        const double p = pans[i].item();
        set(pans[i], 1.0 - p);
        const double v = eval();
        if (v < cur) {
          cur = v;
          flipped = true;
          ++res.flips;
        } else {
          set(pans[i], p);
        }
      }
      if (flipped) {
        best = cur;
        continue;
      }
      ++halvings;
      gain_opt.set_lr(gain_opt.lr() * 0.5);
      pan_opt.set_lr(pan_opt.lr() * 0.5);
    }
    ag::backward(l);
    gain_opt.step();
    pan_opt.step();
    for (auto &t : gains)
      set(t, std::clamp(t.item(), gs.lo, gs.hi));
    for (auto &t : pans)
      set(t, reflect01(t.item()));
    ++res.steps;
  }
  for (std::size_t i = 0; i < N; ++i) {
    console::ChannelParams p;
    p.gain_db = gains[i].item();
    p.pan = pans[i].item();
    res.params.push_back(p);
  }
  res.final_loss = loss::stereo_loss(console::console_mix(session.tracks, res.params), target);
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

nlohmann::ordered_json song_json(const SongMetrics &m) {
  nlohmann::ordered_json j;
  j["name"] = m.name;
  j["mae"] = m.mae;
  j["mr_sum"] = m.mr_sum;
  j["mr_diff"] = m.mr_diff;
  j["total"] = m.total;
  return j;
}

} // namespace

nlohmann::ordered_json Metrics::to_json() const {
  nlohmann::ordered_json j;
  j["songs"] = nlohmann::ordered_json::array();
  for (const auto &s : songs)
    j["songs"].push_back(song_json(s));
  j["mean"] = song_json(mean);
  return j;
}

SongMetrics compare(const std::string &name, const AudioBuffer &pred, const AudioBuffer &target) {
  const AudioBuffer t = pred.frames() < target.frames() ? ctrl::crop_target(target, pred.frames()) : target;
  if (pred.channels() != 2 || t.channels() != 2 || pred.frames() != t.frames())
    throw std::invalid_argument("compare: need stereo buffers of equal length");
  if (pred.sample_rate() != t.sample_rate())
    throw std::invalid_argument("compare: sample rates differ");
  SongMetrics m;
  m.name = name;
  double acc = 0.0;
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t n = 0; n < t.frames(); ++n)
      acc += std::abs(pred.at(c, n) - t.at(c, n));
  m.mae = acc / static_cast<double>(2 * t.frames());
  auto rep = loss::stereo_loss_report(pred, t);
  m.mr_sum = rep.sum.total;
  m.mr_diff = rep.diff.total;
  m.total = rep.total;
  return m;
}

Metrics evaluate(const std::vector<MixRecord> &songs, const Mixer &mixer) {
  Metrics out;
  out.mean.name = "mean";
  for (const auto &s : songs) {
    out.songs.push_back(compare(s.name, mixer(s), s.mix));
    out.mean.mae += out.songs.back().mae;
    out.mean.mr_sum += out.songs.back().mr_sum;
    out.mean.mr_diff += out.songs.back().mr_diff;
    out.mean.total += out.songs.back().total;
  }
  if (!songs.empty()) {
    const double n = static_cast<double>(songs.size());
    out.mean.mae /= n;
    out.mean.mr_sum /= n;
    out.mean.mr_diff /= n;
    out.mean.total /= n;
  }
  return out;
}

AudioBuffer mono_mix(const std::vector<AudioBuffer> &stems) {
  if (stems.empty())
    throw std::invalid_argument("mono_mix: no stems");
  const std::size_t T = stems[0].frames();
  AudioBuffer out(2, T, stems[0].sample_rate());
  std::vector<double> col(stems.size());
  for (std::size_t n = 0; n < T; ++n) {
    for (std::size_t i = 0; i < stems.size(); ++i)
      col[i] = stems[i].at(0, n);
    const double v = order_invariant_sum(col);
    out.at(0, n) = v;
    out.at(1, n) = v;
  }
  return out;
}

Mixer mono_mixer() {
  return [](const MixRecord &r) { return mono_mix(r.stems); };
}

Mixer controller_mixer(const ctrl::Controller &model, tcn::Tcn *net) {
  return [&model, net](const MixRecord &r) {
    ctrl::MixSession s;
    s.tracks = r.stems;
    auto out = model.forward(s, ag::Mode::infer, nullptr, net, ag::Mode::infer);
    const std::size_t L = out.mix.dim(1);
    auto v = out.mix.values();
    return AudioBuffer::stereo({v.begin(), v.begin() + static_cast<std::ptrdiff_t>(L)},
                               {v.begin() + static_cast<std::ptrdiff_t>(L), v.end()}, r.mix.sample_rate());
  };
}

} // namespace dmc::train
