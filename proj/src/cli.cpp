#include "dmc/cli.hpp"

#include <glob.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "dmc/audio.hpp"
#include "dmc/console.hpp"
#include "dmc/controller.hpp"
#include "dmc/rng.hpp"
#include "dmc/stereo_loss.hpp"
#include "dmc/suites.hpp"
#include "dmc/tcn.hpp"
#include "dmc/train.hpp"

namespace dmc::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::vector<std::string> expand_glob(const std::string &pattern) {
  glob_t g{};
  const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
  std::vector<std::string> out;
  if (rc == 0)
    for (std::size_t i = 0; i < g.gl_pathc; ++i)
      out.emplace_back(g.gl_pathv[i]);
  globfree(&g);
  if (out.empty())
    throw std::runtime_error("no files match '" + pattern + "'");
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

struct Stems {
  std::vector<std::string> names;
  std::vector<AudioBuffer> tracks;
};

Stems load_stems(const std::string &pattern) {
  Stems s;
  for (const auto &f : expand_glob(pattern)) {
    s.names.push_back(fs::path(f).stem().string());
    s.tracks.push_back(read_wav(f));
  }
  ctrl::MixSession check;
  check.tracks = s.tracks;
  check.validate();
  return s;
}

AudioBuffer to_buffer(const ag::Tensor &stereo, int sr) {
  const std::size_t L = stereo.dim(1);
  auto v = stereo.values();
  return AudioBuffer::stereo({v.begin(), v.begin() + static_cast<std::ptrdiff_t>(L)},
                             {v.begin() + static_cast<std::ptrdiff_t>(L), v.end()}, sr);
}

void announce(std::ostream &err, const std::string &cmd, const std::string &seed, const json &cfg) {
  err << "dmc " << cmd << " seed=" << seed << " config=" << cfg.dump() << "\n";
}

train::EpochSpec epoch_spec(std::size_t patches, double patch_s, std::size_t batch) {
  if (patches == 0 || batch == 0 || !(patch_s > 0.0))
    throw UsageError("epoch needs patches > 0, batch > 0 and a positive patch length");
  return {patches, patch_s, batch};
}

std::vector<AudioBuffer> all_stems(const std::vector<train::MixRecord> &songs) {
  std::vector<AudioBuffer> out;
  for (const auto &s : songs)
    out.insert(out.end(), s.stems.begin(), s.stems.end());
  return out;
}

} // namespace

int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
  CLI::App app{"Differentiable mixing console toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  // gen-data
  std::string gd_out, gd_task = "basic";
  std::size_t gd_songs = 10, gd_stems = 4;
  std::uint64_t gd_seed = 0;
  double gd_dur = 8.0;
  auto *gen = app.add_subcommand("gen-data", "synthesize stems, hidden params and target mixes");
  gen->add_option("--out", gd_out, "dataset directory")->required();
  gen->add_option("--songs", gd_songs)->check(CLI::PositiveNumber);
  gen->add_option("--stems", gd_stems, "stems per song")->check(CLI::Range(2, 64));
  gen->add_option("--task", gd_task)->check(CLI::IsMember({"basic", "full"}));
  gen->add_option("--seed", gd_seed);
  gen->add_option("--duration", gd_dur, "song length in seconds")->check(CLI::PositiveNumber);

  // train-emulation
  std::string te_cfg = "tcn10", te_data, te_out, te_curve;
  std::size_t te_width = 32, te_epochs = 1, te_patches = 1000, te_batch = 32, te_val = 32, te_pat = 20;
  double te_patch_s = 1.5, te_lr = 3e-4;
  std::uint64_t te_seed = 0;
  auto *temu = app.add_subcommand("train-emulation", "train the transformation network on the reference chain");
  temu->add_option("--config", te_cfg)->check(CLI::IsMember({"tcn10", "tcn20", "tcn30"}));
  temu->add_option("--width", te_width)->check(CLI::PositiveNumber);
  temu->add_option("--data", te_data, "dataset directory (train-split stems are the sources)")->required();
  temu->add_option("--out", te_out, "best-validation checkpoint")->required();
  temu->add_option("--epochs", te_epochs);
  temu->add_option("--seed", te_seed);
  temu->add_option("--patches", te_patches, "patches per epoch");
  temu->add_option("--patch-s", te_patch_s, "patch length in seconds");
  temu->add_option("--batch", te_batch);
  temu->add_option("--val", te_val, "fixed validation examples");
  temu->add_option("--lr", te_lr);
  temu->add_option("--patience", te_pat);
  temu->add_option("--curve", te_curve, "loss curve CSV (default <out>.csv)");

  // train-mix
  std::string tm_task = "basic", tm_data, tm_tcn, tm_out, tm_curve, tm_metrics;
  std::size_t tm_epochs = 1, tm_patches = 100, tm_batch = 0, tm_emb = 128, tm_hidden = 256, tm_valp = 2,
              tm_pat = 200;
  double tm_patch_s = 5.0, tm_lr = 3e-4, tm_dropout = 0.1;
  std::uint64_t tm_seed = 0;
  bool tm_train_tcn = false;
  auto *tmix = app.add_subcommand("train-mix", "train the mixing controller against target mixes");
  tmix->add_option("--task", tm_task)->check(CLI::IsMember({"basic", "full"}));
  tmix->add_option("--data", tm_data)->required();
  tmix->add_option("--tcn", tm_tcn, "pretrained transformation network (full task)");
  tmix->add_option("--out", tm_out)->required();
  tmix->add_option("--epochs", tm_epochs);
  tmix->add_option("--seed", tm_seed);
  tmix->add_option("--patches", tm_patches);
  tmix->add_option("--patch-s", tm_patch_s);
  tmix->add_option("--batch", tm_batch, "default 16 (basic) or 2 (full)");
  tmix->add_option("--embedding", tm_emb);
  tmix->add_option("--hidden", tm_hidden);
  tmix->add_option("--dropout", tm_dropout);
  tmix->add_option("--val-patches", tm_valp, "fixed validation patches per song");
  tmix->add_option("--lr", tm_lr);
  tmix->add_option("--patience", tm_pat);
  tmix->add_flag("--train-tcn", tm_train_tcn, "also update the transformation network");
  tmix->add_option("--curve", tm_curve, "loss curve CSV (default <out>.csv)");
  tmix->add_option("--metrics", tm_metrics, "test metrics JSON (default <out>.metrics.json)");

  // fit-params
  std::string fp_stems, fp_target, fp_out;
  train::FitOptions fp_opt;
  auto *fit = app.add_subcommand("fit-params", "fit per-track gain and pan to a target mix");
  fit->add_option("--stems", fp_stems, "glob of mono stem WAVs")->required();
  fit->add_option("--target", fp_target)->required();
  fit->add_option("--out", fp_out, "params JSON")->required();
  fit->add_option("--steps", fp_opt.max_steps);
  fit->add_option("--gain-lr", fp_opt.gain_lr);
  fit->add_option("--pan-lr", fp_opt.pan_lr);

  // mix
  std::string mx_stems, mx_weights, mx_task = "basic", mx_tcn, mx_out_mix, mx_out_params;
  auto *mix = app.add_subcommand("mix", "predict parameters and mix");
  mix->add_option("--stems", mx_stems)->required();
  mix->add_option("--weights", mx_weights, "controller checkpoint")->required();
  mix->add_option("--task", mx_task)->check(CLI::IsMember({"basic", "full"}));
  mix->add_option("--tcn", mx_tcn, "transformation network (full task)");
  mix->add_option("--out-mix", mx_out_mix)->required();
  mix->add_option("--out-params", mx_out_params)->required();

  // render
  std::string rd_stems, rd_params, rd_out;
  auto *render = app.add_subcommand("render", "render params through the reference console");
  render->add_option("--stems", rd_stems)->required();
  render->add_option("--params", rd_params)->required();
  render->add_option("--out", rd_out)->required();

  // metrics
  std::string mt_a, mt_b;
  auto *metrics = app.add_subcommand("metrics", "stereo loss report of --a against the target --b");
  metrics->add_option("--a", mt_a, "prediction")->required();
  metrics->add_option("--b", mt_b, "target")->required();

  // gradcheck
  std::vector<std::string> gc_modules;
  std::vector<std::uint64_t> gc_seeds{0, 1, 2, 3, 4};
  auto *gc = app.add_subcommand("gradcheck", "finite-difference gradient suites");
  gc->add_option("--module", gc_modules, "grad_engine, channel, tcn, controller (default all)");
  gc->add_option("--seeds", gc_seeds);

  auto *info = app.add_subcommand("info", "build and model facts");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp &) {
    out << app.help();
    return ok;
  } catch (const CLI::CallForAllHelp &) {
    out << app.help("", CLI::AppFormatMode::All);
    return ok;
  } catch (const CLI::ParseError &e) {
    err << "usage error: " << e.what() << "\n";
    for (auto *sub : app.get_subcommands())
      err << sub->help();
    return usage;
  }

  try {
    if (gen->parsed()) {
      const auto task = ctrl::parse_task(gd_task);
      json cfg{{"out", gd_out}, {"songs", gd_songs}, {"stems", gd_stems}, {"task", gd_task}, {"duration", gd_dur}};
      announce(err, "gen-data", std::to_string(gd_seed), cfg);
      auto songs = train::synth_mix_dataset(gd_songs, gd_stems, gd_dur, task, gd_seed);
      std::vector<std::string> names;
      for (const auto &s : songs)
        names.push_back(s.record.name);
      const auto split = train::split_songs(names, gd_seed);
      cfg["seed"] = gd_seed;
      cfg["sample_rate"] = kDefaultSampleRate;
      cfg.erase("out");
      train::write_mix_dataset(gd_out, songs, split, cfg);
      out << "wrote " << songs.size() << " songs (" << split.train.size() << "/" << split.val.size() << "/"
          << split.test.size() << " train/val/test) to " << gd_out << "\n";
      return ok;
    }

    if (temu->parsed()) {
      auto cfg = tcn::TcnConfig::preset(te_cfg, te_width);
      train::EmulationOptions opt;
      opt.epochs = te_epochs;
      opt.epoch = epoch_spec(te_patches, te_patch_s, te_batch);
      opt.val_examples = te_val;
      opt.lr = te_lr;
      opt.patience = te_pat;
      opt.seed = te_seed;
      opt.checkpoint = te_out;
      opt.curve_csv = te_curve.empty() ? te_out + ".csv" : te_curve;
      announce(err, "train-emulation", std::to_string(te_seed),
               json{{"tcn", cfg.to_json()}, {"data", te_data}, {"out", te_out}, {"epochs", te_epochs},
                    {"patches", te_patches}, {"patch_s", te_patch_s}, {"batch", te_batch}, {"val", te_val},
                    {"lr", te_lr}, {"patience", te_pat}, {"curve", opt.curve_csv->string()}});
      auto data = train::load_mix_dataset(te_data);
      auto res = train::train_emulation(cfg, all_stems(data.train), opt);
      out << "best validation MAE " << res.best_val << " (checkpoint " << te_out << ")\n";
      return ok;
    }

    if (tmix->parsed()) {
      const auto task = ctrl::parse_task(tm_task);
      const bool full = task == ctrl::Task::full;
      if (full && tm_tcn.empty())
        throw UsageError("the full task needs --tcn");
      ctrl::ControllerConfig cc;
      cc.task = task;
      cc.encoder.embedding_dim = tm_emb;
      cc.hidden = tm_hidden;
      cc.dropout = tm_dropout;
      train::MixTrainOptions opt;
      opt.task = task;
      opt.epochs = tm_epochs;
      opt.epoch = epoch_spec(tm_patches, tm_patch_s, tm_batch ? tm_batch : (full ? 2 : 16));
      opt.val_patches_per_song = tm_valp;
      opt.lr = tm_lr;
      opt.patience = tm_pat;
      opt.seed = tm_seed;
      opt.train_tcn = tm_train_tcn;
      opt.checkpoint = tm_out;
      opt.curve_csv = tm_curve.empty() ? tm_out + ".csv" : tm_curve;
      const std::string metrics_path = tm_metrics.empty() ? tm_out + ".metrics.json" : tm_metrics;
      announce(err, "train-mix", std::to_string(tm_seed),
               json{{"task", tm_task}, {"controller", cc.to_json()}, {"data", tm_data}, {"tcn", tm_tcn},
                    {"out", tm_out}, {"epochs", tm_epochs}, {"patches", opt.epoch.patches},
                    {"patch_s", opt.epoch.patch_s}, {"batch", opt.epoch.batch}, {"val_patches", tm_valp},
                    {"lr", tm_lr}, {"patience", tm_pat}, {"train_tcn", tm_train_tcn},
                    {"curve", opt.curve_csv->string()}, {"metrics", metrics_path}});
      auto data = train::load_mix_dataset(tm_data);
      std::optional<tcn::Tcn> net;
      if (!tm_tcn.empty())
        net = tcn::Tcn::load(tm_tcn);
      ctrl::Controller model(cc, derive_seed(tm_seed, "init"));
      auto res = train::train_mix(model, data.train, data.val, opt, net);
      json m;
      m["best_val"] = res.best_val;
      m["epoch0_val"] = res.curve.front().val;
      if (!data.test.empty()) {
        tcn::Tcn *np = res.best_tcn ? &*res.best_tcn : nullptr;
        m["controller"] = train::evaluate(data.test, train::controller_mixer(res.best, np)).to_json();
        m["mono"] = train::evaluate(data.test, train::mono_mixer()).to_json();
      }
      train::write_json(metrics_path, m);
      out << "best validation loss " << res.best_val << " (epoch 0: " << res.curve.front().val << ")\n";
      return ok;
    }

    if (fit->parsed()) {
      announce(err, "fit-params", "none",
               json{{"stems", fp_stems}, {"target", fp_target}, {"out", fp_out}, {"steps", fp_opt.max_steps},
                    {"gain_lr", fp_opt.gain_lr}, {"pan_lr", fp_opt.pan_lr}, {"init_pan", fp_opt.init_pan},
                    {"patience", fp_opt.patience}, {"max_halvings", fp_opt.max_halvings}});
      auto stems = load_stems(fp_stems);
      ctrl::MixSession s;
      s.tracks = stems.tracks;
      s.target = read_wav(fp_target);
      auto res = train::direct_param_fit(s, fp_opt);
      std::vector<console::NamedParams> named;
      for (std::size_t i = 0; i < res.params.size(); ++i)
        named.push_back({stems.names[i], res.params[i]});
      console::write_params_file(fp_out, named);
      out << "fit " << res.steps << " steps, loss " << res.final_loss << " (neutral " << res.neutral_loss << ")\n";
      return ok;
    }

    if (mix->parsed()) {
      const auto task = ctrl::parse_task(mx_task);
      announce(err, "mix", "none",
               json{{"stems", mx_stems}, {"weights", mx_weights}, {"task", mx_task}, {"tcn", mx_tcn},
                    {"out_mix", mx_out_mix}, {"out_params", mx_out_params}});
      auto model = ctrl::Controller::load(mx_weights);
      if (model.config().task != task)
        throw UsageError("checkpoint was trained for the " + ctrl::to_string(model.config().task) + " task");
      std::optional<tcn::Tcn> net;
      if (task == ctrl::Task::full) {
        if (mx_tcn.empty())
          throw UsageError("the full task needs --tcn");
        net = tcn::Tcn::load(mx_tcn);
      }
      auto stems = load_stems(mx_stems);
      ctrl::MixSession s;
      s.tracks = stems.tracks;
      auto res = model.forward(s, ag::Mode::infer, nullptr, net ? &*net : nullptr);
      write_wav(to_buffer(res.mix, s.sample_rate()), mx_out_mix);
      std::vector<console::NamedParams> named;
      for (std::size_t i = 0; i < res.params.size(); ++i)
        named.push_back({stems.names[i], res.params[i]});
      console::write_params_file(mx_out_params, named);
      if (task == ctrl::Task::full) {
        const auto ref = console::console_mix(s.tracks, res.params);
        const auto m = train::compare("render", to_buffer(res.mix, s.sample_rate()), ref);
        out << "emulated mix vs reference render: mae " << m.mae << ", stereo loss " << m.total << "\n";
      }
      out << "mixed " << stems.tracks.size() << " tracks to " << mx_out_mix << "\n";
      return ok;
    }

    if (render->parsed()) {
      announce(err, "render", "none", json{{"stems", rd_stems}, {"params", rd_params}, {"out", rd_out}});
      auto stems = load_stems(rd_stems);
      auto named = console::read_params_file(rd_params);
      if (named.size() != stems.tracks.size())
        throw std::runtime_error("params list " + std::to_string(named.size()) + " tracks, stems " +
                                 std::to_string(stems.tracks.size()));
      std::vector<console::ChannelParams> ps;
      for (std::size_t i = 0; i < named.size(); ++i) {
        if (named[i].name != stems.names[i])
          throw std::runtime_error("params track '" + named[i].name + "' does not match stem '" +
                                   stems.names[i] + "'");
        ps.push_back(named[i].params);
      }
      write_wav(console::console_mix(stems.tracks, ps), rd_out);
      out << "rendered " << ps.size() << " tracks to " << rd_out << "\n";
      return ok;
    }

    if (metrics->parsed()) {
      announce(err, "metrics", "none", json{{"a", mt_a}, {"b", mt_b}});
      const auto a = read_wav(mt_a), b = read_wav(mt_b);
      if (a.sample_rate() != b.sample_rate())
        throw std::runtime_error("sample rates differ: " + std::to_string(a.sample_rate()) + " vs " +
                                 std::to_string(b.sample_rate()));
      if (a.channels() != 2 || b.channels() != 2 || a.frames() != b.frames())
        throw std::runtime_error("metrics needs two stereo files of equal length");
      out << loss::stereo_loss_report(a, b).to_json().dump(2) << "\n";
      return ok;
    }

    if (gc->parsed()) {
      json cfg{{"modules", gc_modules}, {"seeds", gc_seeds}};
      announce(err, "gradcheck", "fixed", cfg);
      const auto checks = run_gradcheck_suites(gc_modules, gc_seeds);
      std::size_t failed = 0;
      for (const auto &c : checks) {
        char line[256];
        std::snprintf(line, sizeof line, "%-4s %-12s %-40s seed %llu  max rel err %.3e (tol %.0e)  checked %zu  kinks %zu\n",
                      c.pass() ? "ok" : "FAIL", c.suite.c_str(), c.name.c_str(),
                      static_cast<unsigned long long>(c.seed), c.max_rel_error, c.tol, c.checked, c.kinks);
        out << line;
        failed += !c.pass();
      }
      out << (failed ? std::to_string(failed) + " checks failed" : "all " + std::to_string(checks.size()) + " checks passed")
          << "\n";
      return failed ? numeric_failure : ok;
    }

    if (info->parsed()) {
      announce(err, "info", "none", json::object());
      json j;
      j["sample_rate"] = kDefaultSampleRate;
      j["params_schema_version"] = console::kParamsSchemaVersion;
      json rf = json::object();
      for (const char *p : {"tcn10", "tcn20", "tcn30"}) {
        auto c = tcn::TcnConfig::preset(p);
        rf[p] = {{"samples", tcn::receptive_field(c)}, {"ms", tcn::receptive_field_ms(c)}};
      }
      j["receptive_field"] = rf;
      json params = json::array();
      for (const auto &s : console::kParamSpecs)
        params.push_back({{"name", std::string(s.name)}, {"lo", s.lo}, {"hi", s.hi}});
      j["channel_params"] = params;
      json res = json::array();
      for (const auto &r : loss::MultiResConfig{}.resolutions)
        res.push_back({{"frame", r.frame_size}, {"hop", r.hop_size}});
      j["loss_resolutions"] = res;
      j["gradcheck_suites"] = gradcheck_suite_names();
      out << j.dump(2) << "\n";
      return ok;
    }
  } catch (const UsageError &e) {
    err << "usage error: " << e.what() << "\n";
    return usage;
  } catch (const std::domain_error &e) {
    err << "numeric failure: " << e.what() << "\n";
    return numeric_failure;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << "\n";
    return data_error;
  }
  return usage;
}

} // namespace dmc::cli
