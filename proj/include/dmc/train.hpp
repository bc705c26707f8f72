#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmc/audio.hpp"
#include "dmc/console.hpp"
#include "dmc/controller.hpp"
#include "dmc/stereo_loss.hpp"
#include "dmc/tcn.hpp"

namespace dmc::train {

// ---------------------------------------------------------------------------
// Emulation

struct EmulationExample {
  AudioBuffer input;
  console::ChannelParams params;
  AudioBuffer target; // processor chain output, fresh state
};

/// Random patches of the sources, each with uniform full-mode params and its
/// reference output. Deterministic per seed.
std::vector<EmulationExample> gen_emulation_batch(const std::vector<AudioBuffer> &sources,
                                                  std::uint64_t seed, std::size_t batch,
                                                  double patch_s = 1.5);

struct EpochSpec {
  std::size_t patches = 1000;
  double patch_s = 1.5;
  std::size_t batch = 32;

  static EpochSpec emulation() { return {}; }
  static EpochSpec mix(ctrl::Task t) { return {100, 5.0, t == ctrl::Task::basic ? 16u : 2u}; }
  std::size_t steps() const { return (patches + batch - 1) / batch; }
};

struct CurvePoint {
  std::size_t epoch = 0;
  double train = 0.0;
  double val = 0.0;
  double lr = 0.0;
};

void write_curve_csv(const std::filesystem::path &path, const std::vector<CurvePoint> &curve);

/// mean |pred - centercrop(target)| over the batch; pred [B, 1, T'].
ag::Tensor emulation_loss(const ag::Tensor &pred, const std::vector<EmulationExample> &batch);

/// Stacks a batch into ([B, 1, T], [B, 22]) network inputs.
std::pair<ag::Tensor, ag::Tensor> emulation_inputs(const std::vector<EmulationExample> &batch);

struct EmulationOptions {
  std::size_t epochs = 1;
  EpochSpec epoch = EpochSpec::emulation();
  std::size_t val_examples = 32;
  double lr = 3e-4;
  std::size_t patience = 20;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> checkpoint; // best-validation weights
  std::optional<std::filesystem::path> curve_csv;
};

struct EmulationResult {
  tcn::Tcn best;
  std::vector<CurvePoint> curve;
  double best_val = 0.0;
};

EmulationResult train_emulation(const tcn::TcnConfig &cfg, const std::vector<AudioBuffer> &sources,
                                const EmulationOptions &opt);

struct OverfitResult {
  std::vector<double> losses; // before each update, then once after the last
  std::size_t steps = 0;
  bool reached = false;
};

/// Repeated Adam steps on one example until the training MAE drops below
/// `target_mae` or `max_steps` run out.
OverfitResult overfit_emulation(tcn::Tcn &net, const EmulationExample &ex, std::size_t max_steps,
                                double target_mae, double lr = 3e-4);

// ---------------------------------------------------------------------------
// Mix data

/// What the models see of one song. Hidden parameters live elsewhere.
struct MixRecord {
  std::string name;
  std::vector<AudioBuffer> stems;
  AudioBuffer mix;
};

struct MixExample {
  MixRecord record;
  std::vector<console::ChannelParams> hidden; // diagnostics only
};

struct Split {
  std::vector<std::string> train, val, test;
  nlohmann::ordered_json to_json() const;
  static Split from_json(const nlohmann::ordered_json &j);
};

/// 80/10/10 by song, at least one song held out in val and test once there
/// are three songs. Order drawn from the seed.
Split split_songs(const std::vector<std::string> &names, std::uint64_t seed);

/// Each song mixes its own stems with hidden params drawn per task.
std::vector<MixExample> gen_mix_dataset(const std::vector<std::vector<AudioBuffer>> &song_stems,
                                        ctrl::Task task, std::uint64_t seed);

/// Synthetic stems for `n_songs` songs, then gen_mix_dataset.
std::vector<MixExample> synth_mix_dataset(std::size_t n_songs, std::size_t stems_per_song,
                                          double duration_s, ctrl::Task task, std::uint64_t seed);

/// songs/<name>/stems/NN_<kind>.wav, songs/<name>/mix.wav,
/// songs/<name>/hidden_params.json, split.json, dataset.json.
void write_mix_dataset(const std::filesystem::path &dir, const std::vector<MixExample> &songs,
                       const Split &split, const nlohmann::ordered_json &info);

/// Reads stems and mixes only; hidden params stay on disk.
struct MixDataset {
  std::vector<MixRecord> train, val, test;
  Split split;
  nlohmann::ordered_json info;
};
MixDataset load_mix_dataset(const std::filesystem::path &dir);

/// Diagnostics: the hidden params of one song.
std::vector<console::ChannelParams> load_hidden_params(const std::filesystem::path &dir,
                                                       const std::string &song);

/// The same random excerpt of every stem and of the mix.
MixRecord sample_record_patch(const MixRecord &song, double patch_s, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Mix training

struct MixTrainOptions {
  ctrl::Task task = ctrl::Task::basic;
  std::size_t epochs = 1;
  EpochSpec epoch = EpochSpec::mix(ctrl::Task::basic);
  std::size_t val_patches_per_song = 2;
  double lr = 3e-4;
  std::size_t patience = 200;
  std::uint64_t seed = 0;
  bool train_tcn = false; // full task: the TCN stays frozen unless set
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> curve_csv;
  std::function<void(const CurvePoint &)> on_epoch;
};

struct MixTrainResult {
  ctrl::Controller best;
  std::optional<tcn::Tcn> best_tcn;
  std::vector<CurvePoint> curve; // epoch 0 is the untrained model
  double best_val = 0.0;
};

/// `net` is required for the full task.
MixTrainResult train_mix(ctrl::Controller model, const std::vector<MixRecord> &train_songs,
                         const std::vector<MixRecord> &val_songs, const MixTrainOptions &opt,
                         std::optional<tcn::Tcn> net = std::nullopt);

/// Mean stereo loss of the model over fixed patches.
double mix_loss(const ctrl::Controller &model, const std::vector<MixRecord> &patches,
                tcn::Tcn *net = nullptr);

// ---------------------------------------------------------------------------
// Direct fit

struct FitOptions {
  std::size_t max_steps = 2000;
  double gain_lr = 0.05;
  double pan_lr = 0.005;
  double init_pan = 0.4;
  /// Steps without a new best loss before a plateau is declared. A plateau
  /// first tries mirroring single pans (p -> 1 - p), then halves both rates.
  std::size_t patience = 40;
  /// Stop once the rates have been halved this many times.
  std::size_t max_halvings = 6;
  /// Stop once loss < stop_ratio * initial neutral loss (0 disables).
  double stop_ratio = 0.0;
};

struct FitResult {
  std::vector<console::ChannelParams> params;
  double neutral_loss = 0.0; // every track at 0 dB, center
  double final_loss = 0.0;
  std::size_t steps = 0;
  std::size_t flips = 0;
  std::vector<double> losses;
};

/// Adam on per-track (gain_db, pan) through the differentiable basic
/// channel and the stereo loss.
FitResult direct_param_fit(const ctrl::MixSession &session, const FitOptions &opt = {});

// ---------------------------------------------------------------------------
// Evaluation

struct SongMetrics {
  std::string name;
  double mae = 0.0;
  double mr_sum = 0.0;
  double mr_diff = 0.0;
  double total = 0.0;
};

struct Metrics {
  std::vector<SongMetrics> songs;
  SongMetrics mean; // name "mean"
  nlohmann::ordered_json to_json() const;
};

SongMetrics compare(const std::string &name, const AudioBuffer &pred, const AudioBuffer &target);

using Mixer = std::function<AudioBuffer(const MixRecord &)>;
Metrics evaluate(const std::vector<MixRecord> &songs, const Mixer &mixer);

/// L = R = sum of stems.
AudioBuffer mono_mix(const std::vector<AudioBuffer> &stems);
Mixer mono_mixer();
/// Controller mix, inference mode. Full task crops the target in compare().
Mixer controller_mixer(const ctrl::Controller &model, tcn::Tcn *net = nullptr);

/// Writes JSON with a trailing newline.
void write_json(const std::filesystem::path &path, const nlohmann::ordered_json &j);

} // namespace dmc::train
