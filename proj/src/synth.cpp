#include "dmc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "dmc/rng.hpp"

namespace dmc::synth {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// one-pole lowpass, in place
void lowpass(std::vector<double> &x, double cutoff_hz, int sr) {
  const double a = std::exp(-kTwoPi * cutoff_hz / sr);
  double s = 0.0;
  for (double &v : x) {
    s = (1.0 - a) * v + a * s;
    v = s;
  }
}

void highpass(std::vector<double> &x, double cutoff_hz, int sr) {
  std::vector<double> lp = x;
  lowpass(lp, cutoff_hz, sr);
  for (std::size_t i = 0; i < x.size(); ++i)
    x[i] -= lp[i];
}

// sum of the first harmonics of a sawtooth, below Nyquist
double saw(double phase, double f0, int sr) {
  double s = 0.0;
  for (int h = 1; h <= 12 && h * f0 < 0.45 * sr; ++h)
    s += std::sin(h * phase) / h;
  return s;
}

double midi_hz(double note) { return 440.0 * std::pow(2.0, (note - 69.0) / 12.0); }

// onsets on a 16th-note grid at `bpm`, each kept with probability `density`
std::vector<std::size_t> onsets(Rng &rng, std::size_t len, int sr, double bpm, double density,
                                std::size_t subdivide) {
  const double step = 60.0 / bpm / static_cast<double>(subdivide) * sr;
  std::vector<std::size_t> out;
  for (double t = uniform(rng, 0.0, step); t < static_cast<double>(len); t += step)
    if (uniform(rng) < density)
      out.push_back(static_cast<std::size_t>(t));
  if (out.empty())
    out.push_back(len / 4);
  return out;
}

std::vector<double> kick(Rng &rng, std::size_t len, int sr, double bpm) {
  std::vector<double> x(len, 0.0);
  const double f_hi = uniform(rng, 120.0, 200.0), f_lo = uniform(rng, 40.0, 60.0);
  const double decay = uniform(rng, 0.15, 0.35);
  for (std::size_t on : onsets(rng, len, sr, bpm, 0.55, 2)) {
    double phase = 0.0;
    for (std::size_t n = on; n < len; ++n) {
      const double t = static_cast<double>(n - on) / sr;
      if (t > 4 * decay)
        break;
      const double f = f_lo + (f_hi - f_lo) * std::exp(-t / 0.03);
      phase += kTwoPi * f / sr;
      x[n] += std::exp(-t / decay) * std::sin(phase);
    }
  }
  return x;
}

std::vector<double> snare(Rng &rng, std::size_t len, int sr, double bpm) {
  std::vector<double> noise(len), tone(len, 0.0), env(len, 0.0);
  for (double &v : noise)
    v = uniform(rng, -1.0, 1.0);
  highpass(noise, uniform(rng, 800.0, 2000.0), sr);
  lowpass(noise, uniform(rng, 6000.0, 10000.0), sr);
  const double decay = uniform(rng, 0.08, 0.2);
  const double f = uniform(rng, 160.0, 240.0);
  for (std::size_t on : onsets(rng, len, sr, bpm, 0.35, 2))
    for (std::size_t n = on; n < len; ++n) {
      const double t = static_cast<double>(n - on) / sr;
      if (t > 5 * decay)
        break;
      env[n] += std::exp(-t / decay);
      tone[n] += 0.5 * std::exp(-t / 0.05) * std::sin(kTwoPi * f * t);
    }
  std::vector<double> x(len);
  for (std::size_t n = 0; n < len; ++n)
    x[n] = env[n] * noise[n] + tone[n];
  return x;
}

std::vector<double> hats(Rng &rng, std::size_t len, int sr, double bpm) {
  std::vector<double> noise(len), env(len, 0.0);
  for (double &v : noise)
    v = uniform(rng, -1.0, 1.0);
  highpass(noise, uniform(rng, 5000.0, 8000.0), sr);
  const double decay = uniform(rng, 0.02, 0.06);
  for (std::size_t on : onsets(rng, len, sr, bpm, 0.8, 4))
    for (std::size_t n = on; n < len; ++n) {
      const double t = static_cast<double>(n - on) / sr;
      if (t > 6 * decay)
        break;
      env[n] += std::exp(-t / decay);
    }
  std::vector<double> x(len);
  for (std::size_t n = 0; n < len; ++n)
    x[n] = env[n] * noise[n];
  return x;
}

// monophonic line of notes with a short attack and exponential release
std::vector<double> line(Rng &rng, std::size_t len, int sr, double bpm, double base_note,
                         int spread, double note_len_beats, double cutoff, bool harmonic) {
  std::vector<double> x(len, 0.0);
  const double beat = 60.0 / bpm * sr;
  const std::size_t note_len = static_cast<std::size_t>(note_len_beats * beat);
  const int scale[] = {0, 2, 3, 5, 7, 8, 10};
  double phase = 0.0;
  for (std::size_t start = 0; start < len; start += note_len) {
    const int deg = static_cast<int>(uniform_index(rng, 7));
    const int oct = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(spread)));
    const double f = midi_hz(base_note + scale[deg] + 12 * oct);
    const double amp = uniform(rng, 0.6, 1.0);
    for (std::size_t n = start; n < std::min(len, start + note_len); ++n) {
      const double t = static_cast<double>(n - start) / sr;
      const double env = std::min(1.0, t / 0.01) * std::exp(-t / (0.6 * note_len / sr));
      phase += kTwoPi * f / sr;
      x[n] = amp * env * (harmonic ? saw(phase, f, sr) : std::sin(phase));
    }
  }
  lowpass(x, cutoff, sr);
  return x;
}

std::vector<double> pad(Rng &rng, std::size_t len, int sr, double bpm) {
  std::vector<double> x(len, 0.0);
  const double beat = 60.0 / bpm * sr;
  const std::size_t chord_len = static_cast<std::size_t>(4 * beat);
  const double root_base = uniform(rng, 48.0, 55.0);
  for (std::size_t start = 0; start < len; start += chord_len) {
    const double root = root_base + static_cast<double>(uniform_index(rng, 5));
    const double notes[] = {root, root + 3.0 + static_cast<double>(uniform_index(rng, 2)),
                            root + 7.0};
    for (double note : notes) {
      const double f = midi_hz(note);
      const double detune = uniform(rng, 0.998, 1.002);
      const double ph0 = uniform(rng, 0.0, kTwoPi);
      for (std::size_t n = start; n < std::min(len, start + chord_len); ++n) {
        const double t = static_cast<double>(n - start) / sr;
        const double env = std::min(1.0, t / 0.2);
        x[n] += env * (std::sin(kTwoPi * f * t + ph0) + 0.4 * std::sin(kTwoPi * 2 * f * detune * t));
      }
    }
  }
  lowpass(x, 3000.0, sr);
  return x;
}

} // namespace

std::string to_string(StemKind k) {
  switch (k) {
  case StemKind::kick: return "kick";
  case StemKind::snare: return "snare";
  case StemKind::bass: return "bass";
  case StemKind::pad: return "pad";
  case StemKind::hats: return "hats";
  case StemKind::lead: return "lead";
  }
  return "stem";
}

StemKind stem_kind_for_index(std::size_t i) {
  constexpr StemKind order[] = {StemKind::kick, StemKind::snare, StemKind::bass,
                                StemKind::pad,  StemKind::hats,  StemKind::lead};
  return order[i % 6];
}

AudioBuffer make_stem(StemKind kind, double duration_s, std::uint64_t seed, int sample_rate,
                      double peak) {
  if (!(duration_s > 0.0))
    throw std::invalid_argument("make_stem: duration must be positive");
  const std::size_t len = patch_frames(duration_s, sample_rate);
  Rng rng(derive_seed(seed, "stem." + to_string(kind)));
  const double bpm = uniform(rng, 90.0, 130.0);
  std::vector<double> x;
  switch (kind) {
  case StemKind::kick: x = kick(rng, len, sample_rate, bpm); break;
  case StemKind::snare: x = snare(rng, len, sample_rate, bpm); break;
  case StemKind::hats: x = hats(rng, len, sample_rate, bpm); break;
  case StemKind::bass: x = line(rng, len, sample_rate, bpm, 33.0, 2, 0.5, 900.0, true); break;
  case StemKind::lead: x = line(rng, len, sample_rate, bpm, 67.0, 2, 0.25, 5000.0, true); break;
  case StemKind::pad: x = pad(rng, len, sample_rate, bpm); break;
  }
  double m = 0.0;
  for (double v : x)
    m = std::max(m, std::abs(v));
  if (m > 0.0)
    for (double &v : x)
      v *= peak / m;
  return AudioBuffer::mono(std::move(x), sample_rate);
}

std::vector<AudioBuffer> make_song_stems(std::size_t count, double duration_s, std::uint64_t seed,
                                         int sample_rate) {
  std::vector<AudioBuffer> out;
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(make_stem(stem_kind_for_index(i), duration_s, derive_seed(seed, "stem" + std::to_string(i)),
                            sample_rate));
  return out;
}

} // namespace dmc::synth
