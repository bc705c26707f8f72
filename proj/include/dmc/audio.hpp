#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dmc {

inline constexpr int kDefaultSampleRate = 44100;

/// Multichannel float64 sample matrix. Channels are stored contiguously,
/// one after another.
class AudioBuffer {
public:
  AudioBuffer() = default;
  AudioBuffer(std::size_t channels, std::size_t frames, int sample_rate);
  AudioBuffer(std::vector<std::vector<double>> channels, int sample_rate);

  static AudioBuffer mono(std::vector<double> samples, int sample_rate);
  static AudioBuffer stereo(std::vector<double> left, std::vector<double> right,
                            int sample_rate);

  std::size_t channels() const { return channels_; }
  std::size_t frames() const { return frames_; }
  int sample_rate() const { return sample_rate_; }
  double duration_s() const { return static_cast<double>(frames_) / sample_rate_; }

  std::span<double> channel(std::size_t c);
  std::span<const double> channel(std::size_t c) const;

  double &at(std::size_t c, std::size_t n) { return data_[c * frames_ + n]; }
  double at(std::size_t c, std::size_t n) const { return data_[c * frames_ + n]; }

  std::span<const double> data() const { return data_; }

  /// Throws std::domain_error if any sample is NaN or infinite.
  void check_finite() const;

  /// Frames [start, start + count) of every channel.
  AudioBuffer slice(std::size_t start, std::size_t count) const;

  friend bool operator==(const AudioBuffer &, const AudioBuffer &) = default;

private:
  std::size_t channels_ = 1;
  std::size_t frames_ = 0;
  int sample_rate_ = kDefaultSampleRate;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// WAV I/O

enum class WavErrc {
  missing_file,
  malformed_header,
  unsupported_format,
  truncated_data,
  unwritable_path,
};

class WavError : public std::runtime_error {
public:
  WavError(WavErrc code, const std::string &what)
      : std::runtime_error(what), code_(code) {}
  WavErrc code() const { return code_; }

private:
  WavErrc code_;
};

enum class BitDepth { pcm16, pcm24, float32 };

/// Reads PCM 16/24-bit or IEEE float-32 RIFF/WAVE. Integer samples are
/// divided by 2^(bits-1).
AudioBuffer read_wav(const std::filesystem::path &path);

/// Integer depths clip to [-1, 1] and round half away from zero. Float32
/// stores the samples unclipped.
void write_wav(const AudioBuffer &buffer, const std::filesystem::path &path,
               BitDepth depth = BitDepth::float32);

// ---------------------------------------------------------------------------
// Patches and scalar conversions

struct PatchSpec {
  double duration_s = 1.5;
  std::uint64_t seed = 0;
};

std::size_t patch_frames(double duration_s, int sample_rate);

/// Uniform-random contiguous excerpt of round(duration_s * sample_rate) frames.
AudioBuffer sample_patch(const AudioBuffer &buffer, const PatchSpec &spec);

/// Offset chosen by sample_patch for a source of `source_frames` frames.
std::size_t patch_offset(std::size_t source_frames, std::size_t patch_frames,
                         std::uint64_t seed);

double db_to_linear(double db);
double linear_to_db(double amplitude);

} // namespace dmc
