#include "dmc/audio.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dmc/rng.hpp"

namespace dmc {

AudioBuffer::AudioBuffer(std::size_t channels, std::size_t frames, int sample_rate)
    : channels_(channels), frames_(frames), sample_rate_(sample_rate),
      data_(channels * frames, 0.0) {
  if (channels == 0)
    throw std::invalid_argument("AudioBuffer: at least one channel required");
  if (sample_rate <= 0)
    throw std::invalid_argument("AudioBuffer: sample rate must be positive");
}

AudioBuffer::AudioBuffer(std::vector<std::vector<double>> channels, int sample_rate)
    : AudioBuffer(channels.size(), channels.empty() ? 0 : channels.front().size(),
                  sample_rate) {
  for (std::size_t c = 0; c < channels.size(); ++c) {
    if (channels[c].size() != frames_)
      throw std::invalid_argument("AudioBuffer: ragged channel lengths");
    std::copy(channels[c].begin(), channels[c].end(), data_.begin() + c * frames_);
  }
  check_finite();
}

AudioBuffer AudioBuffer::mono(std::vector<double> samples, int sample_rate) {
  AudioBuffer b(1, 0, sample_rate);
  b.frames_ = samples.size();
  b.data_ = std::move(samples);
  b.check_finite();
  return b;
}

AudioBuffer AudioBuffer::stereo(std::vector<double> left, std::vector<double> right,
                                int sample_rate) {
  std::vector<std::vector<double>> ch;
  ch.push_back(std::move(left));
  ch.push_back(std::move(right));
  return AudioBuffer(std::move(ch), sample_rate);
}

std::span<double> AudioBuffer::channel(std::size_t c) {
  if (c >= channels_)
    throw std::out_of_range("AudioBuffer: channel index");
  return {data_.data() + c * frames_, frames_};
}

std::span<const double> AudioBuffer::channel(std::size_t c) const {
  if (c >= channels_)
    throw std::out_of_range("AudioBuffer: channel index");
  return {data_.data() + c * frames_, frames_};
}

void AudioBuffer::check_finite() const {
  for (double v : data_)
    if (!std::isfinite(v))
      throw std::domain_error("AudioBuffer: non-finite sample");
}

AudioBuffer AudioBuffer::slice(std::size_t start, std::size_t count) const {
  if (start + count > frames_)
    throw std::out_of_range("AudioBuffer::slice past end");
  AudioBuffer out(channels_, count, sample_rate_);
  for (std::size_t c = 0; c < channels_; ++c) {
    auto src = channel(c).subspan(start, count);
    std::copy(src.begin(), src.end(), out.channel(c).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// WAV

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint32_t le32(const unsigned char *p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t le16(const unsigned char *p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put16(std::vector<unsigned char> &out, std::uint16_t v) {
  out.push_back(v & 0xff);
  out.push_back(v >> 8);
}

void put32(std::vector<unsigned char> &out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back((v >> (8 * i)) & 0xff);
}

struct Format {
  std::uint16_t tag = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t bits = 0;
};

std::int64_t quantize(double x, int bits) {
  const double full = std::ldexp(1.0, bits - 1);
  const double clipped = std::clamp(x, -1.0, 1.0);
  // std::round is half-away-from-zero
  const auto q = static_cast<std::int64_t>(std::round(clipped * full));
  return std::clamp<std::int64_t>(q, -static_cast<std::int64_t>(full),
                                  static_cast<std::int64_t>(full) - 1);
}

} // namespace

AudioBuffer read_wav(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw WavError(WavErrc::missing_file, "cannot open WAV file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  const std::string where = " (" + path.string() + ")";
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw WavError(WavErrc::malformed_header, "not a RIFF/WAVE file" + where);

  Format fmt;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char *chunk = bytes.data() + pos;
    const std::uint32_t size = le32(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || body + size > bytes.size())
        throw WavError(WavErrc::malformed_header, "short fmt chunk" + where);
      const unsigned char *f = bytes.data() + body;
      fmt.tag = le16(f);
      fmt.channels = le16(f + 2);
      fmt.sample_rate = le32(f + 4);
      fmt.bits = le16(f + 14);
      if (fmt.tag == kFormatExtensible) {
        if (size < 40)
          throw WavError(WavErrc::malformed_header, "short extensible fmt chunk" + where);
        fmt.tag = le16(f + 24); // first two bytes of the sub-format GUID
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt)
        throw WavError(WavErrc::malformed_header, "data chunk before fmt chunk" + where);
      if (fmt.channels == 0 || fmt.sample_rate == 0)
        throw WavError(WavErrc::malformed_header, "zero channels or sample rate" + where);
      const bool pcm = fmt.tag == kFormatPcm && (fmt.bits == 16 || fmt.bits == 24);
      const bool flt = fmt.tag == kFormatFloat && fmt.bits == 32;
      if (!pcm && !flt)
        throw WavError(WavErrc::unsupported_format,
                       "unsupported WAV encoding (format " + std::to_string(fmt.tag) +
                           ", " + std::to_string(fmt.bits) + " bits)" + where);
      if (body + size > bytes.size())
        throw WavError(WavErrc::truncated_data, "data chunk truncated" + where);
      const std::size_t width = fmt.bits / 8;
      const std::size_t frame_bytes = width * fmt.channels;
      if (size % frame_bytes != 0)
        throw WavError(WavErrc::truncated_data, "partial sample frame" + where);
      const std::size_t frames = size / frame_bytes;
      AudioBuffer out(fmt.channels, frames, static_cast<int>(fmt.sample_rate));
      const unsigned char *p = bytes.data() + body;
      for (std::size_t n = 0; n < frames; ++n) {
        for (std::size_t c = 0; c < fmt.channels; ++c, p += width) {
          double v;
          if (flt) {
            v = static_cast<double>(std::bit_cast<float>(le32(p)));
          } else if (fmt.bits == 16) {
            v = static_cast<std::int16_t>(le16(p)) / 32768.0;
          } else {
            std::int32_t s = p[0] | (p[1] << 8) | (p[2] << 16);
            if (s & 0x800000)
              s -= 0x1000000;
            v = s / 8388608.0;
          }
          out.at(c, n) = v;
        }
      }
      out.check_finite();
      return out;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt)
    throw WavError(WavErrc::malformed_header, "missing fmt chunk" + where);
  throw WavError(WavErrc::truncated_data, "missing data chunk" + where);
}

void write_wav(const AudioBuffer &buffer, const std::filesystem::path &path,
               BitDepth depth) {
  buffer.check_finite();
  const int bits = depth == BitDepth::pcm16 ? 16 : depth == BitDepth::pcm24 ? 24 : 32;
  const std::uint16_t tag = depth == BitDepth::float32 ? kFormatFloat : kFormatPcm;
  const std::size_t width = bits / 8;
  const std::size_t nch = buffer.channels();
  const std::size_t data_bytes = buffer.frames() * nch * width;
  if (data_bytes > 0xFFFFFFF0ull)
    throw WavError(WavErrc::unwritable_path, "buffer too large for RIFF");

  std::vector<unsigned char> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put32(out, static_cast<std::uint32_t>(36 + data_bytes));
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put32(out, 16);
  put16(out, tag);
  put16(out, static_cast<std::uint16_t>(nch));
  put32(out, static_cast<std::uint32_t>(buffer.sample_rate()));
  put32(out, static_cast<std::uint32_t>(buffer.sample_rate() * nch * width));
  put16(out, static_cast<std::uint16_t>(nch * width));
  put16(out, static_cast<std::uint16_t>(bits));
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put32(out, static_cast<std::uint32_t>(data_bytes));
  for (std::size_t n = 0; n < buffer.frames(); ++n) {
    for (std::size_t c = 0; c < nch; ++c) {
      const double x = buffer.at(c, n);
      if (depth == BitDepth::float32) {
        put32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
      } else {
        const auto q = static_cast<std::uint32_t>(quantize(x, bits));
        for (std::size_t b = 0; b < width; ++b)
          out.push_back((q >> (8 * b)) & 0xff);
      }
    }
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f)
    throw WavError(WavErrc::unwritable_path, "cannot write WAV file: " + path.string());
  f.write(reinterpret_cast<const char *>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f)
    throw WavError(WavErrc::unwritable_path, "write failed: " + path.string());
}

// ---------------------------------------------------------------------------

std::size_t patch_frames(double duration_s, int sample_rate) {
  if (!(duration_s > 0.0))
    throw std::invalid_argument("patch duration must be positive");
  return static_cast<std::size_t>(std::llround(duration_s * sample_rate));
}

std::size_t patch_offset(std::size_t source_frames, std::size_t frames, std::uint64_t seed) {
  if (frames > source_frames)
    throw std::invalid_argument("source shorter than requested patch (" +
                                std::to_string(source_frames) + " < " +
                                std::to_string(frames) + " frames)");
  Rng rng(seed);
  return std::uniform_int_distribution<std::size_t>(0, source_frames - frames)(rng);
}

AudioBuffer sample_patch(const AudioBuffer &buffer, const PatchSpec &spec) {
  const std::size_t n = patch_frames(spec.duration_s, buffer.sample_rate());
  return buffer.slice(patch_offset(buffer.frames(), n, spec.seed), n);
}

double db_to_linear(double db) { return std::pow(10.0, db / 20.0); }

double linear_to_db(double amplitude) {
  if (!(amplitude > 0.0))
    throw std::domain_error("linear_to_db: amplitude must be positive");
  return 20.0 * std::log10(amplitude);
}

} // namespace dmc
