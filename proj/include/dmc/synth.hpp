#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmc/audio.hpp"

namespace dmc::synth {

enum class StemKind { kick, snare, bass, pad, hats, lead };

std::string to_string(StemKind k);

/// Band-limited pseudo-instrument, mono, peak-normalized to `peak`.
/// Deterministic for a given (kind, seed).
AudioBuffer make_stem(StemKind kind, double duration_s, std::uint64_t seed,
                      int sample_rate = kDefaultSampleRate, double peak = 0.5);

/// The first `count` kinds in a fixed rotation (kick, snare, bass, pad, hats,
/// lead, kick, ...), each with its own sub-seed.
std::vector<AudioBuffer> make_song_stems(std::size_t count, double duration_s,
                                         std::uint64_t seed,
                                         int sample_rate = kDefaultSampleRate);

StemKind stem_kind_for_index(std::size_t i);

} // namespace dmc::synth
