#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "acunet/errors.h"

namespace acunet {

// STFT / filterbank constants. The frame rate and filterbank geometry are
// what the downstream annotations and the conditioning network assume;
// window type, padding mode and log compression are project conventions and
// live here so they are auditable in one place.
namespace audio_config {
inline constexpr int kSampleRate = 22050;
inline constexpr int kFrameRate = 20;               // frames per second
inline constexpr int kWindowSize = 2048;            // Hann, periodic convention
inline constexpr int kNumFftBins = kWindowSize / 2 + 1;  // 1025 non-negative bins
inline constexpr int kNumBands = 78;                // log-frequency bins
inline constexpr double kMinFreq = 60.0;            // Hz
inline constexpr double kMaxFreq = 6000.0;          // Hz
inline constexpr int kExcerptFrames = 40;           // conditioning window length
inline constexpr double kHopSamples =
    static_cast<double>(kSampleRate) / kFrameRate;  // 1102.5, frame centers rounded
}  // namespace audio_config

struct AudioSignal {
    std::vector<double> samples;  // mono, in [-1, 1]
    int sample_rate = audio_config::kSampleRate;
};

struct Spectrogram {
    int bins = audio_config::kNumBands;
    int frames = 0;
    std::vector<double> values;  // [bins x frames], row-major, non-negative
    int frame_rate = audio_config::kFrameRate;

    double at(int bin, int frame) const {
        return values[static_cast<size_t>(bin) * frames + frame];
    }
};

struct AudioExcerpt {
    std::vector<double> values;  // [78 x 40], row-major
    int end_frame = 0;
};

// Number of STFT frames produced for a signal of the given length: frame t
// exists while its center round(t * 1102.5) is a valid sample index.
int frame_count(int64_t num_samples);

// Center sample of frame t.
int64_t frame_center(int frame);

// Magnitude STFT, one row of 1025 bins per frame. Hann window of 2048
// samples centered on the frame, reflect-padded at the signal edges.
std::vector<std::vector<double>> stft_magnitude(const AudioSignal& signal);

// 78 triangular filters with geometrically spaced centers covering
// [60, 6000] Hz. Each filter's weight on an FFT bin is the triangle's
// integral over that bin's frequency interval, and rows are normalized to
// sum to 1. weights are [78 x 1025] row-major.
struct LogFilterbank {
    std::vector<double> weights;
    std::vector<double> centers_hz;  // 78 ascending center frequencies
};
LogFilterbank build_log_filterbank();

// log(1 + filterbank . magnitudes) per frame.
Spectrogram spectrogram(const AudioSignal& signal);

// Frames [end_frame-39, end_frame]; indices before the piece start are
// zero-filled on the left.
AudioExcerpt excerpt(const Spectrogram& spec, int end_frame);

// In-place radix-2 FFT used by the STFT; exposed for tests.
void fft_inplace(std::vector<double>& re, std::vector<double>& im);

}  // namespace acunet
