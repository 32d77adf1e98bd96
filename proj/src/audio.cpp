#include "acunet/audio.h"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace acunet {

using namespace audio_config;

int frame_count(int64_t num_samples) {
    if (num_samples <= 0) return 0;
    int t = 0;
    while (frame_center(t) < num_samples) ++t;
    return t;
}

int64_t frame_center(int frame) {
    return static_cast<int64_t>(std::llround(static_cast<double>(frame) * kHopSamples));
}

void fft_inplace(std::vector<double>& re, std::vector<double>& im) {
    const size_t n = re.size();
    // bit-reversal permutation
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) {
            std::swap(re[i], re[j]);
            std::swap(im[i], im[j]);
        }
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
        const double wr = std::cos(ang), wi = std::sin(ang);
        for (size_t i = 0; i < n; i += len) {
            double cr = 1.0, ci = 0.0;
            for (size_t j = 0; j < len / 2; ++j) {
                const size_t a = i + j, b = i + j + len / 2;
                const double xr = re[b] * cr - im[b] * ci;
                const double xi = re[b] * ci + im[b] * cr;
                re[b] = re[a] - xr;
                im[b] = im[a] - xi;
                re[a] += xr;
                im[a] += xi;
                const double ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
        }
    }
}

namespace {

// Reflect an out-of-range index back into [0, n); the edge sample is not
// repeated (mirror about the first/last sample).
int64_t reflect_index(int64_t i, int64_t n) {
    if (n == 1) return 0;
    const int64_t period = 2 * (n - 1);
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

std::vector<double> hann_window() {
    std::vector<double> w(static_cast<size_t>(kWindowSize));
    for (int i = 0; i < kWindowSize; ++i) {
        w[static_cast<size_t>(i)] =
            0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / kWindowSize));
    }
    return w;
}

}  // namespace

std::vector<std::vector<double>> stft_magnitude(const AudioSignal& signal) {
    if (signal.sample_rate != kSampleRate) {
        throw ArgumentError("stft: sample rate must be " + std::to_string(kSampleRate) +
                            " Hz, got " + std::to_string(signal.sample_rate));
    }
    const int64_t n = static_cast<int64_t>(signal.samples.size());
    if (n == 0) throw ArgumentError("stft: empty signal");

    static const std::vector<double> window = hann_window();
    const int T = frame_count(n);
    std::vector<std::vector<double>> mags(static_cast<size_t>(T));
    std::vector<double> re(static_cast<size_t>(kWindowSize)), im(static_cast<size_t>(kWindowSize));
    for (int t = 0; t < T; ++t) {
        const int64_t center = frame_center(t);
        const int64_t start = center - kWindowSize / 2;
        for (int i = 0; i < kWindowSize; ++i) {
            const int64_t idx = reflect_index(start + i, n);
            re[static_cast<size_t>(i)] =
                signal.samples[static_cast<size_t>(idx)] * window[static_cast<size_t>(i)];
            im[static_cast<size_t>(i)] = 0.0;
        }
        fft_inplace(re, im);
        std::vector<double> row(static_cast<size_t>(kNumFftBins));
        for (int k = 0; k < kNumFftBins; ++k) {
            row[static_cast<size_t>(k)] = std::hypot(re[static_cast<size_t>(k)],
                                                     im[static_cast<size_t>(k)]);
        }
        mags[static_cast<size_t>(t)] = std::move(row);
    }
    return mags;
}

namespace {

// Integral of the triangle (l, c, r) over the interval [a, b].
double triangle_integral(double l, double c, double r, double a, double b) {
    auto ramp_up = [&](double x0, double x1) {
        // integral of (f - l)/(c - l) over [x0, x1] clipped to [l, c]
        x0 = std::max(x0, l);
        x1 = std::min(x1, c);
        if (x1 <= x0) return 0.0;
        return ((x1 - l) * (x1 - l) - (x0 - l) * (x0 - l)) / (2.0 * (c - l));
    };
    auto ramp_down = [&](double x0, double x1) {
        x0 = std::max(x0, c);
        x1 = std::min(x1, r);
        if (x1 <= x0) return 0.0;
        return ((r - x0) * (r - x0) - (r - x1) * (r - x1)) / (2.0 * (r - c));
    };
    return ramp_up(a, b) + ramp_down(a, b);
}

}  // namespace

LogFilterbank build_log_filterbank() {
    // 80 geometric points from 60 to 6000 Hz; filter i spans
    // (p[i-1], p[i], p[i+1]) so all support stays inside the range.
    const int npts = kNumBands + 2;
    std::vector<double> pts(static_cast<size_t>(npts));
    const double ratio = std::log(kMaxFreq / kMinFreq) / (npts - 1);
    for (int i = 0; i < npts; ++i) {
        pts[static_cast<size_t>(i)] = kMinFreq * std::exp(ratio * i);
    }

    const double bin_hz = static_cast<double>(kSampleRate) / kWindowSize;
    LogFilterbank fb;
    fb.weights.assign(static_cast<size_t>(kNumBands) * kNumFftBins, 0.0);
    fb.centers_hz.assign(static_cast<size_t>(kNumBands), 0.0);
    for (int f = 0; f < kNumBands; ++f) {
        const double l = pts[static_cast<size_t>(f)];
        const double c = pts[static_cast<size_t>(f) + 1];
        const double r = pts[static_cast<size_t>(f) + 2];
        fb.centers_hz[static_cast<size_t>(f)] = c;
        double* row = fb.weights.data() + static_cast<size_t>(f) * kNumFftBins;
        double total = 0;
        for (int k = 0; k < kNumFftBins; ++k) {
            const double fk = k * bin_hz;
            const double w = triangle_integral(l, c, r, fk - bin_hz / 2, fk + bin_hz / 2);
            row[k] = w;
            total += w;
        }
        for (int k = 0; k < kNumFftBins; ++k) row[k] /= total;
    }
    return fb;
}

Spectrogram spectrogram(const AudioSignal& signal) {
    static const LogFilterbank fb = build_log_filterbank();
    const auto mags = stft_magnitude(signal);
    const int T = static_cast<int>(mags.size());

    Spectrogram out;
    out.frames = T;
    out.values.assign(static_cast<size_t>(kNumBands) * T, 0.0);
    for (int t = 0; t < T; ++t) {
        const double* m = mags[static_cast<size_t>(t)].data();
        for (int f = 0; f < kNumBands; ++f) {
            const double* row = fb.weights.data() + static_cast<size_t>(f) * kNumFftBins;
            double s = 0;
            for (int k = 0; k < kNumFftBins; ++k) s += row[k] * m[k];
            out.values[static_cast<size_t>(f) * T + t] = std::log1p(s);
        }
    }
    return out;
}

AudioExcerpt excerpt(const Spectrogram& spec, int end_frame) {
    if (end_frame < 0 || end_frame >= spec.frames) {
        throw IndexError("excerpt: end_frame " + std::to_string(end_frame) +
                         " out of range [0, " + std::to_string(spec.frames) + ")");
    }
    AudioExcerpt ex;
    ex.end_frame = end_frame;
    ex.values.assign(static_cast<size_t>(kNumBands) * kExcerptFrames, 0.0);
    for (int f = 0; f < kNumBands; ++f) {
        for (int j = 0; j < kExcerptFrames; ++j) {
            const int t = end_frame - (kExcerptFrames - 1) + j;
            if (t < 0) continue;
            ex.values[static_cast<size_t>(f) * kExcerptFrames + j] = spec.at(f, t);
        }
    }
    return ex;
}

}  // namespace acunet
