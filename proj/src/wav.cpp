#include "acunet/wav.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace acunet {

namespace {

uint32_t read_u32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t read_u16(const uint8_t* p) {
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::vector<uint8_t>& v, uint32_t x) {
    v.push_back(static_cast<uint8_t>(x & 0xff));
    v.push_back(static_cast<uint8_t>((x >> 8) & 0xff));
    v.push_back(static_cast<uint8_t>((x >> 16) & 0xff));
    v.push_back(static_cast<uint8_t>((x >> 24) & 0xff));
}

void put_u16(std::vector<uint8_t>& v, uint16_t x) {
    v.push_back(static_cast<uint8_t>(x & 0xff));
    v.push_back(static_cast<uint8_t>((x >> 8) & 0xff));
}

}  // namespace

AudioSignal read_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
        std::memcmp(buf.data() + 8, "WAVE", 4) != 0) {
        throw LoadError(path + ": not a RIFF/WAVE file");
    }

    uint16_t format = 0, channels = 0, bits = 0;
    uint32_t rate = 0;
    size_t data_off = 0, data_len = 0;
    size_t pos = 12;
    while (pos + 8 <= buf.size()) {
        const uint32_t chunk_len = read_u32(buf.data() + pos + 4);
        if (std::memcmp(buf.data() + pos, "fmt ", 4) == 0) {
            if (pos + 8 + 16 > buf.size()) throw LoadError(path + ": truncated fmt chunk");
            const uint8_t* p = buf.data() + pos + 8;
            format = read_u16(p);
            channels = read_u16(p + 2);
            rate = read_u32(p + 4);
            bits = read_u16(p + 14);
        } else if (std::memcmp(buf.data() + pos, "data", 4) == 0) {
            data_off = pos + 8;
            data_len = chunk_len;
        }
        pos += 8 + chunk_len + (chunk_len & 1);
    }
    if (data_off == 0) throw LoadError(path + ": no data chunk");
    if (data_off + data_len > buf.size()) throw LoadError(path + ": truncated data chunk");
    if (channels != 1 && channels != 2) {
        throw LoadError(path + ": unsupported channel count " + std::to_string(channels));
    }
    if (rate != static_cast<uint32_t>(audio_config::kSampleRate)) {
        throw LoadError(path + ": sample rate " + std::to_string(rate) + " Hz, expected " +
                        std::to_string(audio_config::kSampleRate) + " (no resampling)");
    }

    AudioSignal out;
    out.sample_rate = static_cast<int>(rate);
    const uint8_t* d = buf.data() + data_off;
    if (format == 1 && bits == 16) {
        const size_t n = data_len / 2 / channels;
        out.samples.resize(n);
        for (size_t i = 0; i < n; ++i) {
            double acc = 0;
            for (int c = 0; c < channels; ++c) {
                int16_t s;
                std::memcpy(&s, d + (i * channels + c) * 2, 2);
                acc += std::clamp(static_cast<double>(s) / 32767.0, -1.0, 1.0);
            }
            out.samples[i] = acc / channels;
        }
    } else if (format == 3 && bits == 32) {
        const size_t n = data_len / 4 / channels;
        out.samples.resize(n);
        for (size_t i = 0; i < n; ++i) {
            double acc = 0;
            for (int c = 0; c < channels; ++c) {
                float s;
                std::memcpy(&s, d + (i * channels + c) * 4, 4);
                acc += static_cast<double>(s);
            }
            out.samples[i] = acc / channels;
        }
    } else {
        throw LoadError(path + ": unsupported format (need PCM16 or float32), got format=" +
                        std::to_string(format) + " bits=" + std::to_string(bits));
    }
    return out;
}

void write_wav(const std::string& path, const AudioSignal& signal) {
    const uint32_t n = static_cast<uint32_t>(signal.samples.size());
    std::vector<uint8_t> out;
    out.reserve(44 + 2 * n);
    out.insert(out.end(), {'R', 'I', 'F', 'F'});
    put_u32(out, 36 + 2 * n);
    out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
    put_u32(out, 16);
    put_u16(out, 1);  // PCM
    put_u16(out, 1);  // mono
    put_u32(out, static_cast<uint32_t>(signal.sample_rate));
    put_u32(out, static_cast<uint32_t>(signal.sample_rate) * 2);
    put_u16(out, 2);
    put_u16(out, 16);
    out.insert(out.end(), {'d', 'a', 't', 'a'});
    put_u32(out, 2 * n);
    for (double v : signal.samples) {
        const double c = std::clamp(v, -1.0, 1.0);
        const int16_t s = static_cast<int16_t>(std::lround(c * 32767.0));
        put_u16(out, static_cast<uint16_t>(s));
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to " + path);
}

}  // namespace acunet
