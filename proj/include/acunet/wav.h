#pragma once

#include <string>

#include "acunet/audio.h"

namespace acunet {

// Minimal RIFF/WAVE reader: PCM 16-bit or IEEE float 32-bit, mono or stereo
// (stereo is downmixed by averaging). The sample rate must already be
// 22050 Hz; no resampling is performed.
AudioSignal read_wav(const std::string& path);

// Writes mono PCM 16-bit at 22050 Hz; samples are clipped to [-1, 1].
void write_wav(const std::string& path, const AudioSignal& signal);

}  // namespace acunet
