#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "acunet/audio.h"
#include "acunet/errors.h"

namespace acunet {

struct NoteAnnotation {
    double onset_sec = 0;
    int pitch_midi = 0;
    double duration_sec = 0;
    int x_px = 0;           // downscaled page coordinates
    int y_staff_mid_px = 0; // middle of the note's staff, downscaled
};

// Onset frame index on the 20 fps grid.
int onset_frame(const NoteAnnotation& note);

// Grayscale page, ink = 1 and background = 0, at downscaled resolution.
struct ScorePage {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;  // [H x W] in [0, 1]
    int src_height = 0;          // resolution before downscaling
    int src_width = 0;

    double at(int y, int x) const { return pixels[static_cast<size_t>(y) * width + x]; }
};

struct TargetMask {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> pixels;  // {0, 1}

    uint8_t at(int y, int x) const { return pixels[static_cast<size_t>(y) * width + x]; }
    int64_t count() const;
};

enum class Split { train, valid, test };
const char* split_name(Split s);
Split parse_split(const std::string& s);

struct Piece {
    std::string name;
    ScorePage page;
    AudioSignal signal;
    std::vector<NoteAnnotation> notes;  // sorted by onset
    Split split = Split::train;
    Spectrogram spec;  // cached spectrogram of `signal`
};

// Reads `<dir>/page.png`, `<dir>/audio.wav`, `<dir>/notes.csv`, `<dir>/split`.
// Content problems raise LoadError naming the file (and CSV line).
Piece load_piece(const std::string& directory);

// Inverse of load_piece; creates the directory if needed.
void save_piece(const std::string& directory, const Piece& piece);

// Block-mean downsampling by an integer factor; output dims floor(H/f) x floor(W/f).
ScorePage downscale_page(const std::vector<double>& pixels, int height, int width, int factor);

// Notes whose onset frame lies inside the 40-frame window ending at end_frame.
std::vector<NoteAnnotation> notes_in_excerpt(const Piece& piece, int end_frame);

// Symbolic note identity used for occurrence matching: pitch plus duration
// quantized to the 1/20 s frame grid.
struct NoteKey {
    int pitch = 0;
    int qdur = 0;
    bool operator==(const NoteKey&) const = default;
};
NoteKey note_key(const NoteAnnotation& note);

// All index ranges [first, last] of piece.notes whose key sequence equals
// the query (includes the query's own source position).
std::vector<std::pair<int, int>> find_matching_occurrences(const std::vector<NoteKey>& query,
                                                           const Piece& piece);

// Binary mask marking every occurrence of the excerpt's note sequence: one
// 20-row rectangle per staff segment, spanning the segment's first to last
// note x, rows [y_mid-10, y_mid+10), clipped to the page.
TargetMask build_target_mask(const Piece& piece, int end_frame);

// Identical translation of page and mask; vacated area becomes background.
std::pair<ScorePage, TargetMask> augment_shift(const ScorePage& page, const TargetMask& mask,
                                               int dx, int dy, int max_shift = 10);

// Synthetic corpus generator. Pages carry staves and per-pitch note glyphs
// at known coordinates; audio is additive decaying sines; note sequences
// are tiled from a small per-piece phrase pool so repeated phrases (and
// multi-occurrence masks) arise.
struct SynthConfig {
    int pieces = 48;
    int notes_per_piece = 45;
    int staves_per_page = 3;
    int page_width = 192;          // downscaled px, padded up to a multiple of 16
    int staff_spacing = 40;        // rows between staff midlines
    int top_margin = 24;           // first staff midline row
    int note_x_start = 12;
    int note_x_step = 12;
    double onset_step_sec = 0.45;  // 9 frames
    double note_duration_sec = 0.40;
    int phrase_pool = 3;           // distinct phrases per piece
    int phrase_len = 8;            // notes per phrase
    double train_frac = 4.0 / 6.0;
    double valid_frac = 1.0 / 6.0;
};

int synth_page_height(const SynthConfig& cfg);

std::vector<Piece> synth_generate(uint64_t seed, const SynthConfig& cfg);

// Writes one directory per piece under root (creating it), named
// piece_0000, piece_0001, ...
void write_corpus(const std::string& root, const std::vector<Piece>& corpus);

// Loads every piece directory found under root, sorted by name.
std::vector<Piece> load_corpus(const std::string& root);

// Mask image I/O (0/255 grayscale PNG).
void write_mask_png(const std::string& path, const TargetMask& mask);
TargetMask read_mask_png(const std::string& path);

}  // namespace acunet
