#include "acunet/dataset.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "acunet/png_io.h"
#include "acunet/rng.h"
#include "acunet/wav.h"

namespace acunet {

namespace fs = std::filesystem;

int onset_frame(const NoteAnnotation& note) {
    return static_cast<int>(std::llround(note.onset_sec * audio_config::kFrameRate));
}

int64_t TargetMask::count() const {
    int64_t n = 0;
    for (uint8_t v : pixels) n += v;
    return n;
}

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::valid: return "valid";
        default: return "test";
    }
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "valid") return Split::valid;
    if (s == "test") return Split::test;
    throw LoadError("unknown split tag '" + s + "'");
}

// ---- loading -----------------------------------------------------------------

namespace {

constexpr const char* kNotesHeader = "onset_sec,pitch_midi,duration_sec,x_px,y_staff_mid_px";

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

double parse_double(const std::string& s, const std::string& where) {
    size_t pos = 0;
    double v = 0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw LoadError(where + ": not a number: '" + s + "'");
    }
    if (pos != s.size()) throw LoadError(where + ": trailing characters in '" + s + "'");
    return v;
}

int parse_int(const std::string& s, const std::string& where) {
    size_t pos = 0;
    long v = 0;
    try {
        v = std::stol(s, &pos);
    } catch (const std::exception&) {
        throw LoadError(where + ": not an integer: '" + s + "'");
    }
    if (pos != s.size()) throw LoadError(where + ": trailing characters in '" + s + "'");
    return static_cast<int>(v);
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

Piece load_piece(const std::string& directory) {
    const fs::path dir(directory);
    const std::string page_path = (dir / "page.png").string();
    const std::string wav_path = (dir / "audio.wav").string();
    const std::string csv_path = (dir / "notes.csv").string();
    const std::string split_path = (dir / "split").string();
    for (const std::string& p : {page_path, wav_path, csv_path, split_path}) {
        if (!fs::exists(p)) throw LoadError("missing file: " + p);
    }

    Piece piece;
    piece.name = dir.filename().string();

    const GrayImage img = read_png_gray(page_path);
    piece.page.height = img.height;
    piece.page.width = img.width;
    piece.page.src_height = img.height;
    piece.page.src_width = img.width;
    piece.page.pixels.resize(img.pixels.size());
    for (size_t i = 0; i < img.pixels.size(); ++i) {
        // stored pages are white background / dark ink; flip so ink = 1
        piece.page.pixels[i] = 1.0 - static_cast<double>(img.pixels[i]) / 255.0;
    }

    piece.signal = read_wav(wav_path);

    std::ifstream csv(csv_path);
    if (!csv) throw LoadError("missing file: " + csv_path);
    std::string line;
    if (!std::getline(csv, line)) throw LoadError(csv_path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kNotesHeader) {
        throw LoadError(csv_path + ":1: bad header, expected '" + std::string(kNotesHeader) + "'");
    }
    int lineno = 1;
    while (std::getline(csv, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const std::string where = csv_path + ":" + std::to_string(lineno);
        const auto fields = split_csv_line(line);
        if (fields.size() != 5) {
            throw LoadError(where + ": expected 5 fields, got " + std::to_string(fields.size()));
        }
        NoteAnnotation n;
        n.onset_sec = parse_double(fields[0], where);
        n.pitch_midi = parse_int(fields[1], where);
        n.duration_sec = parse_double(fields[2], where);
        n.x_px = parse_int(fields[3], where);
        n.y_staff_mid_px = parse_int(fields[4], where);
        if (n.onset_sec < 0) throw LoadError(where + ": negative onset " + fields[0]);
        if (n.x_px < 0 || n.x_px >= piece.page.width) {
            throw LoadError(where + ": x=" + fields[3] + " outside page width " +
                            std::to_string(piece.page.width));
        }
        if (n.y_staff_mid_px < 0 || n.y_staff_mid_px >= piece.page.height) {
            throw LoadError(where + ": y=" + fields[4] + " outside page height " +
                            std::to_string(piece.page.height));
        }
        piece.notes.push_back(n);
    }
    if (piece.notes.empty()) throw LoadError(csv_path + ": no notes");
    std::stable_sort(piece.notes.begin(), piece.notes.end(),
                     [](const NoteAnnotation& a, const NoteAnnotation& b) {
                         return a.onset_sec < b.onset_sec;
                     });

    const int T = frame_count(static_cast<int64_t>(piece.signal.samples.size()));
    for (const NoteAnnotation& n : piece.notes) {
        if (onset_frame(n) >= T) {
            throw LoadError(csv_path + ": note onset at frame " + std::to_string(onset_frame(n)) +
                            " beyond audio length (" + std::to_string(T) + " frames)");
        }
    }

    std::ifstream sf(split_path);
    std::string tag;
    sf >> tag;
    piece.split = parse_split(tag);

    piece.spec = spectrogram(piece.signal);
    return piece;
}

void save_piece(const std::string& directory, const Piece& piece) {
    const fs::path dir(directory);
    fs::create_directories(dir);

    GrayImage img;
    img.height = piece.page.height;
    img.width = piece.page.width;
    img.pixels.resize(piece.page.pixels.size());
    for (size_t i = 0; i < img.pixels.size(); ++i) {
        const double v = std::clamp(1.0 - piece.page.pixels[i], 0.0, 1.0);
        img.pixels[i] = static_cast<uint8_t>(std::lround(v * 255.0));
    }
    write_png_gray((dir / "page.png").string(), img);

    write_wav((dir / "audio.wav").string(), piece.signal);

    std::ofstream csv((dir / "notes.csv").string());
    if (!csv) throw IoError("cannot write " + (dir / "notes.csv").string());
    csv << kNotesHeader << "\n";
    for (const NoteAnnotation& n : piece.notes) {
        csv << fmt_double(n.onset_sec) << "," << n.pitch_midi << "," << fmt_double(n.duration_sec)
            << "," << n.x_px << "," << n.y_staff_mid_px << "\n";
    }

    std::ofstream sf((dir / "split").string());
    if (!sf) throw IoError("cannot write " + (dir / "split").string());
    sf << split_name(piece.split) << "\n";
}

// ---- page / mask geometry ------------------------------------------------------

ScorePage downscale_page(const std::vector<double>& pixels, int height, int width, int factor) {
    if (factor < 1) throw ArgumentError("downscale_page: factor must be >= 1");
    ScorePage out;
    out.src_height = height;
    out.src_width = width;
    out.height = height / factor;
    out.width = width / factor;
    out.pixels.assign(static_cast<size_t>(out.height) * out.width, 0.0);
    const double inv = 1.0 / (static_cast<double>(factor) * factor);
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            double s = 0;
            for (int i = 0; i < factor; ++i) {
                const double* row = pixels.data() + static_cast<size_t>(y * factor + i) * width;
                for (int j = 0; j < factor; ++j) s += row[x * factor + j];
            }
            out.pixels[static_cast<size_t>(y) * out.width + x] = s * inv;
        }
    }
    return out;
}

std::vector<NoteAnnotation> notes_in_excerpt(const Piece& piece, int end_frame) {
    const int lo = end_frame - (audio_config::kExcerptFrames - 1);
    std::vector<NoteAnnotation> out;
    for (const NoteAnnotation& n : piece.notes) {
        const int f = onset_frame(n);
        if (f >= lo && f <= end_frame) out.push_back(n);
    }
    return out;
}

NoteKey note_key(const NoteAnnotation& note) {
    return NoteKey{note.pitch_midi,
                   static_cast<int>(std::llround(note.duration_sec * audio_config::kFrameRate))};
}

std::vector<std::pair<int, int>> find_matching_occurrences(const std::vector<NoteKey>& query,
                                                           const Piece& piece) {
    if (query.empty()) throw ArgumentError("find_matching_occurrences: empty query");
    const int n = static_cast<int>(piece.notes.size());
    const int m = static_cast<int>(query.size());
    std::vector<std::pair<int, int>> out;
    for (int i = 0; i + m <= n; ++i) {
        bool ok = true;
        for (int j = 0; j < m; ++j) {
            if (!(note_key(piece.notes[static_cast<size_t>(i + j)]) == query[static_cast<size_t>(j)])) {
                ok = false;
                break;
            }
        }
        if (ok) out.emplace_back(i, i + m - 1);
    }
    return out;
}

namespace {

void fill_rect(TargetMask& mask, int x0, int x1, int y0, int y1) {
    x0 = std::max(x0, 0);
    y0 = std::max(y0, 0);
    x1 = std::min(x1, mask.width - 1);
    y1 = std::min(y1, mask.height - 1);
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            mask.pixels[static_cast<size_t>(y) * mask.width + x] = 1;
        }
    }
}

}  // namespace

TargetMask build_target_mask(const Piece& piece, int end_frame) {
    TargetMask mask;
    mask.height = piece.page.height;
    mask.width = piece.page.width;
    mask.pixels.assign(static_cast<size_t>(mask.height) * mask.width, 0);

    const auto notes = notes_in_excerpt(piece, end_frame);
    if (notes.empty()) return mask;

    std::vector<NoteKey> query;
    query.reserve(notes.size());
    for (const NoteAnnotation& n : notes) query.push_back(note_key(n));

    for (const auto& [first, last] : find_matching_occurrences(query, piece)) {
        // one rectangle per staff segment of the occurrence
        int seg_start = first;
        for (int i = first + 1; i <= last + 1; ++i) {
            const bool boundary =
                i > last || piece.notes[static_cast<size_t>(i)].y_staff_mid_px !=
                                piece.notes[static_cast<size_t>(seg_start)].y_staff_mid_px;
            if (!boundary) continue;
            int x_min = piece.notes[static_cast<size_t>(seg_start)].x_px;
            int x_max = x_min;
            for (int j = seg_start; j < i; ++j) {
                x_min = std::min(x_min, piece.notes[static_cast<size_t>(j)].x_px);
                x_max = std::max(x_max, piece.notes[static_cast<size_t>(j)].x_px);
            }
            const int y_mid = piece.notes[static_cast<size_t>(seg_start)].y_staff_mid_px;
            fill_rect(mask, x_min, x_max, y_mid - 10, y_mid + 9);
            seg_start = i;
        }
    }
    return mask;
}

std::pair<ScorePage, TargetMask> augment_shift(const ScorePage& page, const TargetMask& mask,
                                               int dx, int dy, int max_shift) {
    if (std::abs(dx) > max_shift || std::abs(dy) > max_shift) {
        throw ArgumentError("augment_shift: |dx|,|dy| must be <= " + std::to_string(max_shift) +
                            ", got dx=" + std::to_string(dx) + " dy=" + std::to_string(dy));
    }
    if (page.height != mask.height || page.width != mask.width) {
        throw DimensionError("augment_shift: page and mask shapes differ");
    }
    ScorePage p = page;
    std::fill(p.pixels.begin(), p.pixels.end(), 0.0);
    TargetMask m = mask;
    std::fill(m.pixels.begin(), m.pixels.end(), 0);
    for (int y = 0; y < page.height; ++y) {
        const int sy = y - dy;
        if (sy < 0 || sy >= page.height) continue;
        for (int x = 0; x < page.width; ++x) {
            const int sx = x - dx;
            if (sx < 0 || sx >= page.width) continue;
            p.pixels[static_cast<size_t>(y) * page.width + x] = page.at(sy, sx);
            m.pixels[static_cast<size_t>(y) * page.width + x] = mask.at(sy, sx);
        }
    }
    return {std::move(p), std::move(m)};
}

// ---- synthetic corpus ------------------------------------------------------------

namespace {

// 8-pitch alphabet (C major, C5..C6); frequencies sit where the log
// filterbank spacing is several FFT bins wide, so each pitch lands in a
// distinct band.
constexpr int kPitchAlphabet[] = {72, 74, 76, 77, 79, 81, 83, 84};
constexpr int kAlphabetSize = 8;

double midi_to_hz(int pitch) {
    return 440.0 * std::pow(2.0, (pitch - 69) / 12.0);
}

struct Raster {
    int height, width;
    std::vector<double> pixels;  // ink = 1

    Raster(int h, int w) : height(h), width(w), pixels(static_cast<size_t>(h) * w, 0.0) {}
    void set(int y, int x) {
        if (y >= 0 && y < height && x >= 0 && x < width) {
            pixels[static_cast<size_t>(y) * width + x] = 1.0;
        }
    }
};

// Notehead + stem + a 3-bit accent pattern right of the head; drawn at 3x
// resolution, coordinates in final (downscaled) pixels.
void draw_glyph(Raster& r, int x, int y_mid, int pitch) {
    int idx = 0;
    for (int i = 0; i < kAlphabetSize; ++i) {
        if (kPitchAlphabet[i] == pitch) idx = i;
    }
    const int y_glyph = y_mid + (78 - pitch);  // higher pitch sits higher on the page
    const int cx = 3 * x + 1, cy = 3 * y_glyph + 1;
    // head: filled ellipse, 9 wide x 7 tall at raster scale
    for (int dy = -3; dy <= 3; ++dy) {
        for (int dx = -4; dx <= 4; ++dx) {
            if (dx * dx * 9 + dy * dy * 16 <= 144) r.set(cy + dy, cx + dx);
        }
    }
    // stem going up from the right side of the head
    for (int dy = -18; dy <= -3; ++dy) {
        r.set(cy + dy, cx + 4);
        r.set(cy + dy, cx + 5);
    }
    // accent bits: three 3x3 blocks encoding the alphabet index
    for (int bit = 0; bit < 3; ++bit) {
        if (!(idx & (1 << bit))) continue;
        const int by = cy + (bit - 1) * 4;
        for (int dy = 0; dy < 3; ++dy) {
            for (int dx = 0; dx < 3; ++dx) r.set(by + dy - 1, cx + 8 + dx);
        }
    }
}

}  // namespace

int synth_page_height(const SynthConfig& cfg) {
    const int h = 2 * cfg.top_margin + (cfg.staves_per_page - 1) * cfg.staff_spacing;
    return (h + 15) / 16 * 16;
}

std::vector<Piece> synth_generate(uint64_t seed, const SynthConfig& cfg) {
    if (cfg.pieces <= 0 || cfg.notes_per_piece <= 0 || cfg.staves_per_page <= 0) {
        throw ArgumentError("synth_generate: piece/note/staff counts must be positive");
    }
    const int notes_per_staff = (cfg.page_width - 2 * cfg.note_x_start) / cfg.note_x_step + 1;
    const int capacity = notes_per_staff * cfg.staves_per_page;
    if (cfg.notes_per_piece > capacity) {
        throw ArgumentError("synth_generate: " + std::to_string(cfg.notes_per_piece) +
                            " notes exceed page capacity " + std::to_string(capacity));
    }
    const int H = synth_page_height(cfg);
    const int W = (cfg.page_width + 15) / 16 * 16;

    Rng master(seed);
    std::vector<uint64_t> piece_seeds(static_cast<size_t>(cfg.pieces));
    for (auto& s : piece_seeds) s = master.next_u64();

    const int n_train = static_cast<int>(std::lround(cfg.train_frac * cfg.pieces));
    const int n_valid = static_cast<int>(std::lround(cfg.valid_frac * cfg.pieces));

    std::vector<Piece> corpus;
    corpus.reserve(static_cast<size_t>(cfg.pieces));
    for (int pi = 0; pi < cfg.pieces; ++pi) {
        Rng rng(piece_seeds[static_cast<size_t>(pi)]);
        Piece piece;
        char name[32];
        std::snprintf(name, sizeof name, "piece_%04d", pi);
        piece.name = name;
        piece.split = pi < n_train            ? Split::train
                      : pi < n_train + n_valid ? Split::valid
                                               : Split::test;

        // note sequence: tile phrases drawn from a small per-piece pool
        std::vector<std::vector<int>> pool(static_cast<size_t>(cfg.phrase_pool));
        for (auto& phrase : pool) {
            phrase.resize(static_cast<size_t>(cfg.phrase_len));
            for (int& p : phrase) p = kPitchAlphabet[rng.uniform_int(0, kAlphabetSize - 1)];
        }
        std::vector<int> pitches;
        while (static_cast<int>(pitches.size()) < cfg.notes_per_piece) {
            const auto& phrase = pool[static_cast<size_t>(rng.uniform_int(0, cfg.phrase_pool - 1))];
            for (int p : phrase) {
                if (static_cast<int>(pitches.size()) < cfg.notes_per_piece) pitches.push_back(p);
            }
        }

        // layout + annotations
        Raster raster(3 * H, 3 * W);
        for (int s = 0; s < cfg.staves_per_page; ++s) {
            const int y_mid = cfg.top_margin + s * cfg.staff_spacing;
            for (int line = -2; line <= 2; ++line) {
                const int ry = 3 * (y_mid + 4 * line) + 1;
                for (int rx = 3 * 4; rx < 3 * (W - 4); ++rx) raster.set(ry, rx);
            }
        }
        for (int i = 0; i < cfg.notes_per_piece; ++i) {
            const int staff = i / notes_per_staff;
            const int slot = i % notes_per_staff;
            NoteAnnotation n;
            n.onset_sec = i * cfg.onset_step_sec;
            n.pitch_midi = pitches[static_cast<size_t>(i)];
            n.duration_sec = cfg.note_duration_sec;
            n.x_px = cfg.note_x_start + slot * cfg.note_x_step;
            n.y_staff_mid_px = cfg.top_margin + staff * cfg.staff_spacing;
            piece.notes.push_back(n);
            draw_glyph(raster, n.x_px, n.y_staff_mid_px, n.pitch_midi);
        }

        piece.page = downscale_page(raster.pixels, raster.height, raster.width, 3);
        // quantize to the exact values the PNG save/load cycle produces
        for (double& v : piece.page.pixels) {
            const long gray = std::lround(std::clamp(1.0 - v, 0.0, 1.0) * 255.0);
            v = 1.0 - static_cast<double>(gray) / 255.0;
        }

        // audio: one decaying sine per note
        const double dur = (cfg.notes_per_piece - 1) * cfg.onset_step_sec +
                           cfg.note_duration_sec + 1.0;
        const int64_t n_samples =
            static_cast<int64_t>(std::llround(dur * audio_config::kSampleRate));
        piece.signal.samples.assign(static_cast<size_t>(n_samples), 0.0);
        piece.signal.sample_rate = audio_config::kSampleRate;
        for (const NoteAnnotation& n : piece.notes) {
            const double f = midi_to_hz(n.pitch_midi);
            const int64_t s0 =
                static_cast<int64_t>(std::llround(n.onset_sec * audio_config::kSampleRate));
            const int64_t s1 = std::min<int64_t>(
                n_samples, s0 + static_cast<int64_t>(std::llround(
                                    (n.duration_sec + 0.2) * audio_config::kSampleRate)));
            for (int64_t s = s0; s < s1; ++s) {
                const double t = static_cast<double>(s - s0) / audio_config::kSampleRate;
                piece.signal.samples[static_cast<size_t>(s)] +=
                    0.4 * std::exp(-3.0 * t) * std::sin(2.0 * std::numbers::pi * f * t);
            }
        }

        piece.spec = spectrogram(piece.signal);
        corpus.push_back(std::move(piece));
    }
    return corpus;
}

void write_corpus(const std::string& root, const std::vector<Piece>& corpus) {
    fs::create_directories(root);
    for (const Piece& p : corpus) {
        save_piece((fs::path(root) / p.name).string(), p);
    }
}

std::vector<Piece> load_corpus(const std::string& root) {
    if (!fs::is_directory(root)) throw LoadError("not a directory: " + root);
    std::vector<std::string> dirs;
    for (const auto& e : fs::directory_iterator(root)) {
        if (e.is_directory()) dirs.push_back(e.path().string());
    }
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw LoadError("no piece directories under " + root);
    std::vector<Piece> corpus;
    corpus.reserve(dirs.size());
    for (const std::string& d : dirs) corpus.push_back(load_piece(d));
    return corpus;
}

void write_mask_png(const std::string& path, const TargetMask& mask) {
    GrayImage img;
    img.height = mask.height;
    img.width = mask.width;
    img.pixels.resize(mask.pixels.size());
    for (size_t i = 0; i < mask.pixels.size(); ++i) img.pixels[i] = mask.pixels[i] ? 255 : 0;
    write_png_gray(path, img);
}

TargetMask read_mask_png(const std::string& path) {
    const GrayImage img = read_png_gray(path);
    TargetMask mask;
    mask.height = img.height;
    mask.width = img.width;
    mask.pixels.resize(img.pixels.size());
    for (size_t i = 0; i < img.pixels.size(); ++i) mask.pixels[i] = img.pixels[i] >= 128 ? 1 : 0;
    return mask;
}

}  // namespace acunet
