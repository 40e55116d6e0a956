#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "nervpp/model.hpp"
#include "nervpp/training.hpp"
#include "nervpp/video.hpp"

namespace nervpp {

// -------- frame I/O --------
// raw-rgb24: planar frame-major bytes, exactly T·3·H·W of them, v/255.
VideoFrames read_frames_raw(const std::filesystem::path& path, std::int64_t t, std::int64_t h,
                            std::int64_t w);
void write_frames_raw(const VideoFrames& video, const std::filesystem::path& path);

// Interleaved 8-bit RGB image.
struct ImageU8 {
    std::int64_t h = 0, w = 0;
    std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel
};

// Minimal PNG codec over zlib: 8-bit RGB (color type 2), no interlace.
// The reader handles scanline filters 0-4 and skips ancillary chunks.
ImageU8 read_png(const std::filesystem::path& path);
void write_png(const ImageU8& img, const std::filesystem::path& path);

// "frame2" < "frame10": digit runs compare numerically.
bool natural_less(const std::string& a, const std::string& b);

// A directory of equally sized .png frames in natural filename order.
VideoFrames read_frames_png_dir(const std::filesystem::path& dir);
void write_frames_png_dir(const VideoFrames& video, const std::filesystem::path& dir);

// -------- files --------
void atomic_write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void atomic_write_text(const std::filesystem::path& path, const std::string& text);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

// -------- codec configuration --------
// INI-style text: [arch] / [train] / [compress] sections, key = value,
// '#' or ';' comments. Unknown sections or keys are rejected. Geometry
// (h0, w0, blocks) is mandatory; everything else has defaults.
struct CodecConfig {
    ArchConfig arch;
    TrainConfig train;
    double prune_ratio = 0.2;
};

CodecConfig parse_codec_config(const std::string& text);
CodecConfig load_codec_config(const std::filesystem::path& path);

// -------- CSV --------
// Shortest round-trip formatting, locale-independent; infinity -> "inf".
std::string format_double(double v);

std::string train_log_csv(const TrainLog& log);

struct RDRow {
    std::string label;
    double bpp = 0.0;
    double psnr = 0.0;
    double msssim = 0.0;
};

std::string rd_csv(const std::vector<RDRow>& rows);
std::vector<RDRow> parse_rd_csv(const std::string& text);

}  // namespace nervpp
