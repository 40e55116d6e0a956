#include "nervpp/io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include "nervpp/common.hpp"

namespace nervpp {

namespace fs = std::filesystem;

namespace {

std::uint8_t to_byte(double v) {
    const double r = std::nearbyint(255.0 * v);
    return static_cast<std::uint8_t>(std::clamp(r, 0.0, 255.0));
}

// -------- PNG plumbing --------

constexpr std::uint8_t kPngSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};

void put_u32be(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32be(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  std::span<const std::uint8_t> data) {
    put_u32be(out, static_cast<std::uint32_t>(data.size()));
    std::vector<std::uint8_t> body(type, type + 4);
    body.insert(body.end(), data.begin(), data.end());
    out.insert(out.end(), body.begin(), body.end());
    const auto crc = crc32(0L, body.data(), static_cast<uInt>(body.size()));
    put_u32be(out, static_cast<std::uint32_t>(crc));
}

std::uint8_t paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
    if (pb <= pc) return static_cast<std::uint8_t>(b);
    return static_cast<std::uint8_t>(c);
}

// -------- config plumbing --------

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

double parse_f64(const std::string& s, const std::string& key) {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw DataError("bad numeric value for '" + key + "': " + s);
    return v;
}

std::int64_t parse_i64(const std::string& s, const std::string& key) {
    std::int64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw DataError("bad integer value for '" + key + "': " + s);
    return v;
}

std::uint64_t parse_u64(const std::string& s, const std::string& key) {
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw DataError("bad unsigned value for '" + key + "': " + s);
    return v;
}

bool parse_bool(const std::string& s, const std::string& key) {
    if (s == "1" || s == "true") return true;
    if (s == "0" || s == "false") return false;
    throw DataError("bad boolean value for '" + key + "': " + s);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i)
        if (i == s.size() || s[i] == sep) {
            out.push_back(s.substr(start, i - start));
            start = i + 1;
        }
    return out;
}

// "stride,channels[,dw_kernel[,expansion]]" per block, '/'-separated
std::vector<BlockSpec> parse_blocks(const std::string& s) {
    std::vector<BlockSpec> blocks;
    for (const std::string& part : split(s, '/')) {
        const std::string body = trim(part);
        if (body.empty()) throw DataError("empty block entry in 'blocks'");
        const auto fields = split(body, ',');
        if (fields.size() < 2 || fields.size() > 4)
            throw DataError("block entry needs 2..4 comma-separated fields: " + body);
        BlockSpec b;
        b.stride = static_cast<int>(parse_i64(trim(fields[0]), "blocks.stride"));
        b.out_channels = static_cast<int>(parse_i64(trim(fields[1]), "blocks.out_channels"));
        if (fields.size() > 2)
            b.dw_kernel = static_cast<int>(parse_i64(trim(fields[2]), "blocks.dw_kernel"));
        if (fields.size() > 3)
            b.expansion = static_cast<int>(parse_i64(trim(fields[3]), "blocks.expansion"));
        blocks.push_back(b);
    }
    return blocks;
}

}  // namespace

// -------- raw frames --------

VideoFrames read_frames_raw(const fs::path& path, std::int64_t t, std::int64_t h,
                            std::int64_t w) {
    if (t < 1 || h < 1 || w < 1) throw DataError("raw video dimensions must be positive");
    const std::vector<std::uint8_t> bytes = read_file(path);
    const auto want = static_cast<std::size_t>(t) * 3u * static_cast<std::size_t>(h) *
                      static_cast<std::size_t>(w);
    if (bytes.size() != want)
        throw DataError("raw video byte count mismatch: got " + std::to_string(bytes.size()) +
                        ", expected " + std::to_string(want));
    VideoFrames video{t, h, w, std::vector<double>(want)};
    for (std::size_t i = 0; i < want; ++i) video.data[i] = bytes[i] / 255.0;
    return video;
}

void write_frames_raw(const VideoFrames& video, const fs::path& path) {
    video.validate();
    std::vector<std::uint8_t> bytes(video.data.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = to_byte(video.data[i]);
    atomic_write_file(path, bytes);
}

// -------- PNG --------

void write_png(const ImageU8& img, const fs::path& path) {
    if (img.h < 1 || img.w < 1 ||
        img.rgb.size() != static_cast<std::size_t>(3 * img.h * img.w))
        throw DataError("malformed image buffer");

    std::vector<std::uint8_t> scan;
    scan.reserve(static_cast<std::size_t>(img.h) * (1 + 3 * static_cast<std::size_t>(img.w)));
    for (std::int64_t y = 0; y < img.h; ++y) {
        scan.push_back(0);  // filter: none
        const auto* row = img.rgb.data() + 3 * y * img.w;
        scan.insert(scan.end(), row, row + 3 * img.w);
    }
    uLongf zlen = compressBound(static_cast<uLong>(scan.size()));
    std::vector<std::uint8_t> z(zlen);
    if (compress2(z.data(), &zlen, scan.data(), static_cast<uLong>(scan.size()),
                  Z_DEFAULT_COMPRESSION) != Z_OK)
        throw DataError("deflate failed while writing PNG");
    z.resize(zlen);

    std::vector<std::uint8_t> out(kPngSig, kPngSig + 8);
    std::vector<std::uint8_t> ihdr;
    put_u32be(ihdr, static_cast<std::uint32_t>(img.w));
    put_u32be(ihdr, static_cast<std::uint32_t>(img.h));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type: truecolor
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter method
    ihdr.push_back(0);  // no interlace
    append_chunk(out, "IHDR", ihdr);
    append_chunk(out, "IDAT", z);
    append_chunk(out, "IEND", {});
    atomic_write_file(path, out);
}

ImageU8 read_png(const fs::path& path) {
    const std::vector<std::uint8_t> bytes = read_file(path);
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSig, 8) != 0)
        throw DataError("not a PNG file: " + path.string());

    std::int64_t w = 0, h = 0;
    bool have_ihdr = false, have_iend = false;
    std::vector<std::uint8_t> idat;
    std::size_t pos = 8;
    while (!have_iend) {
        if (pos + 8 > bytes.size()) throw DataError("truncated PNG: " + path.string());
        const std::uint32_t len = get_u32be(bytes.data() + pos);
        const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
        if (pos + 12 + len > bytes.size()) throw DataError("truncated PNG: " + path.string());
        const std::uint8_t* data = bytes.data() + pos + 8;
        const std::uint32_t want_crc = get_u32be(data + len);
        const auto got_crc = crc32(0L, bytes.data() + pos + 4, 4 + len);
        if (want_crc != static_cast<std::uint32_t>(got_crc))
            throw DataError("PNG chunk CRC mismatch: " + path.string());

        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (have_ihdr || len != 13) throw DataError("malformed IHDR: " + path.string());
            w = get_u32be(data);
            h = get_u32be(data + 4);
            if (w < 1 || h < 1) throw DataError("bad PNG dimensions: " + path.string());
            if (data[8] != 8) throw DataError("only 8-bit PNGs supported: " + path.string());
            if (data[9] != 2)
                throw DataError("only truecolor RGB PNGs supported: " + path.string());
            if (data[10] != 0 || data[11] != 0)
                throw DataError("unsupported PNG compression/filter method: " + path.string());
            if (data[12] != 0)
                throw DataError("interlaced PNGs not supported: " + path.string());
            have_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            if (!have_ihdr) throw DataError("IDAT before IHDR: " + path.string());
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            have_iend = true;
        } else if (!(type[0] & 0x20)) {
            throw DataError(std::string("unsupported critical PNG chunk ") +
                            std::string(type, 4) + ": " + path.string());
        }
        pos += 12 + len;
    }
    if (!have_ihdr || idat.empty()) throw DataError("PNG missing image data: " + path.string());

    const std::size_t stride = 1 + 3 * static_cast<std::size_t>(w);
    uLongf rawlen = static_cast<uLongf>(stride * static_cast<std::size_t>(h));
    std::vector<std::uint8_t> raw(rawlen);
    if (uncompress(raw.data(), &rawlen, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        rawlen != raw.size())
        throw DataError("PNG image data does not inflate cleanly: " + path.string());

    ImageU8 img{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(3 * h * w))};
    std::vector<std::uint8_t> prev(3 * static_cast<std::size_t>(w), 0);
    for (std::int64_t y = 0; y < h; ++y) {
        const std::uint8_t filter = raw[y * static_cast<std::int64_t>(stride)];
        const std::uint8_t* r = raw.data() + y * static_cast<std::int64_t>(stride) + 1;
        std::uint8_t* x = img.rgb.data() + 3 * y * w;
        const std::int64_t n = 3 * w;
        switch (filter) {
            case 0:
                std::copy(r, r + n, x);
                break;
            case 1:
                for (std::int64_t i = 0; i < n; ++i)
                    x[i] = static_cast<std::uint8_t>(r[i] + (i >= 3 ? x[i - 3] : 0));
                break;
            case 2:
                for (std::int64_t i = 0; i < n; ++i)
                    x[i] = static_cast<std::uint8_t>(r[i] + prev[i]);
                break;
            case 3:
                for (std::int64_t i = 0; i < n; ++i)
                    x[i] = static_cast<std::uint8_t>(
                        r[i] + ((i >= 3 ? x[i - 3] : 0) + prev[i]) / 2);
                break;
            case 4:
                for (std::int64_t i = 0; i < n; ++i)
                    x[i] = static_cast<std::uint8_t>(
                        r[i] + paeth(i >= 3 ? x[i - 3] : 0, prev[i], i >= 3 ? prev[i - 3] : 0));
                break;
            default:
                throw DataError("unknown PNG scanline filter: " + path.string());
        }
        std::copy(x, x + n, prev.data());
    }
    return img;
}

bool natural_less(const std::string& a, const std::string& b) {
    std::size_t i = 0, j = 0;
    const auto digit = [](char c) { return c >= '0' && c <= '9'; };
    while (i < a.size() && j < b.size()) {
        if (digit(a[i]) && digit(b[j])) {
            std::size_t ie = i, je = j;
            while (ie < a.size() && digit(a[ie])) ++ie;
            while (je < b.size() && digit(b[je])) ++je;
            std::size_t iz = i, jz = j;
            while (iz < ie - 1 && a[iz] == '0') ++iz;  // strip leading zeros
            while (jz < je - 1 && b[jz] == '0') ++jz;
            const std::size_t la = ie - iz, lb = je - jz;
            if (la != lb) return la < lb;
            const int cmp = a.compare(iz, la, b, jz, lb);
            if (cmp != 0) return cmp < 0;
            if (ie - i != je - j) return ie - i < je - j;  // fewer leading zeros first
            i = ie, j = je;
        } else {
            if (a[i] != b[j]) return a[i] < b[j];
            ++i, ++j;
        }
    }
    return a.size() - i < b.size() - j;
}

VideoFrames read_frames_png_dir(const fs::path& dir) {
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png") names.push_back(entry.path().filename().string());
    }
    if (names.empty()) throw DataError("no .png frames in " + dir.string());
    std::sort(names.begin(), names.end(), natural_less);

    VideoFrames video{static_cast<std::int64_t>(names.size()), 0, 0, {}};
    for (std::size_t f = 0; f < names.size(); ++f) {
        const ImageU8 img = read_png(dir / names[f]);
        if (f == 0) {
            video.h = img.h;
            video.w = img.w;
            video.data.resize(static_cast<std::size_t>(video.t) *
                              static_cast<std::size_t>(video.frame_elems()));
        } else if (img.h != video.h || img.w != video.w) {
            throw DataError("frame size mismatch at " + names[f]);
        }
        double* dst = video.data.data() + f * static_cast<std::size_t>(video.frame_elems());
        for (std::int64_t c = 0; c < 3; ++c)
            for (std::int64_t y = 0; y < video.h; ++y)
                for (std::int64_t x = 0; x < video.w; ++x)
                    dst[(c * video.h + y) * video.w + x] =
                        img.rgb[(y * video.w + x) * 3 + c] / 255.0;
    }
    return video;
}

void write_frames_png_dir(const VideoFrames& video, const fs::path& dir) {
    video.validate();
    fs::create_directories(dir);
    for (std::int64_t f = 0; f < video.t; ++f) {
        ImageU8 img{video.h, video.w,
                    std::vector<std::uint8_t>(static_cast<std::size_t>(3 * video.h * video.w))};
        const double* src = video.data.data() + f * video.frame_elems();
        for (std::int64_t c = 0; c < 3; ++c)
            for (std::int64_t y = 0; y < video.h; ++y)
                for (std::int64_t x = 0; x < video.w; ++x)
                    img.rgb[(y * video.w + x) * 3 + c] =
                        to_byte(src[(c * video.h + y) * video.w + x]);
        char name[32];
        std::snprintf(name, sizeof name, "frame_%06lld.png", static_cast<long long>(f));
        write_png(img, dir / name);
    }
}

// -------- files --------

void atomic_write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("cannot open for writing: " + tmp.string());
        f.write(reinterpret_cast<const char*>(bytes.data()),
                static_cast<std::streamsize>(bytes.size()));
        if (!f) throw DataError("write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw DataError("cannot move " + tmp.string() + " into place: " + ec.message());
}

void atomic_write_text(const fs::path& path, const std::string& text) {
    atomic_write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()),
                                      text.size()));
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    if (f.bad()) throw DataError("read failed: " + path.string());
    return bytes;
}

// -------- codec configuration --------

CodecConfig parse_codec_config(const std::string& text) {
    CodecConfig cfg;
    cfg.arch.blocks.clear();
    enum class Section { none, arch, train, compress } section = Section::none;
    bool have_h0 = false, have_w0 = false, have_blocks = false;

    std::size_t line_no = 0;
    for (const std::string& raw_line : split(text, '\n')) {
        ++line_no;
        std::string line = raw_line;
        if (const auto hash = line.find_first_of("#;"); hash != std::string::npos)
            line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.back() != ']')
                throw DataError("line " + std::to_string(line_no) + ": malformed section");
            const std::string name = trim(line.substr(1, line.size() - 2));
            if (name == "arch")
                section = Section::arch;
            else if (name == "train")
                section = Section::train;
            else if (name == "compress")
                section = Section::compress;
            else
                throw DataError("line " + std::to_string(line_no) + ": unknown section [" +
                                name + "]");
            continue;
        }

        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw DataError("line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key.empty() || val.empty())
            throw DataError("line " + std::to_string(line_no) + ": empty key or value");

        switch (section) {
            case Section::none:
                throw DataError("line " + std::to_string(line_no) +
                                ": key outside any section");
            case Section::arch:
                if (key == "pe_base")
                    cfg.arch.pe_base = parse_f64(val, key);
                else if (key == "pe_levels")
                    cfg.arch.pe_levels = static_cast<int>(parse_i64(val, key));
                else if (key == "stem_hidden")
                    cfg.arch.stem_hidden = static_cast<int>(parse_i64(val, key));
                else if (key == "h0")
                    cfg.arch.h0 = static_cast<int>(parse_i64(val, key)), have_h0 = true;
                else if (key == "w0")
                    cfg.arch.w0 = static_cast<int>(parse_i64(val, key)), have_w0 = true;
                else if (key == "c0")
                    cfg.arch.c0 = static_cast<int>(parse_i64(val, key));
                else if (key == "head_kernel")
                    cfg.arch.head_kernel = static_cast<int>(parse_i64(val, key));
                else if (key == "variant_star")
                    cfg.arch.variant_star = parse_bool(val, key);
                else if (key == "blocks")
                    cfg.arch.blocks = parse_blocks(val), have_blocks = true;
                else
                    throw DataError("line " + std::to_string(line_no) +
                                    ": unknown [arch] key '" + key + "'");
                break;
            case Section::train:
                if (key == "epochs")
                    cfg.train.epochs = parse_i64(val, key);
                else if (key == "lr0")
                    cfg.train.lr0 = parse_f64(val, key);
                else if (key == "beta1")
                    cfg.train.beta1 = parse_f64(val, key);
                else if (key == "beta2")
                    cfg.train.beta2 = parse_f64(val, key);
                else if (key == "adam_eps")
                    cfg.train.adam_eps = parse_f64(val, key);
                else if (key == "seed")
                    cfg.train.seed = parse_u64(val, key);
                else if (key == "loss_w_mae")
                    cfg.train.loss_w_mae = parse_f64(val, key);
                else if (key == "loss_w_ssim")
                    cfg.train.loss_w_ssim = parse_f64(val, key);
                else if (key == "finetune_epochs")
                    cfg.train.finetune_epochs = parse_i64(val, key);
                else if (key == "finetune_lr_scale")
                    cfg.train.finetune_lr_scale = parse_f64(val, key);
                else
                    throw DataError("line " + std::to_string(line_no) +
                                    ": unknown [train] key '" + key + "'");
                break;
            case Section::compress:
                if (key == "prune_ratio")
                    cfg.prune_ratio = parse_f64(val, key);
                else
                    throw DataError("line " + std::to_string(line_no) +
                                    ": unknown [compress] key '" + key + "'");
                break;
        }
    }
    if (!have_h0 || !have_w0 || !have_blocks)
        throw DataError("config must set [arch] h0, w0, and blocks");
    try {
        cfg.arch.validate();
        cfg.train.validate();
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("invalid config: ") + e.what());
    }
    if (!(cfg.prune_ratio >= 0.0 && cfg.prune_ratio < 1.0))
        throw DataError("prune_ratio must lie in [0, 1)");
    return cfg;
}

CodecConfig load_codec_config(const fs::path& path) {
    const auto bytes = read_file(path);
    return parse_codec_config(std::string(bytes.begin(), bytes.end()));
}

// -------- CSV --------

std::string format_double(double v) {
    char buf[40];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc{}) throw NumericError("number formatting failed");
    return std::string(buf, p);
}

std::string train_log_csv(const TrainLog& log) {
    std::string out = "epoch,lr,loss,psnr\n";
    for (const auto& rec : log) {
        out += std::to_string(rec.epoch);
        out += ',';
        out += format_double(rec.lr);
        out += ',';
        out += format_double(rec.loss);
        out += ',';
        out += format_double(rec.psnr);
        out += '\n';
    }
    return out;
}

std::string rd_csv(const std::vector<RDRow>& rows) {
    std::string out = "label,bpp,psnr,msssim\n";
    for (const auto& r : rows) {
        out += r.label;
        out += ',';
        out += format_double(r.bpp);
        out += ',';
        out += format_double(r.psnr);
        out += ',';
        out += format_double(r.msssim);
        out += '\n';
    }
    return out;
}

std::vector<RDRow> parse_rd_csv(const std::string& text) {
    const auto lines = split(text, '\n');
    std::size_t i = 0;
    auto next = [&]() -> const std::string* {
        while (i < lines.size()) {
            const std::string& l = lines[i];
            ++i;
            if (!trim(l).empty()) return &l;
        }
        return nullptr;
    };
    const std::string* header = next();
    if (!header || trim(*header) != "label,bpp,psnr,msssim")
        throw DataError("RD CSV must start with 'label,bpp,psnr,msssim'");
    std::vector<RDRow> rows;
    while (const std::string* l = next()) {
        const auto fields = split(trim(*l), ',');
        if (fields.size() != 4)
            throw DataError("RD CSV row needs 4 fields: " + *l);
        RDRow r;
        r.label = trim(fields[0]);
        r.bpp = parse_f64(trim(fields[1]), "bpp");
        r.psnr = parse_f64(trim(fields[2]), "psnr");
        r.msssim = parse_f64(trim(fields[3]), "msssim");
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw DataError("RD CSV has no data rows");
    return rows;
}

}  // namespace nervpp
