#include "cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nervpp/common.hpp"
#include "nervpp/compression.hpp"
#include "nervpp/io.hpp"
#include "nervpp/metrics.hpp"
#include "nervpp/model.hpp"
#include "nervpp/training.hpp"
#include "nervpp/video.hpp"

namespace nervpp::cli {

namespace {

struct VideoArgs {
    std::string path;
    std::string format;  // "raw" | "png-dir"
    std::int64_t frames = 0, width = 0, height = 0;
};

void add_video_flags(CLI::App* cmd, VideoArgs& v, const std::string& what) {
    cmd->add_option("--input", v.path, what)->required();
    cmd->add_option("--format", v.format, "frame format")
        ->required()
        ->check(CLI::IsMember({"raw", "png-dir"}));
    cmd->add_option("--frames", v.frames, "frame count (raw only)");
    cmd->add_option("--width", v.width, "frame width (raw only)");
    cmd->add_option("--height", v.height, "frame height (raw only)");
}

VideoFrames load_video(const VideoArgs& v) {
    if (v.format == "raw") {
        if (v.frames < 1 || v.width < 1 || v.height < 1)
            throw std::invalid_argument("raw input needs --frames, --width, and --height");
        return read_frames_raw(v.path, v.frames, v.height, v.width);
    }
    return read_frames_png_dir(v.path);
}

void save_video(const VideoFrames& video, const std::string& path, const std::string& format) {
    if (format == "raw")
        write_frames_raw(video, path);
    else
        write_frames_png_dir(video, path);
}

std::uint64_t resolve_seed(bool given, std::uint64_t flag, std::uint64_t fallback) {
    if (given) return flag;
    if (const char* env = std::getenv("NRVPP_SEED")) {
        std::uint64_t v = 0;
        const std::string s(env);
        const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc{} || p != s.data() + s.size())
            throw std::invalid_argument("NRVPP_SEED is not an unsigned integer: " + s);
        return v;
    }
    return fallback;
}

VideoFrames render_video(const ArchConfig& arch, ParameterStore& store,
                         std::int64_t t_frames) {
    VideoFrames out{t_frames, arch.frame_h(), arch.frame_w(), {}};
    out.data.resize(static_cast<std::size_t>(t_frames) *
                    static_cast<std::size_t>(out.frame_elems()));
    for (std::int64_t i = 0; i < t_frames; ++i) {
        Tensor y = model_forward(frame_time(i, t_frames), arch, store);
        const auto d = y.data();
        std::copy(d.begin(), d.end(),
                  out.data.begin() + i * static_cast<std::size_t>(out.frame_elems()));
    }
    return out;
}

// Snap to the 8-bit grid the frame writers use, so quality reported here
// matches an eval of the written files exactly.
void snap_to_u8(VideoFrames& v) {
    for (double& x : v.data)
        x = std::clamp(std::nearbyint(255.0 * x), 0.0, 255.0) / 255.0;
}

double mean_frame_psnr(const VideoFrames& a, const VideoFrames& b) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < a.t; ++i) acc += psnr(a.frame(i), b.frame(i));
    return acc / static_cast<double>(a.t);
}

struct EncodeOutcome {
    std::vector<std::uint8_t> bytes;
    TrainLog log;
    double psnr = 0.0;
};

EncodeOutcome run_pipeline(const VideoFrames& video, const ArchConfig& arch,
                           const TrainConfig& tc, double prune_ratio) {
    TrainResult res = train(video, arch, tc);
    EncodeOutcome outcome;
    outcome.log = res.log;
    std::optional<PruneMask> mask;
    if (prune_ratio > 0.0) {
        mask = prune_l1_global(res.params, prune_ratio);
        TrainLog ft = finetune(video, arch, tc, res.params, *mask);
        for (auto& rec : ft) {
            rec.epoch += tc.epochs;
            outcome.log.push_back(rec);
        }
    }
    CompressedModel m =
        compress_pipeline(res.params, arch, video.t, mask ? &*mask : nullptr);
    outcome.bytes = serialize(m);

    auto [dec_arch, dec_store] = decompress(m);
    VideoFrames dec = render_video(dec_arch, dec_store, video.t);
    snap_to_u8(dec);
    outcome.psnr = mean_frame_psnr(video, dec);
    return outcome;
}

int cmd_encode(const VideoArgs& in, const std::string& size, const std::string& config_path,
               bool epochs_given, std::int64_t epochs, bool seed_given, std::uint64_t seed,
               bool ratio_given, double ratio, const std::string& output,
               const std::string& log_path, std::ostream& out) {
    if (size.empty() == config_path.empty())
        throw std::invalid_argument("pass exactly one of --size or --config");

    const VideoFrames video = load_video(in);
    CodecConfig cc;
    if (!config_path.empty()) {
        cc = load_codec_config(config_path);
        if (cc.arch.frame_h() != video.h || cc.arch.frame_w() != video.w)
            throw DataError("config geometry produces " +
                            std::to_string(cc.arch.frame_w()) + "x" +
                            std::to_string(cc.arch.frame_h()) + " frames, video is " +
                            std::to_string(video.w) + "x" + std::to_string(video.h));
    } else {
        cc.arch = preset_config(size, static_cast<int>(video.h), static_cast<int>(video.w));
    }
    if (epochs_given) cc.train.epochs = epochs;
    cc.train.seed = resolve_seed(seed_given, seed, cc.train.seed);
    if (ratio_given) cc.prune_ratio = ratio;

    const EncodeOutcome outcome = run_pipeline(video, cc.arch, cc.train, cc.prune_ratio);
    atomic_write_file(output, outcome.bytes);
    if (!log_path.empty()) atomic_write_text(log_path, train_log_csv(outcome.log));

    out << "wrote " << output << " (" << outcome.bytes.size() << " bytes)\n";
    out << "bpp: "
        << format_double(bpp(static_cast<std::int64_t>(outcome.bytes.size()), video.t,
                             video.h, video.w))
        << "\n";
    out << "psnr: " << format_double(outcome.psnr) << "\n";
    return 0;
}

int cmd_decode(const std::string& input, const std::string& output, const std::string& format,
               std::ostream& out) {
    const auto bytes = read_file(input);
    const CompressedModel m = deserialize(bytes);
    auto [arch, store] = decompress(m);

    const auto t0 = std::chrono::steady_clock::now();
    const VideoFrames video = render_video(arch, store, m.t);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                            .count();
    save_video(video, output, format);

    out << "decoded " << m.t << " frames of " << m.w << "x" << m.h << "\n";
    out << "decode_seconds: " << format_double(secs) << "\n";
    out << "decode_fps: " << format_double(static_cast<double>(m.t) / secs) << "\n";
    return 0;
}

int cmd_eval(const VideoArgs& ref_args, const std::string& decoded_path,
             const std::string& output, std::ostream& out) {
    const VideoFrames ref = load_video(ref_args);
    VideoArgs dec_args = ref_args;
    dec_args.path = decoded_path;
    const VideoFrames dec = load_video(dec_args);
    if (ref.t != dec.t || ref.h != dec.h || ref.w != dec.w)
        throw DataError("reference and decoded videos disagree in geometry");

    std::string csv = "frame,psnr,ssim,msssim\n";
    double sp = 0.0, ss = 0.0, sm = 0.0;
    for (std::int64_t i = 0; i < ref.t; ++i) {
        const Tensor a = ref.frame(i), b = dec.frame(i);
        const double p = psnr(a, b), s = ssim(a, b), ms = ms_ssim(a, b);
        sp += p, ss += s, sm += ms;
        csv += std::to_string(i) + ',' + format_double(p) + ',' + format_double(s) + ',' +
               format_double(ms) + '\n';
    }
    const double n = static_cast<double>(ref.t);
    csv += "mean," + format_double(sp / n) + ',' + format_double(ss / n) + ',' +
           format_double(sm / n) + '\n';
    if (!output.empty())
        atomic_write_text(output, csv);
    else
        out << csv;
    out << "mean_psnr: " << format_double(sp / n) << "\n";
    out << "mean_msssim: " << format_double(sm / n) << "\n";
    return 0;
}

int cmd_rd_sweep(const VideoArgs& in, const std::string& sizes_csv, bool epochs_given,
                 std::int64_t epochs, bool seed_given, std::uint64_t seed, double ratio,
                 const std::string& output, std::ostream& out) {
    const VideoFrames video = load_video(in);
    std::vector<RDRow> rows;
    std::string item;
    std::vector<std::string> sizes;
    for (std::size_t i = 0; i <= sizes_csv.size(); ++i) {
        if (i == sizes_csv.size() || sizes_csv[i] == ',') {
            if (!item.empty()) sizes.push_back(item);
            item.clear();
        } else {
            item += sizes_csv[i];
        }
    }
    if (sizes.empty()) throw std::invalid_argument("--sizes list is empty");

    for (const std::string& size : sizes) {
        const ArchConfig arch =
            preset_config(size, static_cast<int>(video.h), static_cast<int>(video.w));
        TrainConfig tc;
        if (epochs_given) tc.epochs = epochs;
        tc.seed = resolve_seed(seed_given, seed, tc.seed);

        const EncodeOutcome outcome = run_pipeline(video, arch, tc, ratio);

        CompressedModel m = deserialize(outcome.bytes);
        auto [dec_arch, dec_store] = decompress(m);
        VideoFrames dec = render_video(dec_arch, dec_store, video.t);
        snap_to_u8(dec);
        double msum = 0.0;
        for (std::int64_t i = 0; i < video.t; ++i)
            msum += ms_ssim(video.frame(i), dec.frame(i));

        RDRow row{size,
                  bpp(static_cast<std::int64_t>(outcome.bytes.size()), video.t, video.h,
                      video.w),
                  outcome.psnr, msum / static_cast<double>(video.t)};
        out << row.label << ": bpp " << format_double(row.bpp) << ", psnr "
            << format_double(row.psnr) << ", msssim " << format_double(row.msssim) << "\n";
        rows.push_back(std::move(row));
    }
    std::sort(rows.begin(), rows.end(),
              [](const RDRow& a, const RDRow& b) { return a.bpp < b.bpp; });
    atomic_write_text(output, rd_csv(rows));
    out << "wrote " << output << "\n";
    return 0;
}

int cmd_bdrate(const std::string& anchor_path, const std::string& test_path,
               std::ostream& out) {
    const auto to_curve = [](const std::filesystem::path& p) {
        RDCurve c;
        const auto bytes = read_file(p);
        for (const RDRow& r : parse_rd_csv(std::string(bytes.begin(), bytes.end())))
            c.push_back({r.bpp, r.psnr});
        return c;
    };
    const RDCurve anchor = to_curve(anchor_path), test = to_curve(test_path);
    out << "bd_rate_percent: " << format_double(bd_rate(anchor, test)) << "\n";
    out << "bd_psnr_db: " << format_double(bd_psnr(anchor, test)) << "\n";
    return 0;
}

int cmd_info(const std::string& input, std::ostream& out) {
    const auto bytes = read_file(input);
    const CompressedModel m = deserialize(bytes);
    out << "frames: " << m.t << "\n";
    out << "width: " << m.w << "\n";
    out << "height: " << m.h << "\n";
    out << "variant_star: " << (m.arch.variant_star ? 1 : 0) << "\n";
    out << "pe_base: " << format_double(m.arch.pe_base) << "\n";
    out << "pe_levels: " << m.arch.pe_levels << "\n";
    out << "stem_hidden: " << m.arch.stem_hidden << "\n";
    out << "grid: " << m.arch.w0 << "x" << m.arch.h0 << "x" << m.arch.c0 << "\n";
    out << "blocks:";
    for (const auto& b : m.arch.blocks)
        out << " " << b.stride << "," << b.out_channels << "," << b.dw_kernel << ","
            << b.expansion;
    out << "\n";
    out << "head_kernel: " << m.arch.head_kernel << "\n";
    out << "params: " << count_params(m.arch) << "\n";
    out << "macs_per_pixel: " << format_double(count_macs_per_pixel(m.arch)) << "\n";
    out << "file_bytes: " << bytes.size() << "\n";
    out << "bpp: "
        << format_double(bpp(static_cast<std::int64_t>(bytes.size()), m.t, m.h, m.w)) << "\n";
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"implicit-network video codec"};
    app.name("nervpp");
    app.require_subcommand(1);

    VideoArgs enc_in;
    std::string enc_size, enc_config, enc_output, enc_log;
    std::int64_t enc_epochs = 0;
    std::uint64_t enc_seed = 0;
    double enc_ratio = 0.2;
    auto* enc = app.add_subcommand("encode", "overfit a model and write a .nrv bitstream");
    add_video_flags(enc, enc_in, "input video");
    enc->add_option("--size", enc_size, "architecture preset")
        ->check(CLI::IsMember({"xsmall", "small", "medium", "large"}));
    enc->add_option("--config", enc_config, "codec config file");
    auto* enc_epochs_opt = enc->add_option("--epochs", enc_epochs, "training epochs");
    auto* enc_seed_opt = enc->add_option("--seed", enc_seed, "training seed");
    auto* enc_ratio_opt =
        enc->add_option("--prune-ratio", enc_ratio, "conv weight fraction to prune");
    enc->add_option("--output", enc_output, "output .nrv path")->required();
    enc->add_option("--log", enc_log, "write the training log CSV here");

    std::string dec_input, dec_output, dec_format;
    auto* dec = app.add_subcommand("decode", "decode a .nrv bitstream to frames");
    dec->add_option("--input", dec_input, "input .nrv path")->required();
    dec->add_option("--output", dec_output, "output file (raw) or directory (png-dir)")
        ->required();
    dec->add_option("--format", dec_format, "frame format")
        ->required()
        ->check(CLI::IsMember({"raw", "png-dir"}));

    VideoArgs eval_ref;
    std::string eval_decoded, eval_output;
    auto* ev = app.add_subcommand("eval", "quality metrics between two frame sets");
    eval_ref.path.clear();
    ev->add_option("--input", eval_ref.path, "reference video")->required();
    ev->add_option("--decoded", eval_decoded, "decoded video")->required();
    ev->add_option("--format", eval_ref.format, "frame format of both videos")
        ->required()
        ->check(CLI::IsMember({"raw", "png-dir"}));
    ev->add_option("--frames", eval_ref.frames, "frame count (raw only)");
    ev->add_option("--width", eval_ref.width, "frame width (raw only)");
    ev->add_option("--height", eval_ref.height, "frame height (raw only)");
    ev->add_option("--output", eval_output, "write the metrics CSV here");

    VideoArgs sweep_in;
    std::string sweep_sizes = "xsmall,small,medium,large", sweep_output;
    std::int64_t sweep_epochs = 0;
    std::uint64_t sweep_seed = 0;
    double sweep_ratio = 0.2;
    auto* sweep = app.add_subcommand("rd-sweep", "train the size presets and emit an RD CSV");
    add_video_flags(sweep, sweep_in, "input video");
    sweep->add_option("--sizes", sweep_sizes, "comma-separated preset list");
    auto* sweep_epochs_opt = sweep->add_option("--epochs", sweep_epochs, "training epochs");
    auto* sweep_seed_opt = sweep->add_option("--seed", sweep_seed, "training seed");
    sweep->add_option("--prune-ratio", sweep_ratio, "conv weight fraction to prune");
    sweep->add_option("--output", sweep_output, "output RD CSV path")->required();

    std::string bd_anchor, bd_test;
    auto* bd = app.add_subcommand("bdrate", "BD-rate / BD-PSNR between two RD CSVs");
    bd->add_option("--anchor", bd_anchor, "anchor RD CSV")->required();
    bd->add_option("--test", bd_test, "test RD CSV")->required();

    std::string info_input;
    auto* info = app.add_subcommand("info", "dump a .nrv header");
    info->add_option("--input", info_input, "input .nrv path")->required();

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(std::move(rev));
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? 0 : 1;
    }

    try {
        if (enc->parsed())
            return cmd_encode(enc_in, enc_size, enc_config, enc_epochs_opt->count() > 0,
                              enc_epochs, enc_seed_opt->count() > 0, enc_seed,
                              enc_ratio_opt->count() > 0, enc_ratio, enc_output, enc_log,
                              out);
        if (dec->parsed()) return cmd_decode(dec_input, dec_output, dec_format, out);
        if (ev->parsed()) return cmd_eval(eval_ref, eval_decoded, eval_output, out);
        if (sweep->parsed())
            return cmd_rd_sweep(sweep_in, sweep_sizes, sweep_epochs_opt->count() > 0,
                                sweep_epochs, sweep_seed_opt->count() > 0, sweep_seed,
                                sweep_ratio, sweep_output, out);
        if (bd->parsed()) return cmd_bdrate(bd_anchor, bd_test, out);
        if (info->parsed()) return cmd_info(info_input, out);
        err << "error: no command\n";
        return 1;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        err << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace nervpp::cli
