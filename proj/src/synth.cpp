#include "direcformer/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "direcformer/io.hpp"

namespace df {

namespace {

std::uint64_t splitmix(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::size_t wrap(long long v, std::size_t extent) {
    const long long e = static_cast<long long>(extent);
    long long m = v % e;
    if (m < 0) m += e;
    return static_cast<std::size_t>(m);
}

std::string spec_text(const DatasetSpec& s) {
    std::ostringstream out;
    out << "frames=" << s.frames << "\nheight=" << s.height << "\nwidth=" << s.width
        << "\nchannels=" << s.channels << "\nspeeds=" << s.speeds
        << "\ntrain_clips=" << s.train_clips << "\nval_clips=" << s.val_clips
        << "\ntest_clips=" << s.test_clips << "\nnoise=" << s.noise << "\nbackground="
        << (s.background == Background::PerClassTexture ? "texture" : "blank")
        << "\nseed=" << s.seed << "\n";
    return out.str();
}

DatasetSpec spec_from_text(std::istream& in) {
    DatasetSpec s;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error("bad dataset spec line: " + line);
        std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        if (key == "frames") s.frames = std::stoull(value);
        else if (key == "height") s.height = std::stoull(value);
        else if (key == "width") s.width = std::stoull(value);
        else if (key == "channels") s.channels = std::stoull(value);
        else if (key == "speeds") s.speeds = std::stoull(value);
        else if (key == "train_clips") s.train_clips = std::stoull(value);
        else if (key == "val_clips") s.val_clips = std::stoull(value);
        else if (key == "test_clips") s.test_clips = std::stoull(value);
        else if (key == "noise") s.noise = std::stod(value);
        else if (key == "background") {
            if (value == "blank") s.background = Background::Blank;
            else if (value == "texture") s.background = Background::PerClassTexture;
            else throw std::runtime_error("unknown background mode: " + value);
        }
        else if (key == "seed") s.seed = std::stoull(value);
        else throw std::runtime_error("unknown dataset spec key: " + key);
    }
    return s;
}

}  // namespace

MotionParams motion_for(const DatasetSpec& spec, std::size_t label, std::size_t x0,
                        std::size_t y0) {
    if (label >= spec.classes())
        throw std::invalid_argument("motion_for: label " + std::to_string(label) + " out of " +
                                    std::to_string(spec.classes()) + " classes");
    const std::size_t direction = label / spec.speeds;
    // Patch-scale velocities: motion must cross patch boundaries for temporal
    // attention to see it. 2*speed must not divide the wrap length, or a
    // right-mover and a left-mover at the same speed would alias.
    const long long speed = 4 * (1 + static_cast<long long>(label % spec.speeds));
    MotionParams m{label, 0, 0, x0, y0};
    switch (direction) {
        case 0: m.vx = speed; break;   // right
        case 1: m.vx = -speed; break;  // left
        case 2: m.vy = speed; break;   // down
        default: m.vy = -speed; break; // up
    }
    return m;
}

Tensor render_clip(const DatasetSpec& spec, const MotionParams& motion) {
    const std::size_t T = spec.frames, H = spec.height, W = spec.width, C = spec.channels;
    const std::size_t side = std::max<std::size_t>(H / 8, 2);
    std::vector<double> px(T * H * W * C, 0.0);
    if (spec.background == Background::PerClassTexture) {
        // one grating per (axis, speed) group, shared by opposite directions
        static constexpr int kWave[8][2] = {{1, 0}, {0, 1}, {1, 1},  {2, 1},
                                            {1, 2}, {2, 2}, {-1, 1}, {3, 1}};
        const std::size_t group =
            (motion.label / spec.speeds) / 2 * spec.speeds + motion.label % spec.speeds;
        const int kx = kWave[group % 8][0], ky = kWave[group % 8][1];
        constexpr double kPi = 3.14159265358979323846;
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                const double phase = 2.0 * kPi * (kx * static_cast<double>(x) +
                                                  ky * static_cast<double>(y)) / 16.0;
                const double level = 0.15 * (1.0 + std::sin(phase + 0.5 * group));
                for (std::size_t t = 0; t < T; ++t)
                    for (std::size_t c = 0; c < C; ++c)
                        px[((t * H + y) * W + x) * C + c] = level;
            }
    }
    for (std::size_t t = 0; t < T; ++t) {
        const std::size_t ox = wrap(static_cast<long long>(motion.x0) +
                                        motion.vx * static_cast<long long>(t),
                                    W);
        const std::size_t oy = wrap(static_cast<long long>(motion.y0) +
                                        motion.vy * static_cast<long long>(t),
                                    H);
        for (std::size_t dy = 0; dy < side; ++dy) {
            const std::size_t u = (oy + dy) % H;
            for (std::size_t dx = 0; dx < side; ++dx) {
                const std::size_t v = (ox + dx) % W;
                for (std::size_t c = 0; c < C; ++c)
                    px[((t * H + u) * W + v) * C + c] = 1.0;
            }
        }
    }
    return Tensor::from_data({T, H, W, C}, std::move(px));
}

VideoClip generate_clip(const DatasetSpec& spec, std::uint64_t clip_id) {
    const std::size_t label = static_cast<std::size_t>(clip_id % spec.classes());
    std::uint64_t state = spec.seed * 0x100000001b3ULL + clip_id;
    const std::size_t x0 = static_cast<std::size_t>(splitmix(state) % spec.width);
    const std::size_t y0 = static_cast<std::size_t>(splitmix(state) % spec.height);
    Tensor clean = render_clip(spec, motion_for(spec, label, x0, y0));
    std::vector<double> px = clean.data();
    if (spec.noise > 0.0) {
        for (double& v : px) {
            const double u = (splitmix(state) >> 11) * 0x1.0p-53;
            v = std::clamp(v + spec.noise * (2.0 * u - 1.0), 0.0, 1.0);
        }
    }
    // quantize to single precision so f32 clip files round-trip bitwise
    for (double& v : px) v = static_cast<double>(static_cast<float>(v));
    VideoClip clip;
    clip.pixels = Tensor::from_data(clean.shape(), std::move(px));
    clip.label = label;
    clip.clip_id = clip_id;
    return clip;
}

std::vector<std::size_t> Manifest::split_indices(const std::string& split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (rows[i].split == split) out.push_back(i);
    return out;
}

Manifest generate_dataset(const DatasetSpec& spec, const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create dataset directory " + out_dir + ": " + ec.message());

    Manifest manifest;
    manifest.spec = spec;
    manifest.dir = out_dir;
    for (std::uint64_t id = 0; id < spec.total_clips(); ++id) {
        VideoClip clip = generate_clip(spec, id);
        std::string file = "clip_" + std::to_string(id) + ".dft";
        save_tensor(out_dir + "/" + file, clip.pixels, Dtype::f32);
        std::string split = id < spec.train_clips ? "train"
                            : id < spec.train_clips + spec.val_clips ? "val"
                                                                     : "test";
        manifest.rows.push_back({id, file, clip.label, split});
    }
    save_manifest(manifest);
    return manifest;
}

void save_manifest(const Manifest& manifest) {
    const std::string path = manifest.dir + "/manifest.tsv";
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "DIRECTEDMOTION v1\n";
    for (const auto& row : manifest.rows)
        out << row.clip_id << "\t" << row.file << "\t" << row.label << "\t" << row.split << "\n";
    if (!out) throw IoError("manifest write failed: " + path);
    std::ofstream spec_out(manifest.dir + "/dataset_spec.txt");
    spec_out << spec_text(manifest.spec);
}

Manifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    std::string header;
    if (!std::getline(in, header) || header != "DIRECTEDMOTION v1")
        throw IoError("not a DIRECTEDMOTION manifest: " + path);
    Manifest manifest;
    manifest.dir = std::filesystem::path(path).parent_path().string();
    if (manifest.dir.empty()) manifest.dir = ".";
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        ManifestRow row;
        std::string label;
        if (!(std::getline(ls, line, '\t'))) throw IoError("bad manifest row");
        row.clip_id = std::stoull(line);
        if (!std::getline(ls, row.file, '\t') || !std::getline(ls, label, '\t') ||
            !std::getline(ls, row.split))
            throw IoError("bad manifest row in " + path);
        row.label = std::stoull(label);
        manifest.rows.push_back(std::move(row));
    }
    std::ifstream spec_in(manifest.dir + "/dataset_spec.txt");
    if (spec_in) manifest.spec = spec_from_text(spec_in);
    return manifest;
}

std::vector<std::pair<std::size_t, std::size_t>> crop_offsets(std::size_t data_hw,
                                                              std::size_t model_hw,
                                                              CropProtocol protocol) {
    if (model_hw > data_hw)
        throw std::invalid_argument("crop: model window " + std::to_string(model_hw) +
                                    " exceeds data frame " + std::to_string(data_hw));
    const std::size_t span = data_hw - model_hw;
    if (protocol == CropProtocol::Center || span == 0) return {{span / 2, span / 2}};
    return {{0, 0}, {span / 2, span / 2}, {span, span}};
}

Tensor crop_clip(const Tensor& pixels, std::size_t off_y, std::size_t off_x,
                 std::size_t out_h, std::size_t out_w) {
    const auto& shape = pixels.shape();
    if (shape.size() != 4) throw std::invalid_argument("crop_clip: expected {T,H,W,C}");
    const std::size_t T = shape[0], H = shape[1], W = shape[2], C = shape[3];
    if (off_y + out_h > H || off_x + out_w > W)
        throw std::invalid_argument("crop_clip: window out of bounds");
    std::vector<double> out(T * out_h * out_w * C);
    const auto& in = pixels.data();
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t u = 0; u < out_h; ++u)
            for (std::size_t v = 0; v < out_w; ++v)
                for (std::size_t c = 0; c < C; ++c)
                    out[((t * out_h + u) * out_w + v) * C + c] =
                        in[((t * H + off_y + u) * W + off_x + v) * C + c];
    return Tensor::from_data({T, out_h, out_w, C}, std::move(out));
}

std::vector<VideoClip> load_batch(const Manifest& manifest, const std::string& split,
                                  const std::vector<std::size_t>& indices) {
    const std::vector<std::size_t> split_rows = manifest.split_indices(split);
    std::vector<VideoClip> out;
    out.reserve(indices.size());
    for (std::size_t idx : indices) {
        if (idx >= split_rows.size())
            throw std::out_of_range("load_batch: index " + std::to_string(idx) + " out of " +
                                    std::to_string(split_rows.size()) + " " + split + " clips");
        const ManifestRow& row = manifest.rows[split_rows[idx]];
        VideoClip clip;
        clip.pixels = load_tensor(manifest.dir + "/" + row.file);
        clip.label = row.label;
        clip.clip_id = row.clip_id;
        out.push_back(std::move(clip));
    }
    return out;
}

}  // namespace df
