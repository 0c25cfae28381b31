// DirectedMotion: a deterministic synthetic video classification task whose
// labels are order-sensitive by construction — a bright square translating
// with constant per-class velocity, wrapping at the borders, so reversing a
// clip's frames maps its label to the opposite-direction class.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "direcformer/permutations.hpp"
#include "direcformer/tensor.hpp"

namespace df {

struct VideoClip {
    Tensor pixels;  // {T,H,W,C}, values in [0,1]
    std::size_t label = 0;
    std::optional<PermutationSpec> permutation;
    std::uint64_t clip_id = 0;
};

// Blank backgrounds are zero; per-class texture adds a static grating shared
// by the two opposite directions of each (axis, speed) group, so reversing a
// clip still maps its label to the opposite-direction class.
enum class Background { Blank, PerClassTexture };

struct DatasetSpec {
    std::size_t frames = 8;
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t channels = 1;
    // 4 directions (right, left, down, up) x 2 speeds
    std::size_t speeds = 2;
    std::size_t train_clips = 2000;
    std::size_t val_clips = 250;
    std::size_t test_clips = 250;
    double noise = 0.05;
    Background background = Background::Blank;
    std::uint64_t seed = 0;

    std::size_t classes() const { return 4 * speeds; }
    std::size_t total_clips() const { return train_clips + val_clips + test_clips; }
};

struct MotionParams {
    std::size_t label;
    long long vx, vy;        // pixels per frame, signed
    std::size_t x0, y0;      // square top-left at t=0
};

// direction = label / speeds, speed index = label % speeds
MotionParams motion_for(const DatasetSpec& spec, std::size_t label, std::size_t x0,
                        std::size_t y0);

// Closed-form renderer: frame t draws the square at (x0 + vx*t, y0 + vy*t)
// mod (W,H); noise-free.
Tensor render_clip(const DatasetSpec& spec, const MotionParams& motion);

// label and start position derived from clip_id; additive uniform noise in
// [-noise, noise] then clamp to [0,1]. Pure function of (spec, clip_id).
VideoClip generate_clip(const DatasetSpec& spec, std::uint64_t clip_id);

struct ManifestRow {
    std::uint64_t clip_id;
    std::string file;  // relative to the manifest directory
    std::size_t label;
    std::string split;  // train | val | test
};

struct Manifest {
    DatasetSpec spec;
    std::string dir;
    std::vector<ManifestRow> rows;

    std::vector<std::size_t> split_indices(const std::string& split) const;
};

// Writes one DFT1 f32 tensor file per clip plus a text manifest; splits are
// disjoint clip_id ranges (train, then val, then test), labels round-robin.
Manifest generate_dataset(const DatasetSpec& spec, const std::string& out_dir);

void save_manifest(const Manifest& manifest);
Manifest load_manifest(const std::string& path);

enum class CropProtocol { Center, ThreeCrop };

// Offsets of the evaluation crops for a model window inside a data frame:
// top-left, center, bottom-right (one center crop under Center protocol).
std::vector<std::pair<std::size_t, std::size_t>> crop_offsets(std::size_t data_hw,
                                                              std::size_t model_hw,
                                                              CropProtocol protocol);

Tensor crop_clip(const Tensor& pixels, std::size_t off_y, std::size_t off_x,
                 std::size_t out_h, std::size_t out_w);

// Clips reconstructed bitwise from disk; indices are positions within the split.
std::vector<VideoClip> load_batch(const Manifest& manifest, const std::string& split,
                                  const std::vector<std::size_t>& indices);

}  // namespace df
