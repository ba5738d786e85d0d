#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sftnet/tensor.hpp"

namespace sft {

// Synthetic micro-mass dataset plus the preprocessing chain: resizing,
// CLAHE, artifact removal, grayscale replication, PGM I/O and the
// size-based train/test split.

struct SegmentationSample {
    std::string id;
    Tensor<float> image;  // (H, W, 1), values in [0, 1]
    Tensor<float> mask;   // (H, W, 1), values in {0, 1}
    int64_t mass_area_px = 0;
};

struct SynthSpec {
    int64_t count = 16;
    int64_t h = 64, w = 64;
    int64_t area_min = 20, area_max = 80;   // per-mass pixel area
    int64_t blobs_min = 1, blobs_max = 1;
    double noise_amplitude = 0.1;           // background texture
    int64_t smooth_radius = 2;
    int64_t distractors_min = 2, distractors_max = 2;  // bright non-mass streaks
    uint64_t seed = 1;
    int64_t split_threshold_px = 0;  // masses below this go to the test split

    void validate() const;
};

std::vector<SegmentationSample> generate_synthetic(const SynthSpec& spec);

enum class ResizeMode { Bilinear, Nearest };

// (H, W, C) -> (out_h, out_w, C). Bilinear samples at pixel centers
// (half-pixel convention); nearest picks the covering source pixel, so the
// output value set is a subset of the input's.
Tensor<float> resize(const Tensor<float>& img, int64_t out_h, int64_t out_w, ResizeMode mode);

// Contrast-limited adaptive histogram equalization: tiles x tiles grid,
// 256-bin clipped histograms with uniform excess redistribution, bilinear
// blending between the four surrounding tile mappings. A tile whose raw
// histogram is concentrated in a single bin maps values through unchanged,
// which makes constant images exact fixed points.
Tensor<float> clahe(const Tensor<float>& img, int64_t tiles = 8, double clip_limit = 2.0);

// Keeps only the largest 8-connected component of the thresholded image;
// everything else is zeroed.
Tensor<float> remove_artifacts(const Tensor<float>& img, float threshold);

template <class T>
Tensor<T> gray_to_3ch(const Tensor<T>& img) {
    if (img.rank() != 3 || img.shape()[2] != 1)
        throw DimensionError("gray_to_3ch expects (H,W,1), got " + shape_str(img.shape()));
    const int64_t H = img.shape()[0], W = img.shape()[1];
    std::vector<T> out(size_t(H * W * 3));
    const auto& v = img.values();
    for (int64_t i = 0; i < H * W; ++i)
        out[size_t(3 * i)] = out[size_t(3 * i + 1)] = out[size_t(3 * i + 2)] = v[size_t(i)];
    return Tensor<T>::from_data({H, W, 3}, std::move(out));
}

// Binary PGM (P5), maxval 255. Values quantize to 8 bits on save; files we
// write round-trip byte for byte.
void save_pgm(const std::string& path, const Tensor<float>& img);
Tensor<float> load_pgm(const std::string& path);
void save_mask_pgm(const std::string& path, const Tensor<float>& mask);  // {0,1} -> {0,255}
Tensor<float> load_mask_pgm(const std::string& path);                    // >=128 -> 1

// Samples with mass_area_px < threshold form the test split; order is
// preserved in both outputs.
std::pair<std::vector<SegmentationSample>, std::vector<SegmentationSample>> split_by_mass_size(
    const std::vector<SegmentationSample>& samples, int64_t test_threshold_px);

// Dataset directory: images/<id>.pgm, masks/<id>.pgm, manifest.csv with
// columns id, mass_area_px, split.
void write_dataset(const std::string& dir, const std::vector<SegmentationSample>& samples,
                   int64_t split_threshold_px);

struct Dataset {
    std::vector<SegmentationSample> train;
    std::vector<SegmentationSample> test;
};
Dataset load_dataset(const std::string& dir);

}  // namespace sft
