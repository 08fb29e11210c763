#pragma once

#include <array>
#include <filesystem>
#include <random>
#include <vector>

#include "json.hpp"
#include "sf3d/tensor.hpp"

namespace sf3d {

/// Synthetic nested-ellipsoid volumes. Foreground class c is drawn inside a
/// class c-1 ellipsoid, mimicking nested tumour sub-regions.
struct SynthConfig {
    int extent = 32;
    int num_classes = 4;
    int modalities = 4;
    int min_shapes_per_class = 1;
    int max_shapes_per_class = 1;
    double outer_axis_min = 10.0;  // semi-axes of class-1 ellipsoids, voxels
    double outer_axis_max = 14.0;
    double inner_ratio_min = 0.65;  // child semi-axis / parent semi-axis
    double inner_ratio_max = 0.8;
    double noise_sigma = 0.5;
    uint64_t seed = 0;

    void validate() const;
};

nlohmann::json to_json(const SynthConfig& cfg);
/// Unknown keys and type errors throw InvalidConfig; `validate` also checks ranges.
SynthConfig synth_config_from_json(const nlohmann::json& j, bool validate = true);

struct Ellipsoid {
    int label = 0;
    std::array<double, 3> center{};  // (z, y, x) voxel coordinates
    std::array<double, 3> axes{};

    bool contains(double z, double y, double x) const;
};

struct SampleMeta {
    uint64_t seed = 0;
    int64_t index = 0;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::vector<Ellipsoid> shapes;
};

struct VolumeSample {
    Tensor image;    // [modalities, D, H, W], z-scored per modality
    IntTensor mask;  // [D, H, W]
    SampleMeta meta;
    int num_classes = 0;
};

/// Pure function of (cfg, index).
VolumeSample generate(const SynthConfig& cfg, int64_t index);

/// Mirrors the listed axes (0 = depth, 1 = height, 2 = width) of image and mask.
VolumeSample flip(const VolumeSample& s, const std::array<bool, 3>& axes);
/// Random flips (p = 0.5 per axis) then per-modality intensity scale U(0.9, 1.1).
VolumeSample augment(const VolumeSample& s, std::mt19937_64& rng);

/// Stacks samples into a [B, C, D, H, W] image and [B, D, H, W] mask.
std::pair<Tensor, IntTensor> make_batch(const std::vector<VolumeSample>& samples);

/// VSEG1 file: "VSEG1", uint32 LE header length, JSON header, float32 LE image, int32 LE mask.
void save_volume(const VolumeSample& s, const std::filesystem::path& path);
VolumeSample load_volume(const std::filesystem::path& path);

/// Writes `count` samples starting at `first_index` plus index.json into dir.
void write_dataset(const SynthConfig& cfg, int64_t first_index, int64_t count, const std::filesystem::path& dir);
/// Loads every sample listed in dir/index.json, in listed order.
std::vector<VolumeSample> load_dataset(const std::filesystem::path& dir);

}  // namespace sf3d
