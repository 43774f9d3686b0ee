#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dpgan/rng.hpp"
#include "dpgan/tensor.hpp"

namespace dpgan {

struct LabelMap {
    int h = 0, w = 0;
    std::vector<std::uint8_t> v;

    LabelMap() = default;
    LabelMap(int h_, int w_) : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, 0) {}
    std::uint8_t& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
    std::uint8_t at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

/// Parameters of the procedural multi-scale scene family. Class 0 is the
/// background; classes 1..num_classes-1 draw a primitive determined by the
/// class id. Object pixel-count buckets ("small" strictly below small_max,
/// "large" strictly above large_min) exist so scale-dependent metrics have
/// populated bins.
struct SceneSpec {
    int num_classes = 8;
    int height = 64, width = 64;
    int min_objects = 1, max_objects = 4;
    int small_max = 156;
    int large_min = 625;
    double p_small = 0.4, p_large = 0.3;
    double noise_sigma = 0.03;
    double shade = 0.3;

    void validate() const;
};

struct Scene {
    LabelMap label;
    Tensor image;  // [3,H,W], values in [-1,1]
};

/// Scene class names: background plus one primitive name per object class.
std::vector<std::string> class_names(const SceneSpec& spec);

/// Per-class base color in [-1,1], distinct for every class.
void class_color(const SceneSpec& spec, int cls, double rgb[3]);

/// Deterministic scene synthesis: a pure function of (spec, seed, index).
/// At least one background pixel is guaranteed.
Scene generate_scene(const SceneSpec& spec, std::uint64_t seed, std::uint64_t index);

/// One-hot encoding of a batch of label maps: [B, num_classes, H, W].
Tensor one_hot(std::span<const LabelMap> labels, int num_classes);

/// Inverse per-pixel class frequency weights: for each class present in the
/// batch, the mean over maps containing it of (H*W / pixel count in that
/// map). Classes absent from every map get weight 0.
std::vector<double> class_frequencies(std::span<const LabelMap> labels, int num_classes);

struct Component {
    int cls = 0;
    int pixels = 0;
    int y0 = 0, x0 = 0, y1 = 0, x1 = 0;  // inclusive bounding box
};

/// 4-connected components of the object classes (class 0 is ignored).
std::vector<Component> connected_components(const LabelMap& label);

/// Per-pixel region ids in scan-discovery order. Background pixels get -1
/// unless include_background is set, in which case their regions count too.
struct RegionMap {
    std::vector<int> id;  // h*w entries
    int regions = 0;
};

RegionMap region_map(const LabelMap& label, bool include_background);

}  // namespace dpgan
