#pragma once

#include <string>
#include <vector>

#include "dpgan/scene.hpp"
#include "dpgan/tensor.hpp"

namespace dpgan {

/// On-disk dataset: meta.txt with key=value lines, labels/%06d.png as 8-bit
/// grayscale class ids, images/%06d.png as 8-bit RGB. Image tensors quantize
/// to 8 bits on save and load back to the exact same bytes.
struct Dataset {
    SceneSpec spec;
    std::vector<std::string> names;
    std::vector<LabelMap> labels;
    std::vector<Tensor> images;  // each [3,H,W] in [-1,1]

    std::size_t size() const { return labels.size(); }
};

void write_png_gray8(const std::string& path, int w, int h, const std::vector<std::uint8_t>& data);
void write_png_rgb8(const std::string& path, int w, int h, const std::vector<std::uint8_t>& data);
std::vector<std::uint8_t> read_png_gray8(const std::string& path, int& w, int& h);
std::vector<std::uint8_t> read_png_rgb8(const std::string& path, int& w, int& h);

/// [-1,1] -> rounded byte; the inverse maps byte b to b/127.5 - 1.
std::uint8_t quantize_unit(double v);
double dequantize_unit(std::uint8_t b);

Tensor image_from_bytes(const std::vector<std::uint8_t>& rgb, int h, int w);
std::vector<std::uint8_t> image_to_bytes(const Tensor& image);

void save_dataset(const std::string& dir, const SceneSpec& spec,
                  const std::vector<Scene>& scenes);
Dataset load_dataset(const std::string& dir);

/// Deterministic dataset synthesis plus the bucket-coverage check: the
/// realized scenes must contain at least one small and one large connected
/// object component.
std::vector<Scene> generate_dataset(const SceneSpec& spec, std::uint64_t seed, int count);

}  // namespace dpgan
