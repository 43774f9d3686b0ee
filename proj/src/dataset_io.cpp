#include "dpgan/dataset_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dpgan {

namespace fs = std::filesystem;

namespace {

struct FileCloser {
    std::FILE* f;
    ~FileCloser() {
        if (f) std::fclose(f);
    }
};

void write_png(const std::string& path, int w, int h, int color_type, int channels,
               const std::vector<std::uint8_t>& data) {
    if (data.size() != static_cast<std::size_t>(w) * h * channels)
        throw std::invalid_argument("png write: data size does not match dimensions");
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("png write: cannot open " + path);
    FileCloser closer{f};
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png write: init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png write: encode failed for " + path);
    }
    png_init_io(png, f);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < h; ++y)
        png_write_row(png, const_cast<png_bytep>(data.data() + static_cast<std::size_t>(y) * w * channels));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::vector<std::uint8_t> read_png(const std::string& path, int want_color_type, int channels,
                                   int& w, int& h) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("png read: cannot open " + path);
    FileCloser closer{f};
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("png read: init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("png read: decode failed for " + path);
    }
    png_init_io(png, f);
    png_read_info(png, info);
    const int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);
    if (want_color_type == PNG_COLOR_TYPE_RGB) {
        if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
        if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
            png_set_gray_to_rgb(png);
        if (bit_depth == 16) png_set_strip_16(png);
    } else {
        if (color_type != PNG_COLOR_TYPE_GRAY || bit_depth != 8) {
            png_destroy_read_struct(&png, &info, nullptr);
            throw std::runtime_error("png read: " + path + " must be 8-bit grayscale");
        }
    }
    png_read_update_info(png, info);
    w = static_cast<int>(png_get_image_width(png, info));
    h = static_cast<int>(png_get_image_height(png, info));
    if (png_get_rowbytes(png, info) != static_cast<std::size_t>(w) * channels) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("png read: unexpected row layout in " + path);
    }
    std::vector<std::uint8_t> data(static_cast<std::size_t>(w) * h * channels);
    for (int y = 0; y < h; ++y)
        png_read_row(png, data.data() + static_cast<std::size_t>(y) * w * channels, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return data;
}

std::string sample_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06d.png", i);
    return buf;
}

}  // namespace

void write_png_gray8(const std::string& path, int w, int h,
                     const std::vector<std::uint8_t>& data) {
    write_png(path, w, h, PNG_COLOR_TYPE_GRAY, 1, data);
}

void write_png_rgb8(const std::string& path, int w, int h, const std::vector<std::uint8_t>& data) {
    write_png(path, w, h, PNG_COLOR_TYPE_RGB, 3, data);
}

std::vector<std::uint8_t> read_png_gray8(const std::string& path, int& w, int& h) {
    return read_png(path, PNG_COLOR_TYPE_GRAY, 1, w, h);
}

std::vector<std::uint8_t> read_png_rgb8(const std::string& path, int& w, int& h) {
    return read_png(path, PNG_COLOR_TYPE_RGB, 3, w, h);
}

std::uint8_t quantize_unit(double v) {
    const double scaled = std::round((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5);
    return static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

double dequantize_unit(std::uint8_t b) { return static_cast<double>(b) / 127.5 - 1.0; }

Tensor image_from_bytes(const std::vector<std::uint8_t>& rgb, int h, int w) {
    Tensor img({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at3(c, y, x) =
                    dequantize_unit(rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c]);
    return img;
}

std::vector<std::uint8_t> image_to_bytes(const Tensor& image) {
    const int h = image.dim(1), w = image.dim(2);
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
                    quantize_unit(image.at3(c, y, x));
    return rgb;
}

void save_dataset(const std::string& dir, const SceneSpec& spec,
                  const std::vector<Scene>& scenes) {
    spec.validate();
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "labels");
    std::ofstream meta(fs::path(dir) / "meta.txt");
    if (!meta) throw std::runtime_error("save_dataset: cannot write meta.txt in " + dir);
    meta << "num_classes=" << spec.num_classes << "\n";
    meta << "height=" << spec.height << "\n";
    meta << "width=" << spec.width << "\n";
    meta << "count=" << scenes.size() << "\n";
    meta << "small_max=" << spec.small_max << "\n";
    meta << "large_min=" << spec.large_min << "\n";
    const auto names = class_names(spec);
    for (std::size_t c = 0; c < names.size(); ++c)
        meta << "class_" << c << "=" << names[c] << "\n";
    meta.close();
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const auto& s = scenes[i];
        write_png_gray8((fs::path(dir) / "labels" / sample_name(static_cast<int>(i))).string(),
                        s.label.w, s.label.h, s.label.v);
        write_png_rgb8((fs::path(dir) / "images" / sample_name(static_cast<int>(i))).string(),
                       spec.width, spec.height, image_to_bytes(s.image));
    }
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream meta(fs::path(dir) / "meta.txt");
    if (!meta) throw std::runtime_error("load_dataset: missing meta.txt in " + dir);
    Dataset ds;
    int count = -1;
    std::string line;
    std::vector<std::pair<int, std::string>> classes;
    while (std::getline(meta, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        if (key == "num_classes") ds.spec.num_classes = std::stoi(val);
        else if (key == "height") ds.spec.height = std::stoi(val);
        else if (key == "width") ds.spec.width = std::stoi(val);
        else if (key == "count") count = std::stoi(val);
        else if (key == "small_max") ds.spec.small_max = std::stoi(val);
        else if (key == "large_min") ds.spec.large_min = std::stoi(val);
        else if (key.rfind("class_", 0) == 0)
            classes.emplace_back(std::stoi(key.substr(6)), val);
    }
    if (count < 0) throw std::runtime_error("load_dataset: meta.txt lacks count");
    ds.spec.validate();
    ds.names.resize(static_cast<std::size_t>(ds.spec.num_classes));
    for (auto& [idx, name] : classes)
        if (idx >= 0 && idx < ds.spec.num_classes) ds.names[static_cast<std::size_t>(idx)] = name;
    ds.labels.reserve(static_cast<std::size_t>(count));
    ds.images.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        int w = 0, h = 0;
        auto lab = read_png_gray8((fs::path(dir) / "labels" / sample_name(i)).string(), w, h);
        if (w != ds.spec.width || h != ds.spec.height)
            throw std::runtime_error("load_dataset: label size mismatch at sample " +
                                     std::to_string(i));
        for (auto v : lab)
            if (v >= ds.spec.num_classes)
                throw std::runtime_error("load_dataset: label value out of range at sample " +
                                         std::to_string(i));
        LabelMap lm(h, w);
        lm.v = std::move(lab);
        ds.labels.push_back(std::move(lm));
        auto rgb = read_png_rgb8((fs::path(dir) / "images" / sample_name(i)).string(), w, h);
        if (w != ds.spec.width || h != ds.spec.height)
            throw std::runtime_error("load_dataset: image size mismatch at sample " +
                                     std::to_string(i));
        ds.images.push_back(image_from_bytes(rgb, h, w));
    }
    return ds;
}

std::vector<Scene> generate_dataset(const SceneSpec& spec, std::uint64_t seed, int count) {
    spec.validate();
    if (count < 1) throw std::invalid_argument("generate_dataset: count must be positive");
    std::vector<Scene> scenes;
    scenes.reserve(static_cast<std::size_t>(count));
    bool has_small = false, has_large = false;
    for (int i = 0; i < count; ++i) {
        scenes.push_back(generate_scene(spec, seed, static_cast<std::uint64_t>(i)));
        for (const auto& comp : connected_components(scenes.back().label)) {
            if (comp.pixels < spec.small_max) has_small = true;
            if (comp.pixels > spec.large_min) has_large = true;
        }
    }
    if (!has_small || !has_large)
        throw std::runtime_error(
            "generate_dataset: realized scenes do not cover both scale buckets");
    return scenes;
}

}  // namespace dpgan
