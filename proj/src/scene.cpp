#include "dpgan/scene.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dpgan {

namespace {

constexpr double kPi = 3.14159265358979323846;

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) r = c, g = x;
    else if (hp < 2) r = x, g = c;
    else if (hp < 3) g = c, b = x;
    else if (hp < 4) g = x, b = c;
    else if (hp < 5) r = x, b = c;
    else r = c, b = x;
    const double m = v - c;
    rgb[0] = r + m;
    rgb[1] = g + m;
    rgb[2] = b + m;
}

enum class Shape { Circle, Square, Triangle };

Shape shape_of_class(int cls) {
    switch ((cls - 1) % 3) {
        case 0: return Shape::Circle;
        case 1: return Shape::Square;
        default: return Shape::Triangle;
    }
}

struct Obj {
    Shape shape;
    int cls;
    double cx, cy, area;
};

bool covers(const Obj& o, double px, double py) {
    switch (o.shape) {
        case Shape::Circle: {
            const double r = std::sqrt(o.area / kPi);
            const double dx = px - o.cx, dy = py - o.cy;
            return dx * dx + dy * dy <= r * r;
        }
        case Shape::Square: {
            const double half = 0.5 * std::sqrt(o.area);
            return std::abs(px - o.cx) <= half && std::abs(py - o.cy) <= half;
        }
        case Shape::Triangle: {
            const double side = std::sqrt(4.0 * o.area / std::sqrt(3.0));
            const double h = side * std::sqrt(3.0) / 2.0;
            const double ax = o.cx, ay = o.cy - 2.0 * h / 3.0;
            const double bx = o.cx - side / 2.0, by = o.cy + h / 3.0;
            const double cx2 = o.cx + side / 2.0, cy2 = o.cy + h / 3.0;
            auto edge = [&](double x1, double y1, double x2, double y2) {
                return (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1);
            };
            const double d1 = edge(ax, ay, bx, by);
            const double d2 = edge(bx, by, cx2, cy2);
            const double d3 = edge(cx2, cy2, ax, ay);
            const bool neg = (d1 < 0) || (d2 < 0) || (d3 < 0);
            const bool pos = (d1 > 0) || (d2 > 0) || (d3 > 0);
            return !(neg && pos);
        }
    }
    return false;
}

LabelMap draw_labels(const SceneSpec& spec, Rng& rng) {
    LabelMap label(spec.height, spec.width);
    const int n_obj = spec.min_objects + rng.uniform_int(spec.max_objects - spec.min_objects + 1);
    const double area_cap = 0.4 * spec.height * spec.width;
    for (int i = 0; i < n_obj; ++i) {
        Obj o;
        o.cls = 1 + rng.uniform_int(spec.num_classes - 1);
        o.shape = shape_of_class(o.cls);
        const double u = rng.uniform();
        if (u < spec.p_small)
            o.area = rng.uniform(24.0, 0.85 * spec.small_max);
        else if (u < spec.p_small + spec.p_large)
            o.area = rng.uniform(1.15 * spec.large_min, std::min(2.2 * spec.large_min, area_cap));
        else
            o.area = rng.uniform(1.15 * spec.small_max, 0.85 * spec.large_min);
        o.cx = rng.uniform(0.1 * spec.width, 0.9 * spec.width);
        o.cy = rng.uniform(0.1 * spec.height, 0.9 * spec.height);
        for (int y = 0; y < spec.height; ++y)
            for (int x = 0; x < spec.width; ++x)
                if (covers(o, x + 0.5, y + 0.5))
                    label.at(y, x) = static_cast<std::uint8_t>(o.cls);
    }
    return label;
}

}  // namespace

void SceneSpec::validate() const {
    if (height <= 0 || width <= 0) throw std::invalid_argument("scene spec: zero area");
    if (num_classes < 2) throw std::invalid_argument("scene spec: no object classes");
    if (num_classes > 255) throw std::invalid_argument("scene spec: too many classes for 8-bit labels");
    if (min_objects < 1 || max_objects < min_objects)
        throw std::invalid_argument("scene spec: bad object count range");
    if (small_max >= large_min) throw std::invalid_argument("scene spec: bucket thresholds inverted");
    if (p_small < 0 || p_large < 0 || p_small + p_large > 1)
        throw std::invalid_argument("scene spec: bad bucket probabilities");
    if (noise_sigma < 0) throw std::invalid_argument("scene spec: negative noise");
}

std::vector<std::string> class_names(const SceneSpec& spec) {
    std::vector<std::string> names{"background"};
    for (int c = 1; c < spec.num_classes; ++c) {
        const char* base = "circle";
        switch (shape_of_class(c)) {
            case Shape::Circle: base = "circle"; break;
            case Shape::Square: base = "square"; break;
            case Shape::Triangle: base = "triangle"; break;
        }
        names.push_back(std::string(base) + "_" + std::to_string(c));
    }
    return names;
}

void class_color(const SceneSpec& spec, int cls, double rgb[3]) {
    if (cls == 0) {
        rgb[0] = -0.70;
        rgb[1] = -0.70;
        rgb[2] = -0.65;
        return;
    }
    const double hue = static_cast<double>(cls - 1) / static_cast<double>(spec.num_classes - 1);
    double unit[3];
    hsv_to_rgb(hue, 0.8, 0.85, unit);
    for (int i = 0; i < 3; ++i) rgb[i] = unit[i] * 2.0 - 1.0;
}

Scene generate_scene(const SceneSpec& spec, std::uint64_t seed, std::uint64_t index) {
    spec.validate();
    const int H = spec.height, W = spec.width;
    Scene scene;
    Rng rng(0);
    bool have_background = false;
    for (std::uint64_t attempt = 0; attempt < 8 && !have_background; ++attempt) {
        rng = Rng(seed).derive(index).derive(attempt);
        scene.label = draw_labels(spec, rng);
        have_background =
            std::any_of(scene.label.v.begin(), scene.label.v.end(), [](auto c) { return c == 0; });
    }
    if (!have_background)
        for (int x = 0; x < W; ++x) scene.label.at(0, x) = 0;  // deterministic last resort

    // Rendering draws from the same stream, after the geometry.
    scene.image = Tensor({3, H, W});
    const double ga = rng.uniform(-spec.shade, spec.shade);
    const double gb = rng.uniform(-spec.shade, spec.shade);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double rgb[3];
            class_color(spec, scene.label.at(y, x), rgb);
            const double nx = W > 1 ? (2.0 * x / (W - 1) - 1.0) : 0.0;
            const double ny = H > 1 ? (2.0 * y / (H - 1) - 1.0) : 0.0;
            const double light = 1.0 + ga * nx + gb * ny;
            const double noise = spec.noise_sigma * rng.gaussian();
            for (int c = 0; c < 3; ++c) {
                double lum = (rgb[c] + 1.0) / 2.0;
                lum = lum * light + noise;
                scene.image.at3(c, y, x) = std::clamp(lum * 2.0 - 1.0, -1.0, 1.0);
            }
        }
    return scene;
}

Tensor one_hot(std::span<const LabelMap> labels, int num_classes) {
    if (labels.empty()) throw std::invalid_argument("one_hot: empty batch");
    const int B = static_cast<int>(labels.size());
    const int H = labels[0].h, W = labels[0].w;
    Tensor out({B, num_classes, H, W});
    for (int b = 0; b < B; ++b) {
        if (labels[b].h != H || labels[b].w != W)
            throw std::invalid_argument("one_hot: mismatched label sizes");
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const int cls = labels[b].at(y, x);
                if (cls >= num_classes) throw std::invalid_argument("one_hot: label out of range");
                out[out.idx4(b, cls, y, x)] = 1.0;
            }
    }
    return out;
}

std::vector<double> class_frequencies(std::span<const LabelMap> labels, int num_classes) {
    if (labels.empty()) throw std::invalid_argument("class_frequencies: empty batch");
    std::vector<double> alpha(static_cast<std::size_t>(num_classes), 0.0);
    std::vector<int> maps_with(static_cast<std::size_t>(num_classes), 0);
    std::vector<std::size_t> count(static_cast<std::size_t>(num_classes));
    for (const auto& lm : labels) {
        std::fill(count.begin(), count.end(), 0);
        for (auto cls : lm.v) {
            if (cls >= num_classes)
                throw std::invalid_argument("class_frequencies: label out of range");
            ++count[cls];
        }
        const double total = static_cast<double>(lm.v.size());
        for (int c = 0; c < num_classes; ++c)
            if (count[c] > 0) {
                alpha[c] += total / static_cast<double>(count[c]);
                ++maps_with[c];
            }
    }
    for (int c = 0; c < num_classes; ++c)
        if (maps_with[c] > 0) alpha[c] /= static_cast<double>(maps_with[c]);
    return alpha;
}

namespace {

// One flood-fill pass shared by the component summary and the region ids.
template <typename Visit>
void flood_regions(const LabelMap& label, bool include_background, Visit visit) {
    const int H = label.h, W = label.w;
    std::vector<char> seen(static_cast<std::size_t>(H) * W, 0);
    std::vector<int> stack;
    int region = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const int start = y * W + x;
            if (seen[start]) continue;
            const std::uint8_t cls = label.v[static_cast<std::size_t>(start)];
            if (cls == 0 && !include_background) continue;
            stack.assign(1, start);
            seen[start] = 1;
            while (!stack.empty()) {
                const int cur = stack.back();
                stack.pop_back();
                const int cy = cur / W, cx = cur % W;
                visit(region, cls, cy, cx);
                const int ny[4] = {cy - 1, cy + 1, cy, cy};
                const int nx[4] = {cx, cx, cx - 1, cx + 1};
                for (int k = 0; k < 4; ++k) {
                    if (ny[k] < 0 || ny[k] >= H || nx[k] < 0 || nx[k] >= W) continue;
                    const int ni = ny[k] * W + nx[k];
                    if (!seen[ni] && label.v[static_cast<std::size_t>(ni)] == cls) {
                        seen[ni] = 1;
                        stack.push_back(ni);
                    }
                }
            }
            ++region;
        }
}

}  // namespace

std::vector<Component> connected_components(const LabelMap& label) {
    std::vector<Component> comps;
    flood_regions(label, false, [&](int region, std::uint8_t cls, int y, int x) {
        if (region == static_cast<int>(comps.size()))
            comps.push_back(Component{cls, 0, y, x, y, x});
        Component& c = comps[static_cast<std::size_t>(region)];
        ++c.pixels;
        c.y0 = std::min(c.y0, y);
        c.y1 = std::max(c.y1, y);
        c.x0 = std::min(c.x0, x);
        c.x1 = std::max(c.x1, x);
    });
    return comps;
}

RegionMap region_map(const LabelMap& label, bool include_background) {
    RegionMap rm;
    rm.id.assign(static_cast<std::size_t>(label.h) * label.w, -1);
    flood_regions(label, include_background, [&](int region, std::uint8_t, int y, int x) {
        rm.id[static_cast<std::size_t>(y) * label.w + x] = region;
        rm.regions = std::max(rm.regions, region + 1);
    });
    return rm;
}

}  // namespace dpgan
