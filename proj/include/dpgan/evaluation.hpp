#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dpgan/generator.hpp"
#include "dpgan/nn.hpp"
#include "dpgan/scene.hpp"

namespace dpgan {

/// Mean and covariance summary of a feature cloud. sigma is d x d row-major
/// and symmetric; eigenvalues below zero by more than roundoff indicate a
/// broken fit (the distance clamps small negatives to zero).
struct GaussianStats {
    int d = 0;
    std::vector<double> mu;     // d
    std::vector<double> sigma;  // d*d
};

/// Sample mean and covariance (denominator n-1). Needs at least 2 samples of
/// equal dimension. Accumulation runs in a canonical order, so the result is
/// a pure function of the feature multiset, bit for bit.
GaussianStats fit_gaussian(const std::vector<std::vector<double>>& feats);

/// Symmetric eigendecomposition by cyclic Jacobi rotations. a is d x d
/// row-major; eigenvalues come back ascending, vecs holds the matching
/// eigenvectors as columns (row-major d x d).
void sym_eig(std::vector<double> a, int d, std::vector<double>& vals, std::vector<double>& vecs);

/// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2), the squared
/// Frechet distance between Gaussians. Matrix square roots go through the
/// symmetric eigendecomposition; eigenvalues pushed slightly negative by
/// roundoff clamp to zero, and the final value clamps to >= 0.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

/// Bilinear resample of an image [C,H,W] to (oh, ow); half-pixel centers,
/// edges clamped. Resampling to the input size is the identity.
Tensor resize_bilinear(const Tensor& img, int oh, int ow);

/// Nearest-neighbor resample of a label map to (oh, ow).
LabelMap resize_nearest(const LabelMap& label, int oh, int ow);

/// Compact per-pixel classifier for the toy scenes: four 3x3 convolutions
/// with leaky-ReLU gaps, no normalization, so every output is a pure
/// per-image function. Trained once, then frozen and shipped as a fixture;
/// its pooled penultimate features double as the image embedding for the
/// Frechet metric.
class Segmenter {
public:
    static constexpr int kEmbedDim = 64;

    Segmenter(int num_classes, std::uint64_t seed);

    int num_classes() const { return n_; }

    struct Forward {
        ad::Var logits;    // [B,N,H,W]
        ad::Var features;  // [B,64,H,W] penultimate activations
    };
    Forward forward(const ad::Var& images) const;

    /// Argmax class per pixel; ties break toward the lower class id.
    std::vector<LabelMap> predict(std::span<const Tensor> images, int batch = 16) const;

    /// Penultimate features averaged over space: one 64-vector per image.
    /// Batching is a speed choice only; outputs are per-image pure.
    std::vector<std::vector<double>> embed(std::span<const Tensor> images, int batch = 16) const;

    ParamStore& params() { return ps_; }
    const ParamStore& params() const { return ps_; }

    void save(const std::string& path) const;
    static std::unique_ptr<Segmenter> load(const std::string& path);

private:
    int n_ = 0;
    ParamStore ps_;
    Conv2d c1_, c2_, c3_, c4_;
};

/// Adam + cross-entropy training loop for a fresh segmenter; batches are
/// sampled from (images, labels) with the given seed. Returns the final
/// running loss. The caller measures holdout mIoU via predict().
double train_segmenter(Segmenter& seg, std::span<const Tensor> images,
                       std::span<const LabelMap> labels, int steps, int batch, double lr,
                       std::uint64_t seed);

/// Frechet distance between Gaussian fits of embedded image sets. Both sides
/// need at least 16 images; the value is invariant to image order.
double toy_fid(std::span<const Tensor> real, std::span<const Tensor> fake, const Segmenter& seg);

/// Per-class intersection-over-union against ground truth. Classes absent
/// from both sides are excluded from the means; obj_miou averages over the
/// object subset only (empty subset = every nonzero class).
struct IouReport {
    double miou = 0.0;
    double obj_miou = 0.0;
    std::vector<double> per_class;  // 0 where present[c] is false
    std::vector<bool> present;
};

IouReport miou(std::span<const LabelMap> pred, std::span<const LabelMap> gt, int num_classes,
               std::span<const int> object_classes = {});

/// Object crops cut from aligned image/label sets: one tight bounding-box
/// crop per 4-connected component of an object class, resized to
/// crop x crop (bilinear images, nearest labels), bucketed by component
/// pixel count using the scene spec thresholds (small strictly below
/// small_max, large strictly above large_min). Touching same-class objects
/// merge into one component.
struct CropSet {
    std::vector<Tensor> images;
    std::vector<LabelMap> labels;

    std::size_t size() const { return images.size(); }
};

struct ObjectCrops {
    CropSet all, small, medium, large;
};

ObjectCrops crop_objects(std::span<const Tensor> images, std::span<const LabelMap> labels,
                         const SceneSpec& meta, int crop = 32,
                         std::span<const int> object_classes = {});

/// One image per label map from the generator, chunked at the given batch
/// size; a pure function of (parameters, labels, seed, batch). The batch
/// matters because normalization inside the generator sees batch statistics.
std::vector<Tensor> synthesize(const Generator& gen, std::span<const LabelMap> labels,
                               std::uint64_t seed, int batch);

/// Mean and sample variance (n-1) of toy_fid over one synthesis run per
/// seed. Needs at least 2 seeds.
struct FidSpread {
    double mean = 0.0;
    double var = 0.0;
    std::vector<double> per_seed;
};

FidSpread multimodal_fid(const Generator& gen, std::span<const LabelMap> labels,
                         std::span<const Tensor> real, const Segmenter& seg,
                         std::span<const std::uint64_t> seeds, int batch);

/// toy_fid after bilinear resampling of both sides to each scale; every
/// scaled resolution must stay >= 16. Scale 1 reproduces the plain value.
std::vector<double> multires_fid(std::span<const Tensor> real, std::span<const Tensor> fake,
                                 const Segmenter& seg, std::span<const double> scales);

/// Bundle of every metric the evaluation run reports. Bucket FIDs are NaN
/// when a bucket holds fewer than min_bucket crops on either side.
struct MetricReport {
    double toy_fid = 0.0;
    double miou = 0.0;
    double obj_miou = 0.0;
    std::vector<double> per_class_iou;
    std::vector<bool> class_present;
    double obj_fid_all = 0.0;
    double obj_fid_small = 0.0;
    double obj_fid_medium = 0.0;
    double obj_fid_large = 0.0;
    int crops_small = 0, crops_medium = 0, crops_large = 0;
    double fid_mean = 0.0;
    double fid_var = 0.0;
};

struct EvalOptions {
    std::uint64_t seed = 1;
    int batch = 4;  // synthesis chunk; part of the result, not just speed
    int k_seeds = 5;
    int crop = 32;
    int min_bucket = 16;  // crops needed per side before a bucket FID is reported
    std::vector<int> object_classes;
};

/// Full evaluation pass: synthesize from the eval labels, then image FID,
/// segmenter mIoU on the generated images, object-crop FIDs by bucket, and
/// the FID spread over k_seeds fresh noise draws.
MetricReport evaluate(const Generator& gen, std::span<const Tensor> real,
                      std::span<const LabelMap> labels, const SceneSpec& meta,
                      const Segmenter& seg, const EvalOptions& opt);

/// key=value lines, one metric per line; per-class rows use the given names.
std::string report_to_text(const MetricReport& r, std::span<const std::string> class_names);

/// Two-line comma-separated table: header row and value row.
std::string report_to_csv(const MetricReport& r, std::span<const std::string> class_names);

}  // namespace dpgan
