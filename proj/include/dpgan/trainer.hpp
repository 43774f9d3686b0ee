#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dpgan/discriminator.hpp"
#include "dpgan/generator.hpp"
#include "dpgan/losses.hpp"
#include "dpgan/rng.hpp"

namespace dpgan {

/// Every knob of a training run, serialized with checkpoints so a run is
/// reproducible from its config text alone.
struct TrainConfig {
    int resolution = 64;
    int num_classes = 8;
    int width_divisor = 8;
    int batch_size = 4;
    int steps = 2000;
    std::uint64_t seed = 1;

    double lr_g = 1e-4;
    double lr_d = 4e-4;
    double beta1 = 0.0;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double ema_decay = 0.9999;
    double lambda_lm = 5.0;

    bool gen_oa = false;   // legacy one-hot conditioning instead of the dual pyramid
    bool dis_oa = false;   // pixel-only discriminator supervision
    TapPlacement ms = TapPlacement::Enc;
    TapPlacement fm = TapPlacement::Dec;
    bool no_cat = false;
    bool no_lm = false;
    bool route_top_alpha = false;
    bool whole_class_mix = false;
    bool per_pixel_noise = false;
    bool nonsat_g_hinge = false;
    bool dataset_weights = false;  // class weights from the whole dataset, not the batch
    bool sn_g = false;
    bool sn_d = true;
    bool deterministic = true;

    void validate() const;
    GenConfig gen_config() const;
    DiscConfig disc_config() const;
};

/// Adam with decoupled moment state, one slot per attached parameter.
class Adam {
public:
    Adam(double lr, double beta1, double beta2, double eps);

    void attach(std::vector<ad::Var> params);
    void zero_grads();
    void step();

    int t() const { return t_; }
    void set_t(int t) { t_ = t; }
    std::vector<Tensor>& m() { return m_; }
    std::vector<Tensor>& v() { return v_; }
    const std::vector<Tensor>& m() const { return m_; }
    const std::vector<Tensor>& v() const { return v_; }
    const std::vector<ad::Var>& params() const { return params_; }

private:
    double lr_, beta1_, beta2_, eps_;
    int t_ = 0;
    std::vector<ad::Var> params_;
    std::vector<Tensor> m_, v_;
};

/// In-place exponential moving average over the trainable entries of a
/// store, in registration order: ema = decay*ema + (1-decay)*param.
void ema_update(std::vector<Tensor>& ema, const ParamStore& ps, double decay);

/// Alternating adversarial training: one discriminator update on
/// [real; generated; mixed], then one generator update on a fresh
/// generation, then the EMA update.
class Trainer {
public:
    struct Batch {
        std::vector<LabelMap> labels;
        Tensor images;  // [B,3,R,R] in [-1,1]
    };

    explicit Trainer(const TrainConfig& cfg);

    LossReport train_step(const Batch& batch);

    /// Precomputed dataset-level class weights (used when cfg.dataset_weights).
    void set_dataset_weights(std::vector<double> w);

    int step() const { return step_; }
    const TrainConfig& config() const { return cfg_; }
    Generator& generator() { return *gen_; }
    Discriminator& discriminator() { return *disc_; }
    ParamStore& gen_params() { return gen_ps_; }
    ParamStore& disc_params() { return disc_ps_; }
    Adam& adam_g() { return adam_g_; }
    Adam& adam_d() { return adam_d_; }
    Rng& data_rng() { return data_rng_; }

    /// Copies the EMA weights into a parameter store with matching names
    /// (typically a fresh generator built from the same config).
    void copy_ema_into(ParamStore& target) const;

    void save(const std::string& path) const;
    static std::unique_ptr<Trainer> load(const std::string& path);

private:
    void check_finite(double v, const char* term) const;
    std::vector<double> batch_weights(const std::vector<LabelMap>& labels) const;

    TrainConfig cfg_;
    ParamStore gen_ps_, disc_ps_;
    std::unique_ptr<Generator> gen_;
    std::unique_ptr<Discriminator> disc_;
    Adam adam_g_, adam_d_;
    std::vector<Tensor> ema_;  // aligned with trainable entries of gen_ps_
    std::vector<std::string> ema_names_;
    std::vector<double> dataset_weights_;
    Rng noise_rng_, data_rng_;
    int step_ = 0;
};

}  // namespace dpgan
