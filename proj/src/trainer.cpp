#include "dpgan/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "dpgan/checkpoint.hpp"
#include "dpgan/config_file.hpp"
#include "dpgan/kernels.hpp"

namespace dpgan {

void TrainConfig::validate() const {
    gen_config().validate();
    disc_config().validate();
    if (batch_size < 1) throw std::invalid_argument("train: batch size must be positive");
    if (steps < 0) throw std::invalid_argument("train: negative step count");
    if (lr_g <= 0 || lr_d <= 0) throw std::invalid_argument("train: learning rates must be > 0");
    if (adam_eps <= 0) throw std::invalid_argument("train: adam epsilon must be > 0");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
        throw std::invalid_argument("train: adam betas must lie in [0,1)");
    if (ema_decay <= 0 || ema_decay >= 1)
        throw std::invalid_argument("train: EMA decay must lie in (0,1)");
    if (lambda_lm < 0) throw std::invalid_argument("train: negative mix-consistency weight");
}

GenConfig TrainConfig::gen_config() const {
    GenConfig g;
    g.resolution = resolution;
    g.num_classes = num_classes;
    g.width_divisor = width_divisor;
    g.legacy_onehot = gen_oa;
    g.no_cat = no_cat;
    g.route_top_alpha = route_top_alpha;
    g.per_pixel_noise = per_pixel_noise;
    g.sn = sn_g;
    return g;
}

DiscConfig TrainConfig::disc_config() const {
    DiscConfig d;
    d.resolution = resolution;
    d.num_classes = num_classes;
    d.width_divisor = width_divisor;
    d.ms = dis_oa ? TapPlacement::Off : ms;
    d.fm = dis_oa ? TapPlacement::Off : fm;
    d.sn = sn_d;
    return d;
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::attach(std::vector<ad::Var> params) {
    params_ = std::move(params);
    m_.clear();
    v_.clear();
    for (const auto& p : params_) {
        m_.push_back(Tensor::zeros(p->value.shape));
        v_.push_back(Tensor::zeros(p->value.shape));
    }
}

void Adam::zero_grads() {
    for (const auto& p : params_) p->grad = Tensor();
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i]->value;
        const Tensor& g = params_[i]->grad;
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (std::size_t e = 0; e < p.size(); ++e) {
            const double ge = g.defined() ? g[e] : 0.0;
            m[e] = beta1_ * m[e] + (1.0 - beta1_) * ge;
            v[e] = beta2_ * v[e] + (1.0 - beta2_) * ge * ge;
            const double mhat = m[e] / bc1;
            const double vhat = v[e] / bc2;
            p[e] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

namespace {

std::vector<ad::Var> trainable_vars(ParamStore& ps) {
    std::vector<ad::Var> out;
    for (auto& e : ps.entries())
        if (e.trainable) out.push_back(e.var);
    return out;
}

void set_trainable(ParamStore& ps, bool on) {
    for (auto& e : ps.entries())
        if (e.trainable) e.var->requires_grad = on;
}

std::vector<ad::Var> slice_each(const std::vector<ad::Var>& xs, int begin, int end) {
    std::vector<ad::Var> out;
    out.reserve(xs.size());
    for (const auto& x : xs) out.push_back(ad::slice_batch(x, begin, end));
    return out;
}

}  // namespace

void ema_update(std::vector<Tensor>& ema, const ParamStore& ps, double decay) {
    std::size_t slot = 0;
    for (const auto& e : ps.entries()) {
        if (!e.trainable) continue;
        if (slot >= ema.size()) throw std::invalid_argument("train: EMA slot count mismatch");
        Tensor& a = ema[slot++];
        const Tensor& p = e.var->value;
        if (!a.same_shape(p)) throw std::invalid_argument("train: EMA shape mismatch");
        for (std::size_t i = 0; i < a.size(); ++i)
            a[i] = decay * a[i] + (1.0 - decay) * p[i];
    }
    if (slot != ema.size()) throw std::invalid_argument("train: EMA slot count mismatch");
}

Trainer::Trainer(const TrainConfig& cfg)
    : cfg_(cfg),
      adam_g_(cfg.lr_g, cfg.beta1, cfg.beta2, cfg.adam_eps),
      adam_d_(cfg.lr_d, cfg.beta1, cfg.beta2, cfg.adam_eps) {
    cfg_.validate();
    Rng root(cfg_.seed);
    Rng gen_init = root.derive(1);
    Rng disc_init = root.derive(2);
    noise_rng_ = root.derive(3);
    data_rng_ = root.derive(4);

    gen_ = std::make_unique<Generator>(cfg_.gen_config(), gen_ps_, gen_init);
    disc_ = std::make_unique<Discriminator>(cfg_.disc_config(), disc_ps_, disc_init);
    adam_g_.attach(trainable_vars(gen_ps_));
    adam_d_.attach(trainable_vars(disc_ps_));
    for (const auto& e : gen_ps_.entries())
        if (e.trainable) {
            ema_.push_back(e.var->value.clone());
            ema_names_.push_back(e.name);
        }
    kernels::set_deterministic_reductions(cfg_.deterministic);
}

void Trainer::set_dataset_weights(std::vector<double> w) {
    if (static_cast<int>(w.size()) != cfg_.num_classes)
        throw std::invalid_argument("train: dataset weight count mismatch");
    dataset_weights_ = std::move(w);
}

std::vector<double> Trainer::batch_weights(const std::vector<LabelMap>& labels) const {
    if (cfg_.dataset_weights) {
        if (dataset_weights_.empty())
            throw std::runtime_error("train: dataset weights requested but not set");
        return dataset_weights_;
    }
    return class_frequencies(labels, cfg_.num_classes);
}

void Trainer::check_finite(double v, const char* term) const {
    if (!std::isfinite(v))
        throw std::runtime_error("training aborted at step " + std::to_string(step_) +
                                 ": non-finite " + term);
}

LossReport Trainer::train_step(const Batch& batch) {
    const int B = cfg_.batch_size;
    if (static_cast<int>(batch.labels.size()) != B)
        throw std::invalid_argument("train: batch size mismatch");
    const std::vector<int> img_shape{B, 3, cfg_.resolution, cfg_.resolution};
    if (batch.images.shape != img_shape)
        throw std::invalid_argument("train: image batch must be [B,3,R,R]");

    const bool use_ms = !disc_->plan().patch_enc.empty() || !disc_->plan().patch_dec.empty();
    const bool use_fm = !disc_->plan().fm_enc.empty() || !disc_->plan().fm_dec.empty();
    const bool use_lm = !cfg_.no_lm && cfg_.lambda_lm > 0.0;

    const Tensor onehot = one_hot(batch.labels, cfg_.num_classes);
    const std::vector<double> weights = batch_weights(batch.labels);
    const Tensor target_true = ce_target_true(batch.labels, cfg_.num_classes, weights);
    const Tensor target_fake =
        ce_target_fake(B, cfg_.num_classes, cfg_.resolution, cfg_.resolution);

    LossReport rep;

    // Discriminator update: one forward over [real; generated; mixed] so all
    // batch statistics come from one context.
    {
        auto real = ad::constant(batch.images);
        auto y = ad::constant(onehot);
        Tensor z1 = gen_->sample_noise(B, noise_rng_);
        ad::Var fake;
        {
            ad::NoGrad ng;
            fake = gen_->forward(ad::constant(z1), y).image;
        }
        Tensor mask;
        ad::Var mix;
        if (use_lm) {
            mask = labelmix_masks(batch.labels, noise_rng_, cfg_.whole_class_mix);
            mix = labelmix(real, fake, mask);
        }

        std::vector<ad::Var> parts{real, fake};
        if (use_lm) parts.push_back(mix);
        auto out = disc_->forward(ad::concat_batch(parts), true);

        auto logits_real = ad::slice_batch(out.logits, 0, B);
        auto logits_fake = ad::slice_batch(out.logits, B, 2 * B);

        auto l_pixel_real = pixel_ce(logits_real, target_true);
        auto l_pixel_fake = pixel_ce(logits_fake, target_fake);
        auto d_total = ad::add(l_pixel_real, l_pixel_fake);
        rep.l_pixel_real = l_pixel_real->value[0];
        rep.l_pixel_fake = l_pixel_fake->value[0];
        check_finite(rep.l_pixel_real, "real pixel loss");
        check_finite(rep.l_pixel_fake, "fake pixel loss");

        if (use_ms) {
            auto l_ms = ms_patch_loss_d(slice_each(out.patch_scores, 0, B),
                                        slice_each(out.patch_scores, B, 2 * B));
            rep.l_ms_d = l_ms->value[0];
            check_finite(rep.l_ms_d, "patch hinge (discriminator)");
            d_total = ad::add(d_total, l_ms);
        }
        if (use_lm) {
            auto logits_mix = ad::slice_batch(out.logits, 2 * B, 3 * B);
            auto l_lm = labelmix_consistency(logits_mix, logits_real, logits_fake, mask);
            rep.l_lm = l_lm->value[0];
            check_finite(rep.l_lm, "mix consistency");
            d_total = ad::add(d_total, ad::scale(l_lm, cfg_.lambda_lm));
        }

        rep.l_d_total = d_total->value[0];
        check_finite(rep.l_d_total, "discriminator total");
        adam_d_.zero_grads();
        ad::backward(d_total);
        adam_d_.step();
    }

    // Generator update on a fresh generation, discriminator frozen. The
    // discriminator forward includes the real batch so feature statistics and
    // matching targets come from the same context.
    {
        auto real = ad::constant(batch.images);
        auto y = ad::constant(onehot);
        Tensor z2 = gen_->sample_noise(B, noise_rng_);
        auto fake = gen_->forward(ad::constant(z2), y, true).image;

        set_trainable(disc_ps_, false);
        auto out = disc_->forward(ad::concat_batch({fake, real}), false);
        auto logits_fake = ad::slice_batch(out.logits, 0, B);

        auto l_pixel_g = pixel_ce(logits_fake, target_true);
        auto g_total = l_pixel_g;
        rep.l_pixel_g = l_pixel_g->value[0];
        check_finite(rep.l_pixel_g, "generator pixel loss");

        if (use_ms) {
            auto l_ms_g =
                ms_patch_loss_g(slice_each(out.patch_scores, 0, B), cfg_.nonsat_g_hinge);
            rep.l_ms_g = l_ms_g->value[0];
            check_finite(rep.l_ms_g, "patch hinge (generator)");
            g_total = ad::add(g_total, l_ms_g);
        }
        if (use_fm) {
            auto l_fm = feature_match_loss(slice_each(out.fm_taps, B, 2 * B),
                                           slice_each(out.fm_taps, 0, B));
            rep.l_fm = l_fm->value[0];
            check_finite(rep.l_fm, "feature matching");
            g_total = ad::add(g_total, l_fm);
        }

        rep.l_g_total = g_total->value[0];
        check_finite(rep.l_g_total, "generator total");
        adam_g_.zero_grads();
        ad::backward(g_total);
        adam_g_.step();
        set_trainable(disc_ps_, true);
    }

    // EMA tracks the generator after its update.
    ema_update(ema_, gen_ps_, cfg_.ema_decay);

    ++step_;
    return rep;
}

void Trainer::copy_ema_into(ParamStore& target) const {
    std::size_t slot = 0;
    for (const auto& name : ema_names_) {
        const auto* e = target.find(name);
        if (!e || !e->trainable)
            throw std::invalid_argument("train: EMA target missing parameter " + name);
        if (!e->var->value.same_shape(ema_[slot]))
            throw std::invalid_argument("train: EMA shape mismatch for " + name);
        e->var->value.copy_from(ema_[slot++]);
    }
}

void Trainer::save(const std::string& path) const {
    TensorList out;
    out.emplace_back("meta/config", tensor_from_string(train_config_to_text(cfg_)));
    out.emplace_back("meta/step", Tensor::scalar(static_cast<double>(step_)));
    out.emplace_back("meta/adam_t", Tensor({2}, {static_cast<double>(adam_g_.t()),
                                                 static_cast<double>(adam_d_.t())}));
    out.emplace_back("meta/rng_noise",
                     tensor_from_u64(noise_rng_.key(), noise_rng_.counter()));
    out.emplace_back("meta/rng_data", tensor_from_u64(data_rng_.key(), data_rng_.counter()));
    for (const auto& e : gen_ps_.entries())
        out.emplace_back("gen/" + e.name, e.trainable ? e.var->value : e.buffer);
    for (const auto& e : disc_ps_.entries())
        out.emplace_back("disc/" + e.name, e.trainable ? e.var->value : e.buffer);
    for (std::size_t i = 0; i < ema_.size(); ++i)
        out.emplace_back("ema/" + ema_names_[i], ema_[i]);
    const auto dump_adam = [&out](const char* tag, const Adam& a) {
        for (std::size_t i = 0; i < a.params().size(); ++i) {
            out.emplace_back(std::string(tag) + "/m/" + std::to_string(i), a.m()[i]);
            out.emplace_back(std::string(tag) + "/v/" + std::to_string(i), a.v()[i]);
        }
    };
    dump_adam("adam_g", adam_g_);
    dump_adam("adam_d", adam_d_);
    save_tensors(path, out);
}

std::unique_ptr<Trainer> Trainer::load(const std::string& path) {
    TensorList list = load_tensors(path);
    std::unordered_map<std::string, Tensor> map;
    for (auto& [name, t] : list) {
        if (!map.emplace(name, t).second)
            throw std::runtime_error("checkpoint: duplicate tensor " + name + " in " + path);
    }
    const auto need = [&](const std::string& name) -> const Tensor& {
        auto it = map.find(name);
        if (it == map.end())
            throw std::runtime_error("checkpoint: missing tensor " + name + " in " + path);
        return it->second;
    };

    TrainConfig cfg = train_config_from_text(string_from_tensor(need("meta/config")));
    auto tr = std::make_unique<Trainer>(cfg);
    tr->step_ = static_cast<int>(need("meta/step")[0]);
    const Tensor& at = need("meta/adam_t");
    tr->adam_g_.set_t(static_cast<int>(at[0]));
    tr->adam_d_.set_t(static_cast<int>(at[1]));
    std::uint64_t k, c;
    u64_from_tensor(need("meta/rng_noise"), k, c);
    tr->noise_rng_.set_state(k, c);
    u64_from_tensor(need("meta/rng_data"), k, c);
    tr->data_rng_.set_state(k, c);

    const auto restore = [&](const std::string& name, Tensor& dst) {
        const Tensor& src = need(name);
        if (!dst.same_shape(src))
            throw std::runtime_error("checkpoint: tensor " + name + " has shape " +
                                     src.shape_str() + ", expected " + dst.shape_str());
        dst.copy_from(src);
    };
    for (auto& e : tr->gen_ps_.entries())
        restore("gen/" + e.name, e.trainable ? e.var->value : e.buffer);
    for (auto& e : tr->disc_ps_.entries())
        restore("disc/" + e.name, e.trainable ? e.var->value : e.buffer);
    for (std::size_t i = 0; i < tr->ema_.size(); ++i)
        restore("ema/" + tr->ema_names_[i], tr->ema_[i]);
    for (std::size_t i = 0; i < tr->adam_g_.m().size(); ++i) {
        restore("adam_g/m/" + std::to_string(i), tr->adam_g_.m()[i]);
        restore("adam_g/v/" + std::to_string(i), tr->adam_g_.v()[i]);
    }
    for (std::size_t i = 0; i < tr->adam_d_.m().size(); ++i) {
        restore("adam_d/m/" + std::to_string(i), tr->adam_d_.m()[i]);
        restore("adam_d/v/" + std::to_string(i), tr->adam_d_.v()[i]);
    }
    return tr;
}

}  // namespace dpgan
