#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dpgan/config_file.hpp"
#include "dpgan/dataset_io.hpp"
#include "dpgan/discriminator.hpp"
#include "dpgan/evaluation.hpp"
#include "dpgan/generator.hpp"
#include "dpgan/trainer.hpp"

namespace fs = std::filesystem;
using namespace dpgan;

namespace {

/// Mistakes in flags, configs, or referenced files; exits with status 1.
/// Everything else that throws is a runtime failure and exits with 2.
struct UserError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string fmt_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

int parse_int_value(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const int out = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw UserError("bad integer for " + key + ": '" + v + "'");
    }
}

std::uint64_t parse_u64_value(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const std::uint64_t out = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw UserError("bad unsigned integer for " + key + ": '" + v + "'");
    }
}

double parse_double_value(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw UserError("bad number for " + key + ": '" + v + "'");
    }
}

bool parse_bool_value(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw UserError("bad boolean for " + key + ": '" + v + "' (use true|false)");
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw UserError("cannot read " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f || !(f << text)) throw std::runtime_error("cannot write " + path);
}

void require_file(const std::string& path, const std::string& what) {
    if (path.empty()) throw UserError("missing required " + what);
    if (!fs::is_regular_file(path)) throw UserError(what + " not found: " + path);
}

void require_dir(const std::string& path, const std::string& what) {
    if (path.empty()) throw UserError("missing required " + what);
    if (!fs::is_directory(path)) throw UserError(what + " not found: " + path);
}

void ensure_out_dir(const std::string& path) {
    if (path.empty()) throw UserError("missing required output directory (out)");
    std::error_code ec;
    fs::create_directories(path, ec);
    if (ec || !fs::is_directory(path))
        throw std::runtime_error("cannot create output directory " + path);
}

/// Subcommand options double as config-file keys: resolution order is
/// defaults, then the config file, then explicit command-line flags.
class KeyedArgs {
public:
    void attach(CLI::App* cmd) {
        cmd->add_option_function<std::string>(
               "--config",
               [this](const std::string& v) { config_path_ = v; },
               "key=value file applied before explicit flags")
            ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }

    void add(CLI::App* cmd, const std::string& key, const std::string& help) {
        cmd->add_option_function<std::string>(
               "--" + key,
               [this, key](const std::string& v) { cli_[key] = v; },
               help)
            ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }

    void force(const std::string& key, const std::string& value) { cli_[key] = value; }

    template <typename Apply>
    void resolve(const Apply& apply) const {
        if (!config_path_.empty()) {
            require_file(config_path_, "config file");
            std::map<std::string, std::string> kv;
            try {
                kv = parse_kv_text(read_text_file(config_path_));
            } catch (const std::invalid_argument& e) {
                throw UserError(config_path_ + ": " + e.what());
            }
            for (const auto& [k, v] : kv) apply(k, v, false);
        }
        for (const auto& [k, v] : cli_) apply(k, v, true);
    }

private:
    std::string config_path_;
    std::map<std::string, std::string> cli_;
};

const std::set<std::string>& train_config_keys() {
    static const std::set<std::string> keys = {
        "resolution", "num_classes", "width_divisor", "batch_size", "steps", "seed",
        "lr_g", "lr_d", "beta1", "beta2", "adam_eps", "ema_decay", "lambda_lm",
        "gen_oa", "dis_oa", "ms", "fm", "no_cat", "no_lm", "route_top_alpha",
        "whole_class_mix", "per_pixel_noise", "nonsat_g_hinge", "dataset_weights",
        "sn_g", "sn_d", "deterministic"};
    return keys;
}

void add_train_config_options(CLI::App* cmd, KeyedArgs& args) {
    for (const auto& key : train_config_keys()) args.add(cmd, key, "training config field");
}

/// Segmenter and evaluation knobs shared by train, eval, and ablate.
struct EvalSettings {
    std::string seg;  // checkpoint to reuse; empty trains one on the real data
    int seg_steps = 150, seg_batch = 6;
    double seg_lr = 2e-3;
    std::uint64_t seg_seed = 97;
    std::uint64_t eval_seed = 1;
    int eval_batch = 4, k_seeds = 5, crop = 32, min_bucket = 16, eval_count = 0;

    bool apply(const std::string& key, const std::string& value) {
        if (key == "seg") seg = value;
        else if (key == "seg_steps") seg_steps = parse_int_value(key, value);
        else if (key == "seg_batch") seg_batch = parse_int_value(key, value);
        else if (key == "seg_lr") seg_lr = parse_double_value(key, value);
        else if (key == "seg_seed") seg_seed = parse_u64_value(key, value);
        else if (key == "eval_seed") eval_seed = parse_u64_value(key, value);
        else if (key == "eval_batch") eval_batch = parse_int_value(key, value);
        else if (key == "k_seeds") k_seeds = parse_int_value(key, value);
        else if (key == "crop") crop = parse_int_value(key, value);
        else if (key == "min_bucket") min_bucket = parse_int_value(key, value);
        else if (key == "eval_count") eval_count = parse_int_value(key, value);
        else return false;
        return true;
    }

    void validate() const {
        if (seg_steps < 1 || seg_batch < 1) throw UserError("seg_steps and seg_batch must be >= 1");
        if (seg_lr <= 0) throw UserError("seg_lr must be > 0");
        if (eval_batch < 1) throw UserError("eval_batch must be >= 1");
        if (k_seeds < 0) throw UserError("k_seeds must be >= 0");
        if (crop < 1) throw UserError("crop must be >= 1");
        if (min_bucket < 0 || eval_count < 0) throw UserError("min_bucket and eval_count must be >= 0");
    }

    std::string to_text() const {
        std::ostringstream out;
        out << "seg = " << seg << "\n";
        out << "seg_steps = " << seg_steps << "\n";
        out << "seg_batch = " << seg_batch << "\n";
        out << "seg_lr = " << fmt_g17(seg_lr) << "\n";
        out << "seg_seed = " << seg_seed << "\n";
        out << "eval_seed = " << eval_seed << "\n";
        out << "eval_batch = " << eval_batch << "\n";
        out << "k_seeds = " << k_seeds << "\n";
        out << "crop = " << crop << "\n";
        out << "min_bucket = " << min_bucket << "\n";
        out << "eval_count = " << eval_count << "\n";
        return out.str();
    }

    EvalOptions options() const {
        EvalOptions opt;
        opt.seed = eval_seed;
        opt.batch = eval_batch;
        opt.k_seeds = k_seeds;
        opt.crop = crop;
        opt.min_bucket = min_bucket;
        return opt;
    }

    void add_options(CLI::App* cmd, KeyedArgs& args) {
        args.add(cmd, "seg", "segmenter checkpoint to reuse (default: train one)");
        args.add(cmd, "seg_steps", "segmenter training steps");
        args.add(cmd, "seg_batch", "segmenter training batch size");
        args.add(cmd, "seg_lr", "segmenter learning rate");
        args.add(cmd, "seg_seed", "segmenter init and data seed");
        args.add(cmd, "eval_seed", "synthesis seed for metrics");
        args.add(cmd, "eval_batch", "synthesis chunk size (part of the result)");
        args.add(cmd, "k_seeds", "seeds for the FID spread (0 skips it)");
        args.add(cmd, "crop", "object crop resolution");
        args.add(cmd, "min_bucket", "crops needed per side for a bucket FID");
        args.add(cmd, "eval_count", "scenes used for metrics (0 = all)");
    }
};

Dataset load_checked_dataset(const std::string& dir) {
    require_dir(dir, "dataset directory");
    require_file((fs::path(dir) / "meta.txt").string(), "dataset meta.txt");
    Dataset ds = load_dataset(dir);
    if (ds.size() == 0) throw UserError("dataset " + dir + " is empty");
    return ds;
}

void check_dataset_matches(const Dataset& ds, const TrainConfig& cfg, const std::string& dir) {
    if (ds.spec.num_classes != cfg.num_classes)
        throw UserError("dataset " + dir + " has " + std::to_string(ds.spec.num_classes) +
                        " classes, run config wants " + std::to_string(cfg.num_classes));
    if (ds.spec.height != cfg.resolution || ds.spec.width != cfg.resolution)
        throw UserError("dataset " + dir + " is " + std::to_string(ds.spec.height) + "x" +
                        std::to_string(ds.spec.width) + ", run config wants " +
                        std::to_string(cfg.resolution) + "x" + std::to_string(cfg.resolution));
}

Trainer::Batch sample_batch(const Dataset& ds, Rng& rng, int batch) {
    const int n = static_cast<int>(ds.size());
    Trainer::Batch b;
    b.images = Tensor({batch, 3, ds.spec.height, ds.spec.width});
    const std::size_t stride = static_cast<std::size_t>(3) * ds.spec.height * ds.spec.width;
    for (int i = 0; i < batch; ++i) {
        const int idx = rng.uniform_int(n);
        b.labels.push_back(ds.labels[idx]);
        const Tensor& img = ds.images[idx];
        for (std::size_t e = 0; e < stride; ++e) b.images[i * stride + e] = img[e];
    }
    return b;
}

/// Fresh generator whose trainable weights come from the trainer's EMA track
/// and whose buffers are copied from the live generator store.
struct EmaGenerator {
    ParamStore ps;
    std::unique_ptr<Generator> gen;

    explicit EmaGenerator(const TrainConfig& cfg) {
        Rng rng(0);
        gen = std::make_unique<Generator>(cfg.gen_config(), ps, rng);
    }

    void refresh(Trainer& tr) {
        tr.copy_ema_into(ps);
        for (const auto& e : tr.gen_params().entries()) {
            if (e.trainable) continue;
            for (auto& mine : ps.entries())
                if (mine.name == e.name) mine.buffer.copy_from(e.buffer);
        }
    }
};

std::unique_ptr<Segmenter> obtain_segmenter(const Dataset& ds, const EvalSettings& ev,
                                            const std::string& save_path) {
    if (!ev.seg.empty()) {
        require_file(ev.seg, "segmenter checkpoint");
        auto seg = Segmenter::load(ev.seg);
        if (seg->num_classes() != ds.spec.num_classes)
            throw UserError("segmenter " + ev.seg + " has " + std::to_string(seg->num_classes()) +
                            " classes, dataset has " + std::to_string(ds.spec.num_classes));
        std::cout << "segmenter: loaded " << ev.seg << "\n";
        return seg;
    }
    auto seg = std::make_unique<Segmenter>(ds.spec.num_classes, ev.seg_seed);
    std::cout << "segmenter: training " << ev.seg_steps << " steps on " << ds.size()
              << " scenes" << std::endl;
    const double loss = train_segmenter(*seg, ds.images, ds.labels, ev.seg_steps, ev.seg_batch,
                                        ev.seg_lr, ev.seg_seed + 1);
    const IouReport ref = miou(seg->predict(ds.images), ds.labels, ds.spec.num_classes);
    std::cout << "segmenter: final loss " << loss << ", real-data miou " << ref.miou << "\n";
    if (!save_path.empty()) {
        seg->save(save_path);
        std::cout << "segmenter: saved " << save_path << "\n";
    }
    return seg;
}

MetricReport run_metrics(const Generator& gen, const Dataset& ds, const Segmenter& seg,
                         const EvalSettings& ev) {
    std::size_t count = ds.size();
    if (ev.eval_count > 0) count = std::min<std::size_t>(count, ev.eval_count);
    const std::span<const Tensor> images(ds.images.data(), count);
    const std::span<const LabelMap> labels(ds.labels.data(), count);
    return evaluate(gen, images, labels, ds.spec, seg, ev.options());
}

/// report_to_csv emits a header line and a value line; split them so rows
/// can accumulate under one header.
void split_csv(const std::string& csv, std::string& header, std::string& values) {
    const auto nl = csv.find('\n');
    if (nl == std::string::npos) throw std::runtime_error("metric csv has no header line");
    header = csv.substr(0, nl);
    values = csv.substr(nl + 1);
    if (!values.empty() && values.back() == '\n') values.pop_back();
}

void write_grid_png(const std::string& path, const std::vector<Tensor>& images) {
    if (images.empty()) throw std::runtime_error("empty image grid");
    const int h = images[0].shape[1], w = images[0].shape[2];
    const int cols = std::min<int>(4, static_cast<int>(images.size()));
    const int rows = (static_cast<int>(images.size()) + cols - 1) / cols;
    std::vector<std::uint8_t> out(static_cast<std::size_t>(rows * h) * (cols * w) * 3, 0);
    for (std::size_t i = 0; i < images.size(); ++i) {
        const std::vector<std::uint8_t> img = image_to_bytes(images[i]);
        const int r0 = static_cast<int>(i) / cols * h, c0 = static_cast<int>(i) % cols * w;
        for (int y = 0; y < h; ++y)
            std::copy_n(&img[static_cast<std::size_t>(y) * w * 3], static_cast<std::size_t>(w) * 3,
                        &out[(static_cast<std::size_t>(r0 + y) * cols * w + c0) * 3]);
    }
    write_png_rgb8(path, cols * w, rows * h, out);
}

// ---------------------------------------------------------------- generate-data

struct GenDataRun {
    std::uint64_t seed = 1;
    int count = 0;
    int size = 64;
    int classes = 8;
    std::string out;
    int min_objects = 1, max_objects = 4;
    int small_max = -1, large_min = -1;  // -1 scales the 64x64 defaults by area
    double p_small = 0.4, p_large = 0.3, noise_sigma = 0.03, shade = 0.3;
};

void apply_gendata_key(GenDataRun& r, const std::string& key, const std::string& value) {
    if (key == "seed") r.seed = parse_u64_value(key, value);
    else if (key == "count") r.count = parse_int_value(key, value);
    else if (key == "size") r.size = parse_int_value(key, value);
    else if (key == "classes") r.classes = parse_int_value(key, value);
    else if (key == "out") r.out = value;
    else if (key == "min_objects") r.min_objects = parse_int_value(key, value);
    else if (key == "max_objects") r.max_objects = parse_int_value(key, value);
    else if (key == "small_max") r.small_max = parse_int_value(key, value);
    else if (key == "large_min") r.large_min = parse_int_value(key, value);
    else if (key == "p_small") r.p_small = parse_double_value(key, value);
    else if (key == "p_large") r.p_large = parse_double_value(key, value);
    else if (key == "noise_sigma") r.noise_sigma = parse_double_value(key, value);
    else if (key == "shade") r.shade = parse_double_value(key, value);
    else throw UserError("unknown generate-data key " + key);
}

int run_generate_data(GenDataRun r) {
    if (r.count < 1) throw UserError("count must be >= 1");
    SceneSpec spec;
    spec.num_classes = r.classes;
    spec.height = spec.width = r.size;
    spec.min_objects = r.min_objects;
    spec.max_objects = r.max_objects;
    const int area = r.size * r.size;
    spec.small_max = r.small_max >= 0 ? r.small_max : std::max(2, 156 * area / 4096);
    spec.large_min = r.large_min >= 0 ? r.large_min : std::max(spec.small_max + 1, 625 * area / 4096);
    spec.p_small = r.p_small;
    spec.p_large = r.p_large;
    spec.noise_sigma = r.noise_sigma;
    spec.shade = r.shade;
    spec.validate();

    ensure_out_dir(r.out);
    const std::vector<Scene> scenes = generate_dataset(spec, r.seed, r.count);
    save_dataset(r.out, spec, scenes);

    std::ostringstream cfg;
    cfg << "seed = " << r.seed << "\n"
        << "count = " << r.count << "\n"
        << "size = " << r.size << "\n"
        << "classes = " << r.classes << "\n"
        << "out = " << r.out << "\n"
        << "min_objects = " << spec.min_objects << "\n"
        << "max_objects = " << spec.max_objects << "\n"
        << "small_max = " << spec.small_max << "\n"
        << "large_min = " << spec.large_min << "\n"
        << "p_small = " << fmt_g17(spec.p_small) << "\n"
        << "p_large = " << fmt_g17(spec.p_large) << "\n"
        << "noise_sigma = " << fmt_g17(spec.noise_sigma) << "\n"
        << "shade = " << fmt_g17(spec.shade) << "\n";
    write_text_file((fs::path(r.out) / "config.txt").string(), cfg.str());

    std::cout << "wrote " << scenes.size() << " scenes (" << spec.num_classes << " classes, "
              << spec.height << "x" << spec.width << ") to " << r.out << "\n";
    return 0;
}

// ------------------------------------------------------------------------ train

struct TrainRun {
    TrainConfig train;
    std::set<std::string> train_keys_given;
    std::string data, out, resume;
    int log_every = 50, save_every = 0, eval_every = 0, grid_every = 0, grid_count = 8;
    EvalSettings ev;

    void apply(const std::string& key, const std::string& value) {
        if (train_config_keys().count(key)) {
            try {
                apply_override(train, key, value);
            } catch (const std::invalid_argument& e) {
                throw UserError(e.what());
            }
            train_keys_given.insert(key);
            return;
        }
        if (key == "data") data = value;
        else if (key == "out") out = value;
        else if (key == "resume") resume = value;
        else if (key == "log_every") log_every = parse_int_value(key, value);
        else if (key == "save_every") save_every = parse_int_value(key, value);
        else if (key == "eval_every") eval_every = parse_int_value(key, value);
        else if (key == "grid_every") grid_every = parse_int_value(key, value);
        else if (key == "grid_count") grid_count = parse_int_value(key, value);
        else if (!ev.apply(key, value)) throw UserError("unknown train key " + key);
    }

    std::string to_text() const {
        std::ostringstream out_text;
        out_text << train_config_to_text(train) << "data = " << data << "\n"
                 << "out = " << out << "\n"
                 << "log_every = " << log_every << "\n"
                 << "save_every = " << save_every << "\n"
                 << "eval_every = " << eval_every << "\n"
                 << "grid_every = " << grid_every << "\n"
                 << "grid_count = " << grid_count << "\n"
                 << ev.to_text();
        return out_text.str();
    }
};

void log_step(int step, int total, const LossReport& rep) {
    std::printf("step %5d/%d  d %.4f  g %.4f  lm %.4f\n", step, total, rep.l_d_total,
                rep.l_g_total, rep.l_lm);
    std::fflush(stdout);
}

const char* loss_csv_header =
    "step,l_pixel_real,l_pixel_fake,l_pixel_g,l_ms_d,l_ms_g,l_fm,l_lm,l_d_total,l_g_total\n";

void append_loss_row(std::ostream& out, int step, const LossReport& r) {
    out << step << ',' << fmt_g17(r.l_pixel_real) << ',' << fmt_g17(r.l_pixel_fake) << ','
        << fmt_g17(r.l_pixel_g) << ',' << fmt_g17(r.l_ms_d) << ',' << fmt_g17(r.l_ms_g) << ','
        << fmt_g17(r.l_fm) << ',' << fmt_g17(r.l_lm) << ',' << fmt_g17(r.l_d_total) << ','
        << fmt_g17(r.l_g_total) << "\n";
}

int run_train(TrainRun r) {
    r.ev.validate();
    if (r.log_every < 1) throw UserError("log_every must be >= 1");
    if (r.save_every < 0 || r.eval_every < 0 || r.grid_every < 0)
        throw UserError("cadence values must be >= 0");
    if (r.grid_count < 1) throw UserError("grid_count must be >= 1");

    std::unique_ptr<Trainer> tr;
    if (!r.resume.empty()) {
        require_file(r.resume, "resume checkpoint");
        tr = Trainer::load(r.resume);
        const auto ck = parse_kv_text(train_config_to_text(tr->config()));
        const auto want = parse_kv_text(train_config_to_text(r.train));
        std::string bad;
        for (const auto& key : r.train_keys_given)
            if (want.at(key) != ck.at(key))
                bad += (bad.empty() ? "" : ", ") + key + " (checkpoint " + ck.at(key) +
                       ", requested " + want.at(key) + ")";
        if (!bad.empty()) throw UserError("resume: config conflicts with checkpoint: " + bad);
        r.train = tr->config();
    } else {
        try {
            r.train.validate();
        } catch (const std::invalid_argument& e) {
            throw UserError(e.what());
        }
    }

    const Dataset ds = load_checked_dataset(r.data);
    check_dataset_matches(ds, r.train, r.data);
    ensure_out_dir(r.out);
    write_text_file((fs::path(r.out) / "config.txt").string(), r.to_text());

    if (!tr) tr = std::make_unique<Trainer>(r.train);
    if (r.train.dataset_weights)
        tr->set_dataset_weights(class_frequencies(ds.labels, ds.spec.num_classes));

    std::unique_ptr<Segmenter> seg;
    if (r.eval_every > 0)
        seg = obtain_segmenter(ds, r.ev, r.ev.seg.empty()
                                             ? (fs::path(r.out) / "segmenter.dpgk").string()
                                             : "");

    EmaGenerator ema(r.train);
    const std::vector<std::string> names = class_names(ds.spec);

    const bool fresh = r.resume.empty();
    std::ofstream loss_csv((fs::path(r.out) / "loss.csv").string(),
                           fresh ? std::ios::trunc : std::ios::app);
    if (!loss_csv) throw std::runtime_error("cannot write loss.csv in " + r.out);
    if (fresh) loss_csv << loss_csv_header;

    std::ofstream eval_csv;
    bool eval_header_written = false;
    if (r.eval_every > 0) {
        const std::string path = (fs::path(r.out) / "eval.csv").string();
        eval_header_written = !fresh && fs::exists(path) && fs::file_size(path) > 0;
        eval_csv.open(path, fresh ? std::ios::trunc : std::ios::app);
        if (!eval_csv) throw std::runtime_error("cannot write eval.csv in " + r.out);
    }

    const auto emit_grid = [&](int step) {
        const int n = std::min<int>(r.grid_count, static_cast<int>(ds.size()));
        const std::vector<LabelMap> labels(ds.labels.begin(), ds.labels.begin() + n);
        ema.refresh(*tr);
        const std::vector<Tensor> imgs =
            synthesize(*ema.gen, labels, r.ev.eval_seed + static_cast<std::uint64_t>(step),
                       r.ev.eval_batch);
        ensure_out_dir((fs::path(r.out) / "grids").string());
        char name[32];
        std::snprintf(name, sizeof(name), "step%06d.png", step);
        write_grid_png((fs::path(r.out) / "grids" / name).string(), imgs);
    };

    const auto emit_eval = [&](int step, int k_seeds) {
        EvalSettings ev = r.ev;
        ev.k_seeds = k_seeds;
        ema.refresh(*tr);
        const MetricReport rep = run_metrics(*ema.gen, ds, *seg, ev);
        std::string header, values;
        split_csv(report_to_csv(rep, names), header, values);
        if (!eval_header_written) {
            eval_csv << "step," << header << "\n";
            eval_header_written = true;
        }
        eval_csv << step << ',' << values << "\n" << std::flush;
        std::printf("eval  step %d  toy_fid %.6f  miou %.4f\n", step, rep.toy_fid, rep.miou);
        std::fflush(stdout);
        return rep;
    };

    const int total = tr->config().steps;
    std::cout << "training to step " << total << " (currently " << tr->step() << ") on "
              << ds.size() << " scenes" << std::endl;
    if (fresh && r.grid_every > 0) emit_grid(0);

    const auto t0 = std::chrono::steady_clock::now();
    while (tr->step() < total) {
        const Trainer::Batch batch = sample_batch(ds, tr->data_rng(), tr->config().batch_size);
        const LossReport rep = tr->train_step(batch);
        const int step = tr->step();
        append_loss_row(loss_csv, step, rep);
        if (step % r.log_every == 0 || step == total) log_step(step, total, rep);
        if (r.save_every > 0 && step % r.save_every == 0 && step != total) {
            char name[40];
            std::snprintf(name, sizeof(name), "checkpoint_step%06d.dpgk", step);
            tr->save((fs::path(r.out) / name).string());
        }
        if (r.grid_every > 0 && step % r.grid_every == 0) emit_grid(step);
        if (r.eval_every > 0 && step % r.eval_every == 0 && step != total) emit_eval(step, 0);
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    loss_csv.flush();

    const std::string ckpt = (fs::path(r.out) / "checkpoint.dpgk").string();
    tr->save(ckpt);
    std::cout << "saved " << ckpt << " after " << tr->step() << " steps (" << secs << " s)\n";

    if (r.eval_every > 0) {
        const MetricReport rep = emit_eval(tr->step(), r.ev.k_seeds);
        std::string text = report_to_text(rep, names);
        write_text_file((fs::path(r.out) / "metrics.txt").string(), text);
        write_text_file((fs::path(r.out) / "metrics.csv").string(), report_to_csv(rep, names));
        std::cout << text;
    }
    return 0;
}

// ------------------------------------------------------------------- synthesize

struct SynthRun {
    std::string gen, label, out;
    std::uint64_t seed = 1;
    bool raw_weights = false;

    void apply(const std::string& key, const std::string& value) {
        if (key == "gen") gen = value;
        else if (key == "label") label = value;
        else if (key == "out") out = value;
        else if (key == "seed") seed = parse_u64_value(key, value);
        else if (key == "raw_weights") raw_weights = parse_bool_value(key, value);
        else throw UserError("unknown synthesize key " + key);
    }
};

LabelMap load_label_png(const std::string& path, int num_classes) {
    require_file(path, "label map");
    int w = 0, h = 0;
    std::vector<std::uint8_t> data;
    try {
        data = read_png_gray8(path, w, h);
    } catch (const std::exception& e) {
        throw UserError(e.what());
    }
    LabelMap label(h, w);
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data[i] >= num_classes)
            throw UserError("label PNG " + path + ": pixel value " + std::to_string(data[i]) +
                            " outside 0.." + std::to_string(num_classes - 1));
        label.v[i] = data[i];
    }
    return label;
}

int run_synthesize(const SynthRun& r) {
    require_file(r.gen, "generator checkpoint");
    if (r.out.empty()) throw UserError("missing required output path (out)");
    const std::unique_ptr<Trainer> tr = Trainer::load(r.gen);
    const TrainConfig& cfg = tr->config();

    const LabelMap label = load_label_png(r.label, cfg.num_classes);
    if (label.h != cfg.resolution || label.w != cfg.resolution)
        throw UserError("label PNG " + r.label + " is " + std::to_string(label.h) + "x" +
                        std::to_string(label.w) + ", generator wants " +
                        std::to_string(cfg.resolution) + "x" + std::to_string(cfg.resolution));

    EmaGenerator ema(cfg);
    const Generator* gen = &tr->generator();
    if (!r.raw_weights) {
        ema.refresh(*tr);
        gen = ema.gen.get();
    }
    const std::vector<Tensor> imgs = synthesize(*gen, {&label, 1}, r.seed, 1);
    write_png_rgb8(r.out, label.w, label.h, image_to_bytes(imgs[0]));

    std::ostringstream cfg_text;
    cfg_text << "gen = " << r.gen << "\n"
             << "label = " << r.label << "\n"
             << "out = " << r.out << "\n"
             << "seed = " << r.seed << "\n"
             << "raw_weights = " << (r.raw_weights ? "true" : "false") << "\n";
    write_text_file(r.out + ".config.txt", cfg_text.str());
    std::cout << "wrote " << r.out << "\n";
    return 0;
}

// ------------------------------------------------------------------------- eval

struct EvalRun {
    std::string gen, data, out;
    bool raw_weights = false;
    EvalSettings ev;

    void apply(const std::string& key, const std::string& value) {
        if (key == "gen") gen = value;
        else if (key == "data") data = value;
        else if (key == "out") out = value;
        else if (key == "raw_weights") raw_weights = parse_bool_value(key, value);
        else if (!ev.apply(key, value)) throw UserError("unknown eval key " + key);
    }

    std::string to_text() const {
        std::ostringstream out_text;
        out_text << "gen = " << gen << "\n"
                 << "data = " << data << "\n"
                 << "out = " << out << "\n"
                 << "raw_weights = " << (raw_weights ? "true" : "false") << "\n"
                 << ev.to_text();
        return out_text.str();
    }
};

int run_eval(const EvalRun& r) {
    r.ev.validate();
    require_file(r.gen, "generator checkpoint");
    const Dataset ds = load_checked_dataset(r.data);
    const std::unique_ptr<Trainer> tr = Trainer::load(r.gen);
    check_dataset_matches(ds, tr->config(), r.data);
    ensure_out_dir(r.out);
    write_text_file((fs::path(r.out) / "config.txt").string(), r.to_text());

    const std::unique_ptr<Segmenter> seg = obtain_segmenter(
        ds, r.ev, r.ev.seg.empty() ? (fs::path(r.out) / "segmenter.dpgk").string() : "");

    EmaGenerator ema(tr->config());
    const Generator* gen = &tr->generator();
    if (!r.raw_weights) {
        ema.refresh(*tr);
        gen = ema.gen.get();
    }

    const MetricReport rep = run_metrics(*gen, ds, *seg, r.ev);
    const std::vector<std::string> names = class_names(ds.spec);
    const IouReport ref = miou(seg->predict(ds.images), ds.labels, ds.spec.num_classes);

    std::ostringstream text;
    text << report_to_text(rep, names) << "real_miou=" << fmt_g17(ref.miou) << "\n"
         << "real_obj_miou=" << fmt_g17(ref.obj_miou) << "\n";
    write_text_file((fs::path(r.out) / "metrics.txt").string(), text.str());
    write_text_file((fs::path(r.out) / "metrics.csv").string(), report_to_csv(rep, names));
    std::cout << text.str();
    return 0;
}

// ----------------------------------------------------------------------- ablate

const std::vector<std::string>& ablation_variants() {
    static const std::vector<std::string> v = {"dp-dp",  "dp-oa",  "oa-dp",  "oa-oa",
                                               "ms-enc", "ms-dec", "ms-both", "ms-off",
                                               "fm-enc", "fm-dec", "fm-both", "fm-off",
                                               "no-cat", "no-lm"};
    return v;
}

/// Each variant pins its own axis of the config; the rest of the budget
/// (steps, seeds, rates) stays shared so runs are comparable.
void apply_variant(TrainConfig& cfg, const std::string& v) {
    if (v == "dp-dp") { cfg.gen_oa = false; cfg.dis_oa = false; }
    else if (v == "dp-oa") { cfg.gen_oa = false; cfg.dis_oa = true; }
    else if (v == "oa-dp") { cfg.gen_oa = true; cfg.dis_oa = false; }
    else if (v == "oa-oa") { cfg.gen_oa = true; cfg.dis_oa = true; }
    else if (v == "ms-enc") cfg.ms = TapPlacement::Enc;
    else if (v == "ms-dec") cfg.ms = TapPlacement::Dec;
    else if (v == "ms-both") cfg.ms = TapPlacement::Both;
    else if (v == "ms-off") cfg.ms = TapPlacement::Off;
    else if (v == "fm-enc") cfg.fm = TapPlacement::Enc;
    else if (v == "fm-dec") cfg.fm = TapPlacement::Dec;
    else if (v == "fm-both") cfg.fm = TapPlacement::Both;
    else if (v == "fm-off") cfg.fm = TapPlacement::Off;
    else if (v == "no-cat") cfg.no_cat = true;
    else if (v == "no-lm") cfg.no_lm = true;
    else {
        std::string valid;
        for (const auto& name : ablation_variants()) valid += (valid.empty() ? "" : ", ") + name;
        throw UserError("unknown ablation variant '" + v + "' (valid: " + valid + ")");
    }
}

struct AblateRun {
    TrainConfig train;
    std::string data, out;
    std::vector<std::string> variants;
    int log_every = 200;
    EvalSettings ev;

    void apply(const std::string& key, const std::string& value) {
        if (train_config_keys().count(key)) {
            try {
                apply_override(train, key, value);
            } catch (const std::invalid_argument& e) {
                throw UserError(e.what());
            }
            return;
        }
        if (key == "data") data = value;
        else if (key == "out") out = value;
        else if (key == "log_every") log_every = parse_int_value(key, value);
        else if (key == "variant") {
            variants.clear();
            std::istringstream in(value);
            std::string item;
            while (std::getline(in, item, ',')) if (!item.empty()) variants.push_back(item);
        } else if (!ev.apply(key, value)) {
            throw UserError("unknown ablate key " + key);
        }
    }

    std::string to_text() const {
        std::string variant_list;
        for (const auto& v : variants) variant_list += (variant_list.empty() ? "" : ",") + v;
        std::ostringstream out_text;
        out_text << train_config_to_text(train) << "data = " << data << "\n"
                 << "out = " << out << "\n"
                 << "log_every = " << log_every << "\n"
                 << "variant = " << variant_list << "\n"
                 << ev.to_text();
        return out_text.str();
    }
};

struct AblationRow {
    std::string variant;
    std::size_t gen_params = 0, disc_params = 0;
    MetricReport rep;
};

int run_ablate(AblateRun r) {
    r.ev.validate();
    if (r.log_every < 1) throw UserError("log_every must be >= 1");
    if (r.variants.empty()) throw UserError("ablate needs at least one --variant");
    for (const auto& v : r.variants) {
        TrainConfig probe = r.train;
        apply_variant(probe, v);  // validates the name
    }
    try {
        r.train.validate();
    } catch (const std::invalid_argument& e) {
        throw UserError(e.what());
    }

    const Dataset ds = load_checked_dataset(r.data);
    check_dataset_matches(ds, r.train, r.data);
    ensure_out_dir(r.out);
    write_text_file((fs::path(r.out) / "config.txt").string(), r.to_text());

    const std::unique_ptr<Segmenter> seg = obtain_segmenter(
        ds, r.ev, r.ev.seg.empty() ? (fs::path(r.out) / "segmenter.dpgk").string() : "");
    const std::vector<std::string> names = class_names(ds.spec);

    std::vector<AblationRow> rows;
    for (const auto& v : r.variants) {
        TrainConfig cfg = r.train;
        apply_variant(cfg, v);
        const std::string vdir = (fs::path(r.out) / v).string();
        ensure_out_dir(vdir);

        TrainRun sub;
        sub.train = cfg;
        sub.data = r.data;
        sub.out = vdir;
        sub.log_every = r.log_every;
        sub.ev = r.ev;
        write_text_file((fs::path(vdir) / "config.txt").string(),
                        sub.to_text() + "variant = " + v + "\n");

        std::cout << "== variant " << v << " ==" << std::endl;
        Trainer tr(cfg);
        if (cfg.dataset_weights)
            tr.set_dataset_weights(class_frequencies(ds.labels, ds.spec.num_classes));

        std::ofstream loss_csv((fs::path(vdir) / "loss.csv").string(), std::ios::trunc);
        if (!loss_csv) throw std::runtime_error("cannot write loss.csv in " + vdir);
        loss_csv << loss_csv_header;
        const auto t0 = std::chrono::steady_clock::now();
        while (tr.step() < cfg.steps) {
            const Trainer::Batch batch = sample_batch(ds, tr.data_rng(), cfg.batch_size);
            const LossReport rep = tr.train_step(batch);
            append_loss_row(loss_csv, tr.step(), rep);
            if (tr.step() % r.log_every == 0 || tr.step() == cfg.steps)
                log_step(tr.step(), cfg.steps, rep);
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        tr.save((fs::path(vdir) / "checkpoint.dpgk").string());

        EmaGenerator ema(cfg);
        ema.refresh(tr);
        AblationRow row;
        row.variant = v;
        row.gen_params = tr.gen_params().trainable_scalars();
        row.disc_params = tr.disc_params().trainable_scalars();
        row.rep = run_metrics(*ema.gen, ds, *seg, r.ev);
        write_text_file((fs::path(vdir) / "metrics.txt").string(),
                        report_to_text(row.rep, names));
        write_text_file((fs::path(vdir) / "metrics.csv").string(),
                        report_to_csv(row.rep, names));
        std::printf("variant %-8s done in %.1f s  toy_fid %.6f  miou %.4f\n", v.c_str(), secs,
                    row.rep.toy_fid, row.rep.miou);
        std::fflush(stdout);
        rows.push_back(std::move(row));
    }

    std::ostringstream csv;
    csv << "variant,gen_params,disc_params,toy_fid,miou,obj_miou,fid_all,fid_small,fid_medium,"
           "fid_large,fid_mean,fid_var\n";
    for (const auto& row : rows) {
        const MetricReport& m = row.rep;
        csv << row.variant << ',' << row.gen_params << ',' << row.disc_params << ','
            << fmt_g17(m.toy_fid) << ',' << fmt_g17(m.miou) << ',' << fmt_g17(m.obj_miou) << ','
            << fmt_g17(m.obj_fid_all) << ',' << fmt_g17(m.obj_fid_small) << ','
            << fmt_g17(m.obj_fid_medium) << ',' << fmt_g17(m.obj_fid_large) << ','
            << fmt_g17(m.fid_mean) << ',' << fmt_g17(m.fid_var) << "\n";
    }
    write_text_file((fs::path(r.out) / "ablation.csv").string(), csv.str());

    std::printf("\n%-8s %12s %10s %10s %12s %12s\n", "variant", "toy_fid", "miou", "obj_miou",
                "fid_small", "fid_mean");
    for (const auto& row : rows)
        std::printf("%-8s %12.6f %10.4f %10.4f %12.6f %12.6f\n", row.variant.c_str(),
                    row.rep.toy_fid, row.rep.miou, row.rep.obj_miou, row.rep.obj_fid_small,
                    row.rep.fid_mean);
    std::printf("\ntable written to %s\n", (fs::path(r.out) / "ablation.csv").string().c_str());
    return 0;
}

// ---------------------------------------------------------------- report-params

int run_report_params(TrainConfig cfg) {
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw UserError(e.what());
    }
    Rng rng(0);
    ParamStore gen_ps, disc_ps;
    const Generator gen(cfg.gen_config(), gen_ps, rng);
    const Discriminator disc(cfg.disc_config(), disc_ps, rng);

    const GenPlan gp = plan_generator(cfg.gen_config());
    const DiscPlan dp = plan_discriminator(cfg.disc_config());
    std::cout << "resolution=" << cfg.resolution << "\nnum_classes=" << cfg.num_classes
              << "\nwidth_divisor=" << cfg.width_divisor << "\ngen_oa="
              << (cfg.gen_oa ? "true" : "false") << "\ndis_oa=" << (cfg.dis_oa ? "true" : "false")
              << "\nms=" << to_string(cfg.dis_oa ? TapPlacement::Off : cfg.ms)
              << "\nfm=" << to_string(cfg.dis_oa ? TapPlacement::Off : cfg.fm) << "\n";
    for (const auto& row : gp.sap)
        std::cout << "gen_adapt." << row.name << "=" << row.channels << "ch@" << row.res << "\n";
    for (const auto& row : gp.isp)
        std::cout << "gen_synth." << row.name << "=" << row.channels << "ch@" << row.res << "\n";
    for (const auto& row : dp.enc)
        std::cout << "disc." << row.name << "=" << row.channels << "ch@" << row.res << "\n";
    for (const auto& row : dp.dec)
        std::cout << "disc." << row.name << "=" << row.channels << "ch@" << row.res << "\n";
    std::cout << "gen_params=" << gen_ps.trainable_scalars()
              << "\ndisc_params=" << disc_ps.trainable_scalars()
              << "\ntotal_params=" << gen_ps.trainable_scalars() + disc_ps.trainable_scalars()
              << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dual-pyramid GAN for semantic image synthesis"};
    app.require_subcommand(1);

    GenDataRun gendata;
    KeyedArgs gendata_args;
    CLI::App* gd = app.add_subcommand("generate-data", "write a procedural scene dataset");
    gendata_args.attach(gd);
    for (const char* key : {"seed", "count", "size", "classes", "out", "min_objects",
                            "max_objects", "small_max", "large_min", "p_small", "p_large",
                            "noise_sigma", "shade"})
        gendata_args.add(gd, key, "dataset field");

    TrainRun train_run;
    KeyedArgs train_args;
    CLI::App* tn = app.add_subcommand("train", "train a generator on a dataset directory");
    train_args.attach(tn);
    add_train_config_options(tn, train_args);
    for (const char* key : {"data", "out", "resume", "log_every", "save_every", "eval_every",
                            "grid_every", "grid_count"})
        train_args.add(tn, key, "run field");
    train_run.ev.add_options(tn, train_args);

    SynthRun synth;
    KeyedArgs synth_args;
    CLI::App* sy = app.add_subcommand("synthesize", "render one label map to an image PNG");
    synth_args.attach(sy);
    for (const char* key : {"gen", "label", "out", "seed", "raw_weights"})
        synth_args.add(sy, key, "synthesis field");

    EvalRun eval_run;
    KeyedArgs eval_args;
    CLI::App* ev = app.add_subcommand("eval", "score a trained generator against a dataset");
    eval_args.attach(ev);
    for (const char* key : {"gen", "data", "out", "raw_weights"})
        eval_args.add(ev, key, "eval field");
    eval_run.ev.add_options(ev, eval_args);

    AblateRun ablate;
    KeyedArgs ablate_args;
    CLI::App* ab = app.add_subcommand("ablate", "train and score config variants side by side");
    ablate_args.attach(ab);
    add_train_config_options(ab, ablate_args);
    for (const char* key : {"data", "out", "log_every"}) ablate_args.add(ab, key, "run field");
    ab->add_option_function<std::vector<std::string>>(
          "--variant",
          [&ablate_args](const std::vector<std::string>& vs) {
              std::string joined;
              for (const auto& s : vs) joined += (joined.empty() ? "" : ",") + s;
              ablate_args.force("variant", joined);
          },
          "variants to run (repeatable or comma separated)")
        ->take_all()
        ->delimiter(',');
    ablate.ev.add_options(ab, ablate_args);

    TrainConfig report_cfg;
    KeyedArgs report_args;
    CLI::App* rp = app.add_subcommand("report-params", "print layer ladders and parameter counts");
    report_args.attach(rp);
    add_train_config_options(rp, report_args);

    try {
        app.parse(argc, argv);
        if (gd->parsed()) {
            gendata_args.resolve([&](const std::string& k, const std::string& v, bool) {
                apply_gendata_key(gendata, k, v);
            });
            return run_generate_data(gendata);
        }
        if (tn->parsed()) {
            train_args.resolve([&](const std::string& k, const std::string& v, bool) {
                train_run.apply(k, v);
            });
            return run_train(train_run);
        }
        if (sy->parsed()) {
            synth_args.resolve([&](const std::string& k, const std::string& v, bool) {
                synth.apply(k, v);
            });
            return run_synthesize(synth);
        }
        if (ev->parsed()) {
            eval_args.resolve([&](const std::string& k, const std::string& v, bool) {
                eval_run.apply(k, v);
            });
            return run_eval(eval_run);
        }
        if (ab->parsed()) {
            ablate_args.resolve([&](const std::string& k, const std::string& v, bool) {
                ablate.apply(k, v);
            });
            return run_ablate(ablate);
        }
        if (rp->parsed()) {
            report_args.resolve([&](const std::string& k, const std::string& v, bool) {
                if (!train_config_keys().count(k))
                    throw UserError("unknown report-params key " + k);
                try {
                    apply_override(report_cfg, k, v);
                } catch (const std::invalid_argument& e) {
                    throw UserError(e.what());
                }
            });
            return run_report_params(report_cfg);
        }
        return 0;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const UserError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return 2;
    }
}
