#pragma once
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "mind/backbone.hpp"
#include "mind/checkpoint.hpp"
#include "mind/degrade.hpp"
#include "mind/image_io.hpp"
#include "mind/objective.hpp"

namespace mind {

struct NoiseConfig {
    std::string kind = "mixed";    // mixed | gaussian | poisson | speckle | motion_blur
    std::optional<double> level;   // empty: draw from the family range (peak 255 for poisson)
};

inline void to_json(nlohmann::json& j, const NoiseConfig& c) {
    j = nlohmann::json{{"kind", c.kind}};
    if (c.level)
        j["level"] = *c.level;
    else
        j["level"] = nullptr;
}

inline void from_json(const nlohmann::json& j, NoiseConfig& c) {
    c.kind = j.value("kind", std::string("mixed"));
    c.level.reset();
    if (j.contains("level") && !j["level"].is_null()) c.level = j["level"].get<double>();
}

struct RunConfig {
    int input_size = 64;
    int batch_size = 8;
    int epochs = 30;
    int steps_per_epoch = 17;
    double lr0 = 1e-4;
    double lr_min = 1e-6;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    std::uint64_t perc_seed = 2024;
    LossWeightsConfig loss;
    int scales = 3;
    int base_channels = 32;
    int embed_dim = 64;
    int patch = 4;
    int transformer_layers = 2;
    int r = 4;
    int window = 15;
    bool use_naab = true;
    bool use_nle = true;
    bool use_multiscale = true;
    bool use_crossmodal = true;
    std::string data_root;
    NoiseConfig noise;
    bool augment = true;

    ModelConfig model_config() const {
        ModelConfig m;
        m.scales = scales;
        m.base_channels = base_channels;
        m.embed_dim = embed_dim;
        m.patch = patch;
        m.transformer_layers = transformer_layers;
        m.r = r;
        m.window = window;
        return m;
    }
    AblationFlags ablation_flags() const { return {use_naab, use_nle, use_multiscale, use_crossmodal}; }

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (steps_per_epoch < 1) throw ConfigError("steps_per_epoch must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (!(lr_min < lr0)) throw ConfigError("lr_min must be < lr0");
        if (scales < 1) throw ConfigError("scales must be >= 1");
        const int mult = model_config().required_multiple(ablation_flags());
        if (input_size % mult)
            throw ConfigError("input_size must be divisible by " + std::to_string(mult));
        if (use_crossmodal && embed_dim % 4) throw ConfigError("embed_dim must be divisible by 4");
        if (use_naab && base_channels % r) throw ConfigError("r must divide base_channels");
    }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
    j = nlohmann::json{{"input_size", c.input_size},
                       {"batch_size", c.batch_size},
                       {"epochs", c.epochs},
                       {"steps_per_epoch", c.steps_per_epoch},
                       {"lr0", c.lr0},
                       {"lr_min", c.lr_min},
                       {"adam_beta1", c.adam_beta1},
                       {"adam_beta2", c.adam_beta2},
                       {"adam_eps", c.adam_eps},
                       {"seed", c.seed},
                       {"perc_seed", c.perc_seed},
                       {"loss", c.loss},
                       {"scales", c.scales},
                       {"base_channels", c.base_channels},
                       {"embed_dim", c.embed_dim},
                       {"patch", c.patch},
                       {"transformer_layers", c.transformer_layers},
                       {"r", c.r},
                       {"window", c.window},
                       {"use_naab", c.use_naab},
                       {"use_nle", c.use_nle},
                       {"use_multiscale", c.use_multiscale},
                       {"use_crossmodal", c.use_crossmodal},
                       {"data_root", c.data_root},
                       {"noise", c.noise},
                       {"augment", c.augment}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
    c = RunConfig{};
    c.input_size = j.value("input_size", c.input_size);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
    c.lr0 = j.value("lr0", c.lr0);
    c.lr_min = j.value("lr_min", c.lr_min);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.seed = j.value("seed", c.seed);
    c.perc_seed = j.value("perc_seed", c.perc_seed);
    if (j.contains("loss")) c.loss = j["loss"].get<LossWeightsConfig>();
    c.scales = j.value("scales", c.scales);
    c.base_channels = j.value("base_channels", c.base_channels);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.patch = j.value("patch", c.patch);
    c.transformer_layers = j.value("transformer_layers", c.transformer_layers);
    c.r = j.value("r", c.r);
    c.window = j.value("window", c.window);
    c.use_naab = j.value("use_naab", c.use_naab);
    c.use_nle = j.value("use_nle", c.use_nle);
    c.use_multiscale = j.value("use_multiscale", c.use_multiscale);
    c.use_crossmodal = j.value("use_crossmodal", c.use_crossmodal);
    c.data_root = j.value("data_root", c.data_root);
    if (j.contains("noise")) c.noise = j["noise"].get<NoiseConfig>();
    c.augment = j.value("augment", c.augment);
}

/// lr_min + (lr0 - lr_min)(1 + cos(pi step/total))/2.
inline double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr0, double lr_min) {
    if (step < 0 || step > total_steps || total_steps < 1)
        throw ParameterError("cosine_lr: step out of range");
    return lr_min + (lr0 - lr_min) * (1.0 + std::cos(M_PI * double(step) / double(total_steps))) / 2.0;
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

template <class T>
struct Adam {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::int64_t t = 0;
    std::map<std::string, Tensor<T>> m, v;

    void step(ParamSet<T>& params, double lr) {
        ++t;
        const double c1 = 1.0 - std::pow(beta1, double(t));
        const double c2 = 1.0 - std::pow(beta2, double(t));
        for (auto& [name, var] : params.entries) {
            auto& node = *var.n;
            if (!node.has_grad()) continue;
            auto& mt = m.try_emplace(name, Tensor<T>::zeros(node.val.shape)).first->second;
            auto& vt = v.try_emplace(name, Tensor<T>::zeros(node.val.shape)).first->second;
            for (size_t i = 0; i < node.val.data.size(); ++i) {
                const double g = double(node.grad.data[i]);
                const double mi = beta1 * double(mt.data[i]) + (1.0 - beta1) * g;
                const double vi = beta2 * double(vt.data[i]) + (1.0 - beta2) * g * g;
                mt.data[i] = T(mi);
                vt.data[i] = T(vi);
                node.val.data[i] -= T(lr * (mi / c1) / (std::sqrt(vi / c2) + eps));
            }
        }
    }
};

// ---------------------------------------------------------------------------
// dataset
// ---------------------------------------------------------------------------

struct Dataset {
    std::vector<std::string> train_files;
    std::vector<std::string> eval_files;  // held-out tail of the sorted listing
};

/// Lists <root>/clean/*.pgm|*.pfm (sorted); for 5+ images the last fifth is
/// held out for evaluation. A <root>/noisy/ directory, when present, must
/// pair by filename.
inline Dataset discover_dataset(const std::string& root) {
    namespace fs = std::filesystem;
    const fs::path clean = fs::path(root) / "clean";
    if (!fs::is_directory(clean)) throw DatasetError("dataset: missing directory " + clean.string());
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(clean)) {
        if (!e.is_regular_file()) continue;
        const auto ext = e.path().extension().string();
        if (ext == ".pgm" || ext == ".pfm") files.push_back(e.path().string());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DatasetError("dataset: no clean images under " + clean.string());
    const fs::path noisy = fs::path(root) / "noisy";
    if (fs::is_directory(noisy)) {
        for (const auto& f : files) {
            const fs::path pair = noisy / fs::path(f).filename();
            if (!fs::exists(pair))
                throw DatasetError("dataset: noisy/ present but missing pair for " +
                                   fs::path(f).filename().string());
        }
    }
    Dataset d;
    const size_t n = files.size();
    const size_t eval_count = n >= 5 ? n / 5 : 0;
    d.train_files.assign(files.begin(), files.end() - std::ptrdiff_t(eval_count));
    d.eval_files.assign(files.end() - std::ptrdiff_t(eval_count), files.end());
    return d;
}

inline std::vector<Image> load_images(const std::vector<std::string>& files) {
    std::vector<Image> out;
    out.reserve(files.size());
    for (const auto& f : files) out.push_back(read_image(f));
    return out;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct TrainOptions {
    std::string resume_path;    // checkpoint to continue from
    int stop_after_epoch = 0;   // 0 = run to cfg.epochs
    bool quiet = false;
};

struct TrainResult {
    std::vector<LossReport> history;
    std::string final_path, best_path, history_path;
    MindModel<float> model;  // shares weight storage with the saved final state
};

namespace train_detail {

struct SampleDraw {
    Image clean;   // augmented patch
    Image noisy;
    double unused = 0;
};

inline NoiseSpec draw_noise_spec(Rng& rng, const NoiseConfig& nc) {
    NoiseSpec spec;
    if (nc.kind == "mixed") {
        const NoiseKind kinds[4] = {NoiseKind::gaussian, NoiseKind::poisson, NoiseKind::speckle,
                                    NoiseKind::motion_blur};
        spec.kind = kinds[rng.uniform_below(4)];
    } else {
        spec.kind = noise_kind_from_string(nc.kind);
    }
    if (nc.level) {
        spec.level = *nc.level;
    } else if (spec.kind == NoiseKind::poisson) {
        spec.level = kDefaultPoissonPeak;
    } else {
        auto [lo, hi] = strict_level_range(spec.kind);
        spec.level = rng.uniform(lo, hi);
    }
    if (spec.kind == NoiseKind::motion_blur) spec.angle = rng.uniform(0.0, M_PI);
    spec.seed = rng.next_u64();
    return spec;
}

inline Image rot90(const Image& img, int k) {
    k = ((k % 4) + 4) % 4;
    if (k == 0) return img;
    Image out = k == 2 ? Image(img.height, img.width) : Image(img.width, img.height);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
            if (k == 1)
                out.at(c, img.height - 1 - r) = img.at(r, c);
            else if (k == 2)
                out.at(img.height - 1 - r, img.width - 1 - c) = img.at(r, c);
            else
                out.at(img.width - 1 - c, r) = img.at(r, c);
        }
    return out;
}

/// Sample content is a pure function of (seed, global step, slot), so batch
/// assembly parallelism and resume cannot change the data stream.
inline SampleDraw draw_sample(const std::vector<Image>& images, const RunConfig& cfg,
                              std::int64_t gstep, int slot) {
    Rng rng = Rng::keyed(cfg.seed ^ 0x747261696eULL, std::uint64_t(gstep) * 4096 + std::uint64_t(slot));
    const Image& src = images[rng.uniform_below(images.size())];
    if (src.height < cfg.input_size || src.width < cfg.input_size)
        throw DatasetError("dataset image smaller than input_size");
    const int top = int(rng.uniform_below(std::uint64_t(src.height - cfg.input_size + 1)));
    const int left = int(rng.uniform_below(std::uint64_t(src.width - cfg.input_size + 1)));
    Image patch = crop(src, top, left, cfg.input_size, cfg.input_size);
    if (cfg.augment) {
        patch = rot90(patch, int(rng.uniform_below(4)));
        const double gain = rng.uniform(0.9, 1.1);
        for (auto& p : patch.pix) p *= gain;
        patch.clamp01();
    } else {
        rng.uniform_below(4);
        rng.uniform(0.9, 1.1);
    }
    SampleDraw d;
    d.noisy = degrade(patch, draw_noise_spec(rng, cfg.noise));
    d.clean = std::move(patch);
    return d;
}

template <class T>
inline Var<T> image_to_var(const Image& img) {
    Tensor<T> t({1, img.height, img.width});
    for (size_t i = 0; i < img.size(); ++i) t.data[i] = T(img.pix[i]);
    return Var<T>::constant(std::move(t));
}

}  // namespace train_detail

inline CheckpointData snapshot_state(const MindModel<float>& model, const Adam<float>& adam,
                                     const RunConfig& cfg, int epoch, std::int64_t step,
                                     double best_loss) {
    CheckpointData ck;
    for (const auto& [name, var] : model.params.entries) ck.tensors.emplace(name, var.val());
    for (const auto& [name, t] : adam.m) ck.tensors.emplace("adam.m." + name, t);
    for (const auto& [name, t] : adam.v) ck.tensors.emplace("adam.v." + name, t);
    ck.metadata = {{"kind", "mind-checkpoint"},
                   {"epoch", epoch},
                   {"step", step},
                   {"adam_t", adam.t},
                   {"best_loss", best_loss},
                   {"config", cfg},
                   {"rng", {{"seed", cfg.seed}}}};
    return ck;
}

/// Rebuilds a model (architecture from the stored config) and loads weights.
inline std::pair<RunConfig, MindModel<float>> model_from_checkpoint(const CheckpointData& ck) {
    if (!ck.metadata.contains("config")) throw FormatError("checkpoint: missing config metadata");
    RunConfig cfg = ck.metadata["config"].get<RunConfig>();
    MindModel<float> model =
        MindModel<float>::create(cfg.model_config(), cfg.ablation_flags(), cfg.seed);
    for (auto& [name, var] : model.params.entries) {
        auto it = ck.tensors.find(name);
        if (it == ck.tensors.end()) throw FormatError("checkpoint: missing tensor '" + name + "'");
        if (it->second.shape != var.val().shape)
            throw FormatError("checkpoint: shape mismatch for '" + name + "'");
        var.n->val = it->second;
    }
    return {cfg, std::move(model)};
}

inline TrainResult train(const RunConfig& cfg, const std::string& out_dir,
                         const TrainOptions& opts = {}) {
    namespace fs = std::filesystem;
    cfg.validate();
    Dataset ds = discover_dataset(cfg.data_root);
    std::vector<Image> images = load_images(ds.train_files);
    if (images.empty()) throw DatasetError("dataset: no training images");
    fs::create_directories(out_dir);

    MindModel<float> model =
        MindModel<float>::create(cfg.model_config(), cfg.ablation_flags(), cfg.seed);
    Adam<float> adam;
    adam.beta1 = cfg.adam_beta1;
    adam.beta2 = cfg.adam_beta2;
    adam.eps = cfg.adam_eps;
    auto phi = PerceptualExtractor<float>::create(cfg.perc_seed);

    ParamSet<float> disc_params;
    std::optional<Discriminator<float>> disc;
    Adam<float> disc_adam;
    if (cfg.loss.adversarial_enabled) disc = Discriminator<float>::create(disc_params, cfg.seed + 1);

    int start_epoch = 0;
    double best_loss = std::numeric_limits<double>::infinity();
    if (!opts.resume_path.empty()) {
        CheckpointData ck = load_checkpoint(opts.resume_path);
        auto [saved_cfg, saved_model] = model_from_checkpoint(ck);
        nlohmann::json a = saved_cfg, b = cfg;
        a.erase("epochs");
        b.erase("epochs");  // resuming may extend the run; everything else must match
        if (a != b) throw ConfigError("resume: checkpoint config does not match run config");
        model = std::move(saved_model);
        start_epoch = ck.metadata.value("epoch", 0);
        best_loss = ck.metadata.value("best_loss", best_loss);
        adam.t = ck.metadata.value("adam_t", std::int64_t(0));
        for (const auto& [name, t] : ck.tensors) {
            if (name.rfind("adam.m.", 0) == 0) adam.m[name.substr(7)] = t;
            if (name.rfind("adam.v.", 0) == 0) adam.v[name.substr(7)] = t;
        }
    }

    const std::int64_t total_steps = std::int64_t(cfg.epochs) * cfg.steps_per_epoch;
    const int batch = cfg.batch_size;
    const int threads = worker_threads();

    TrainResult result;
    result.history_path = (fs::path(out_dir) / "history.jsonl").string();
    std::ofstream hist(result.history_path, std::ios::trunc);
    if (!hist) throw IoError("cannot write " + result.history_path);

    const int last_epoch =
        opts.stop_after_epoch > 0 ? std::min(opts.stop_after_epoch, cfg.epochs) : cfg.epochs;

    for (int epoch = start_epoch + 1; epoch <= last_epoch; ++epoch) {
        double epoch_loss = 0;
        for (int s = 0; s < cfg.steps_per_epoch; ++s) {
            const std::int64_t gstep = std::int64_t(epoch - 1) * cfg.steps_per_epoch + s;
            const double lr = cosine_lr(gstep, total_steps, cfg.lr0, cfg.lr_min);

            std::vector<train_detail::SampleDraw> samples(static_cast<size_t>(batch));
            if (threads > 1) {
                std::vector<std::thread> pool;
                std::atomic<int> next{0};
                for (int w = 0; w < std::min(threads, batch); ++w)
                    pool.emplace_back([&] {
                        for (int b; (b = next.fetch_add(1)) < batch;)
                            samples[size_t(b)] = train_detail::draw_sample(images, cfg, gstep, b);
                    });
                for (auto& t : pool) t.join();
            } else {
                for (int b = 0; b < batch; ++b)
                    samples[size_t(b)] = train_detail::draw_sample(images, cfg, gstep, b);
            }

            // Forward every sample, then weight batch-mean terms by the
            // lambdas of the batch-mean sigma.
            std::vector<ForwardOut<float>> outs;
            std::vector<Var<float>> xhats, cleans;
            double sigma_bar = 0;
            for (int b = 0; b < batch; ++b) {
                auto noisy = train_detail::image_to_var<float>(samples[size_t(b)].noisy);
                auto clean = train_detail::image_to_var<float>(samples[size_t(b)].clean);
                auto out = model.forward(noisy);
                double ssum = 0;
                for (float v : out.sigma_map.val().data) ssum += double(v);
                sigma_bar += ssum / double(out.sigma_map.val().numel());
                outs.push_back(out);
                xhats.push_back(out.denoised);
                cleans.push_back(clean);
            }
            sigma_bar /= batch;
            const auto lam = lambda_weights(sigma_to_percent(sigma_bar), cfg.loss);

            std::array<Var<float>, 5> mean_terms;
            auto mean_of = [&](auto&& term_fn) {
                Var<float> acc;
                for (int b = 0; b < batch; ++b) {
                    auto t = term_fn(b);
                    acc = acc.defined() ? add(acc, t) : t;
                }
                return scale(acc, 1.0f / float(batch));
            };
            mean_terms[0] = mean_of([&](int b) { return loss_mse(xhats[size_t(b)], cleans[size_t(b)]); });
            mean_terms[1] = mean_of([&](int b) { return loss_ssim(xhats[size_t(b)], cleans[size_t(b)]); });
            mean_terms[2] = mean_of([&](int b) { return loss_edge(xhats[size_t(b)], cleans[size_t(b)]); });
            mean_terms[3] =
                mean_of([&](int b) { return loss_perceptual(xhats[size_t(b)], cleans[size_t(b)], phi); });
            if (disc)
                mean_terms[4] =
                    mean_of([&](int b) { return loss_adversarial(xhats[size_t(b)], *disc); });

            Var<float> total = scale(mean_terms[0], float(lam[0]));
            total = add(total, scale(mean_terms[1], float(lam[1])));
            total = add(total, scale(mean_terms[2], float(lam[2])));
            total = add(total, scale(mean_terms[3], float(lam[3])));
            if (disc) total = add(total, scale(mean_terms[4], float(lam[4])));

            LossReport rep;
            rep.step = int(gstep);
            rep.epoch = epoch;
            rep.lr = lr;
            rep.sigma_scalar = sigma_bar;
            rep.lambdas = lam;
            rep.mse = double(mean_terms[0].val().data[0]);
            rep.ssim_loss = double(mean_terms[1].val().data[0]);
            rep.edge = double(mean_terms[2].val().data[0]);
            rep.perceptual = double(mean_terms[3].val().data[0]);
            rep.adversarial = disc ? double(mean_terms[4].val().data[0]) : 0.0;
            rep.total = rep.recompute_total();

            if (!std::isfinite(rep.total))
                throw std::runtime_error("training aborted: non-finite loss at step " +
                                         std::to_string(gstep) + "; last report: " +
                                         nlohmann::json(rep).dump());

            model.params.zero_grads();
            if (disc) disc_params.zero_grads();
            backward(total);
            adam.step(model.params, lr);

            if (disc) {
                // standard alternating discriminator step on detached outputs
                disc_params.zero_grads();
                Var<float> dloss;
                for (int b = 0; b < batch; ++b) {
                    auto real = clamp_v(disc->confidence(cleans[size_t(b)]), 1e-7f, 1.0f - 1e-7f);
                    auto fake_in = Var<float>::constant(xhats[size_t(b)].val());
                    auto fake = clamp_v(disc->confidence(fake_in), 1e-7f, 1.0f - 1e-7f);
                    auto term = scale(add(log_v(real), log_v(shift(scale(fake, -1.0f), 1.0f))), -1.0f);
                    dloss = dloss.defined() ? add(dloss, term) : term;
                }
                dloss = scale(dloss, 1.0f / float(batch));
                backward(dloss);
                disc_adam.step(disc_params, lr);
            }

            hist << nlohmann::json(rep).dump() << "\n";
            result.history.push_back(rep);
            epoch_loss += rep.total;
        }
        epoch_loss /= cfg.steps_per_epoch;
        if (!opts.quiet)
            std::fprintf(stderr, "epoch %d/%d mean loss %.6f\n", epoch, cfg.epochs, epoch_loss);

        const std::int64_t done_steps = std::int64_t(epoch) * cfg.steps_per_epoch;
        if (epoch_loss < best_loss) {
            best_loss = epoch_loss;
            result.best_path = (fs::path(out_dir) / "best.ckpt").string();
            save_checkpoint(snapshot_state(model, adam, cfg, epoch, done_steps, best_loss),
                            result.best_path);
        }
        save_checkpoint(snapshot_state(model, adam, cfg, epoch, done_steps, best_loss),
                        (fs::path(out_dir) / "last.ckpt").string());
    }
    hist.flush();

    result.final_path = (fs::path(out_dir) / "final.ckpt").string();
    const int end_epoch = last_epoch;
    save_checkpoint(snapshot_state(model, adam, cfg, end_epoch,
                                   std::int64_t(end_epoch) * cfg.steps_per_epoch, best_loss),
                    result.final_path);
    if (result.best_path.empty()) result.best_path = result.final_path;
    result.model = std::move(model);
    return result;
}

}  // namespace mind
