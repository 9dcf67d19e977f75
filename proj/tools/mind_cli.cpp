#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "mind/mind.hpp"

// mind — noise-adaptive denoising toolbox.
// Machine-readable output goes to stdout, logs to stderr.
// Exit codes: 0 success, 2 usage error, 1 runtime error.

namespace {

namespace fs = std::filesystem;
using namespace mind;

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config: " + path);
    nlohmann::json j = nlohmann::json::parse(f);
    RunConfig cfg = j.get<RunConfig>();
    cfg.validate();
    return cfg;
}

std::pair<RunConfig, MindModel<float>> load_model(const std::string& ckpt_path) {
    return model_from_checkpoint(load_checkpoint(ckpt_path));
}

void write_json(const nlohmann::json& j, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << j.dump(2) << "\n";
}

struct AblationRow {
    std::string config;
    double psnr = 0, ssim = 0, perc_proxy = 0;
};

int cmd_synth(const std::string& noise, double level, double angle, std::uint64_t seed,
              const std::string& in, const std::string& out, const std::string& profile_path,
              bool strict) {
    NoiseSpec spec;
    spec.kind = noise_kind_from_string(noise);
    spec.level = level;
    spec.angle = angle;
    spec.seed = seed;
    Image img = read_image(in);
    if (!profile_path.empty()) {
        Image p = read_image(profile_path);
        SpatialProfile sp;
        sp.height = p.height;
        sp.width = p.width;
        sp.values = p.pix;
        spec.spatial_profile = std::move(sp);
    }
    write_image(degrade(img, spec, strict), out, format_from_extension(out));
    return 0;
}

int cmd_estimate(const std::string& in, const std::string& coarse_path, int window,
                 const std::string& op_name, const std::string& out_map) {
    Image noisy = read_image(in);
    Image coarse = coarse_path.empty() ? gaussian_blur(noisy, 1.5) : read_image(coarse_path);
    SigmaMap map = estimate_sigma_map(noisy, coarse, window, grad_operator_from_string(op_name));
    if (!out_map.empty()) write_image(map_to_image(map), out_map, ImageFormat::pfm);
    std::printf("%.9f\n", sigma_scalar(map));
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              const std::string& resume, int stop_after_epoch) {
    RunConfig cfg = load_config(config_path);
    TrainOptions opts;
    opts.resume_path = resume;
    opts.stop_after_epoch = stop_after_epoch;
    TrainResult res = train(cfg, out_dir, opts);
    std::fprintf(stderr, "final checkpoint: %s\n", res.final_path.c_str());
    std::printf("%s\n", res.final_path.c_str());
    return 0;
}

int cmd_denoise(const std::string& ckpt, const std::string& in, const std::string& out,
                const std::string& diag_dir) {
    auto [cfg, model] = load_model(ckpt);
    Image noisy = read_image(in);
    DenoiseResult res = mind_forward(model, noisy);
    write_image(res.denoised, out, format_from_extension(out));
    if (!diag_dir.empty()) {
        fs::create_directories(diag_dir);
        emit_attention_maps(model, noisy, diag_dir);
        write_image(res.diag.coarse, (fs::path(diag_dir) / "coarse.pfm").string(), ImageFormat::pfm);
        write_image(map_to_image(res.diag.grad), (fs::path(diag_dir) / "grad.pfm").string(),
                    ImageFormat::pfm);
    }
    return 0;
}

std::vector<MethodSpec> default_methods(double blur_sigma, int median_k) {
    return {{"mind", blur_sigma, median_k},
            {"noisy", blur_sigma, median_k},
            {"gaussian_blur", blur_sigma, median_k},
            {"median", blur_sigma, median_k}};
}

int cmd_evaluate(const std::string& ckpt, const std::string& data_root, int batches,
                 std::uint64_t seed, const std::string& noise, double level, double blur_sigma,
                 int median_k, const std::string& out_path) {
    auto [cfg, model] = load_model(ckpt);
    Dataset ds = discover_dataset(data_root);
    const auto& files = ds.eval_files.empty() ? ds.train_files : ds.eval_files;
    std::vector<Image> images = load_images(files);
    NoiseSpec spec;
    spec.kind = noise_kind_from_string(noise);
    spec.level = level > 0 ? level : (spec.kind == NoiseKind::poisson ? kDefaultPoissonPeak : 0.15);
    EvaluationResult res = evaluate_run(images, &model, {spec}, default_methods(blur_sigma, median_k),
                                        batches, seed, cfg.perc_seed);
    nlohmann::json j = res;
    for (const auto& rep : res.reports) {
        const auto& a = rep.aggregate;
        if (!std::isfinite(a.psnr) || !std::isfinite(a.ssim) || !std::isfinite(a.rmse) ||
            !std::isfinite(a.perc_proxy))
            throw std::runtime_error("evaluate: non-finite metric for method " + rep.method);
    }
    if (out_path.empty())
        std::cout << j.dump(2) << "\n";
    else
        write_json(j, out_path);
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& out_dir, std::uint64_t seed) {
    RunConfig base = load_config(config_path);
    fs::create_directories(out_dir);

    struct Entry {
        std::string name;
        RunConfig cfg;
    };
    std::vector<Entry> entries;
    entries.push_back({"full", base});
    {
        RunConfig c = base;
        c.use_naab = false;
        entries.push_back({"no_naab", c});
    }
    {
        RunConfig c = base;
        c.use_nle = false;
        entries.push_back({"no_nle", c});
    }
    {
        RunConfig c = base;
        c.use_multiscale = false;
        entries.push_back({"no_multiscale", c});
    }
    {
        RunConfig c = base;
        c.use_crossmodal = false;
        entries.push_back({"no_crossmodal", c});
    }

    Dataset ds = discover_dataset(base.data_root);
    const auto& eval_files = ds.eval_files.empty() ? ds.train_files : ds.eval_files;
    std::vector<Image> eval_images = load_images(eval_files);

    NoiseSpec eval_spec;
    eval_spec.kind = base.noise.kind == "mixed" ? NoiseKind::gaussian
                                                : noise_kind_from_string(base.noise.kind);
    eval_spec.level = base.noise.level.value_or(0.15);

    auto evaluate_model = [&](const MindModel<float>& model, const NoiseSpec& spec) {
        ImageMetrics agg;
        for (size_t i = 0; i < eval_images.size(); ++i) {
            NoiseSpec s = spec;
            s.seed = Rng::keyed(seed, i).next_u64();
            Image noisy = degrade(eval_images[i], s);
            Image restored = mind_forward(model, noisy).denoised;
            agg.psnr += psnr(restored, eval_images[i]) / double(eval_images.size());
            agg.ssim += ssim(restored, eval_images[i]) / double(eval_images.size());
            agg.perc_proxy +=
                perceptual_distance(restored, eval_images[i], base.perc_seed) / double(eval_images.size());
        }
        return agg;
    };

    std::vector<AblationRow> rows;
    const MindModel<float>* full_model = nullptr;
    std::vector<TrainResult> results;
    results.reserve(entries.size());
    for (const auto& e : entries) {
        std::fprintf(stderr, "ablate: training %s\n", e.name.c_str());
        results.push_back(train(e.cfg, (fs::path(out_dir) / e.name).string()));
        const ImageMetrics m = evaluate_model(results.back().model, eval_spec);
        rows.push_back({e.name, m.psnr, m.ssim, m.perc_proxy});
    }
    full_model = &results.front().model;

    for (double stress : {0.05, 0.25}) {
        NoiseSpec s;
        s.kind = NoiseKind::gaussian;
        s.level = stress;
        const ImageMetrics m = evaluate_model(*full_model, s);
        char name[32];
        std::snprintf(name, sizeof name, "sigma_%.2f", stress);
        rows.push_back({name, m.psnr, m.ssim, m.perc_proxy});
    }

    nlohmann::json jrows = nlohmann::json::array();
    std::ostringstream csv;
    csv << "config,psnr,ssim,perc_proxy\n";
    for (const auto& r : rows) {
        jrows.push_back({{"config", r.config}, {"psnr", r.psnr}, {"ssim", r.ssim}, {"perc_proxy", r.perc_proxy}});
        csv << r.config << "," << r.psnr << "," << r.ssim << "," << r.perc_proxy << "\n";
    }
    nlohmann::json comparisons = nlohmann::json::array();
    for (size_t i = 1; i < 5 && i < rows.size(); ++i)
        comparisons.push_back({{"vs", rows[i].config}, {"delta_psnr", rows[0].psnr - rows[i].psnr},
                               {"delta_ssim", rows[0].ssim - rows[i].ssim}});
    write_json({{"rows", jrows}, {"comparisons", comparisons}}, (fs::path(out_dir) / "ablation.json").string());
    std::ofstream fcsv(fs::path(out_dir) / "ablation.csv");
    fcsv << csv.str();
    std::cout << csv.str();
    return 0;
}

int cmd_curves(const std::string& config_path, const std::string& out_path, double sigma_max,
               double sigma_step) {
    LossWeightsConfig loss;
    if (!config_path.empty()) loss = load_config(config_path).loss;
    emit_lambda_curve(loss, sigma_max, sigma_step, out_path);
    return 0;
}

int cmd_gradcheck(const std::string& component, double eps) {
    bool all_pass = true;
    for (const auto& spec : gradcheck_registry()) {
        if (!component.empty() && spec.name != component) continue;
        GradCheckResult r = grad_check(spec.name, eps);
        all_pass = all_pass && r.pass();
        std::printf("%-18s %s  max_rel_err=%.3e  threshold=%.0e  eps=%.0e  worst=%s\n",
                    r.name.c_str(), r.pass() ? "PASS" : "FAIL", r.max_rel_err, r.threshold, r.eps,
                    r.worst_param.c_str());
        std::fflush(stdout);
    }
    if (!component.empty()) {
        bool found = false;
        for (const auto& spec : gradcheck_registry()) found = found || spec.name == component;
        if (!found) throw ParameterError("gradcheck: unregistered component '" + component + "'");
    }
    return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mind — noise-adaptive medical image denoising toolbox"};
    app.name("mind");
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "Apply synthetic degradation to an image");
    std::string s_noise = "gaussian", s_in, s_out, s_profile;
    double s_level = 0.1, s_angle = 0.0;
    std::uint64_t s_seed = 0;
    bool s_strict = false;
    synth->add_option("--noise", s_noise, "Noise kind: gaussian|poisson|speckle|motion_blur")
        ->capture_default_str();
    synth->add_option("--level", s_level,
                      "Noise level (gaussian/speckle fraction, blur length px, poisson peak)")
        ->capture_default_str();
    synth->add_option("--angle", s_angle, "Motion blur angle in radians")->capture_default_str();
    synth->add_option("--seed", s_seed, "Random seed")->capture_default_str();
    synth->add_option("--profile", s_profile, "Optional spatial profile image (PFM/PGM, in [0,1])")
        ->capture_default_str();
    synth->add_flag("--strict", s_strict, "Enforce the per-family level ranges");
    synth->add_option("input", s_in, "Input image (PGM/PFM)")->required();
    synth->add_option("output", s_out, "Output image path")->required();

    // estimate-noise
    auto* est = app.add_subcommand("estimate-noise", "Estimate the per-pixel noise level");
    std::string e_in, e_coarse, e_map, e_op = "sobel";
    int e_window = 15;
    est->add_option("--window", e_window, "Sliding window size (odd)")->capture_default_str();
    est->add_option("--coarse", e_coarse,
                    "Coarse denoised image (default: gaussian blur sigma 1.5 of the input)")
        ->capture_default_str();
    est->add_option("--operator", e_op, "Gradient operator: sobel|scharr")->capture_default_str();
    est->add_option("--out-map", e_map, "Write the sigma map as PFM")->capture_default_str();
    est->add_option("input", e_in, "Noisy input image")->required();

    // train
    auto* tr = app.add_subcommand("train", "Train a model from a JSON run config");
    std::string t_config, t_out, t_resume;
    int t_stop = 0;
    tr->add_option("--config", t_config, "Run config JSON")->required();
    tr->add_option("--out", t_out, "Output directory for checkpoints and history")->required();
    tr->add_option("--resume", t_resume, "Checkpoint to resume from")->capture_default_str();
    tr->add_option("--stop-after-epoch", t_stop, "Stop after this epoch (0 = run to completion)")
        ->capture_default_str();

    // denoise
    auto* dn = app.add_subcommand("denoise", "Denoise an image with a trained checkpoint");
    std::string d_ckpt, d_in, d_out, d_diag;
    dn->add_option("--ckpt", d_ckpt, "Checkpoint path")->required();
    dn->add_option("--dump-diagnostics", d_diag,
                   "Directory for attention/sigma diagnostics (PFM)")
        ->capture_default_str();
    dn->add_option("input", d_in, "Noisy input image")->required();
    dn->add_option("output", d_out, "Denoised output path")->required();

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint against classical baselines");
    std::string v_ckpt, v_data, v_out, v_noise = "gaussian";
    int v_batches = 8, v_median = 3;
    double v_level = 0.15, v_blur = 1.2;
    std::uint64_t v_seed = 1234;
    ev->add_option("--ckpt", v_ckpt, "Checkpoint path")->required();
    ev->add_option("--data", v_data, "Dataset root (clean/*.pgm)")->required();
    ev->add_option("--batches", v_batches, "Number of disjoint test batches")->capture_default_str();
    ev->add_option("--noise", v_noise, "Noise kind for degradation")->capture_default_str();
    ev->add_option("--level", v_level, "Noise level")->capture_default_str();
    ev->add_option("--blur-sigma", v_blur, "Gaussian baseline sigma")->capture_default_str();
    ev->add_option("--median-k", v_median, "Median baseline kernel size")->capture_default_str();
    ev->add_option("--seed", v_seed, "Degradation seed")->capture_default_str();
    ev->add_option("--out", v_out, "Report JSON path (stdout when omitted)")->capture_default_str();

    // ablate
    auto* ab = app.add_subcommand("ablate", "Train and compare the ablation configurations");
    std::string a_config, a_out;
    std::uint64_t a_seed = 1234;
    ab->add_option("--config", a_config, "Run config JSON")->required();
    ab->add_option("--out", a_out, "Output directory")->required();
    ab->add_option("--seed", a_seed, "Evaluation degradation seed")->capture_default_str();

    // curves
    auto* cu = app.add_subcommand("curves", "Emit the loss-weight decay curve as CSV");
    std::string c_config, c_out;
    double c_max = 30.0, c_step = 1.0;
    cu->add_option("--config", c_config, "Run config JSON (defaults when omitted)")
        ->capture_default_str();
    cu->add_option("--out", c_out, "CSV output path")->required();
    cu->add_option("--sigma-max", c_max, "Largest sigma (percent units)")->capture_default_str();
    cu->add_option("--sigma-step", c_step, "Sigma increment")->capture_default_str();

    // gradcheck
    auto* gcc_ = app.add_subcommand("gradcheck", "Finite-difference checks of analytic gradients");
    std::string g_component;
    double g_eps = 0.0;
    gcc_->add_option("component", g_component, "Single component (all when omitted)")
        ->capture_default_str();
    gcc_->add_option("--eps", g_eps, "Step override (0 = per-component default)")
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\nRun with --help for usage.\n";
        return 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(s_noise, s_level, s_angle, s_seed, s_in, s_out, s_profile, s_strict);
        if (est->parsed()) return cmd_estimate(e_in, e_coarse, e_window, e_op, e_map);
        if (tr->parsed()) return cmd_train(t_config, t_out, t_resume, t_stop);
        if (dn->parsed()) return cmd_denoise(d_ckpt, d_in, d_out, d_diag);
        if (ev->parsed()) return cmd_evaluate(v_ckpt, v_data, v_batches, v_seed, v_noise, v_level, v_blur, v_median, v_out);
        if (ab->parsed()) return cmd_ablate(a_config, a_out, a_seed);
        if (cu->parsed()) return cmd_curves(c_config, c_out, c_max, c_step);
        if (gcc_->parsed()) return cmd_gradcheck(g_component, g_eps);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
