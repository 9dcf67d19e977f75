#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mind/synthdata.hpp"
#include "mind/trainer.hpp"

using namespace mind;
namespace fs = std::filesystem;

namespace {
std::string fresh_dir(const std::string& name) {
    auto d = fs::temp_directory_path() / "mind_test_trainer" / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d.string();
}

std::string make_dataset(const std::string& name, int count = 6, int size = 48) {
    const std::string root = fresh_dir(name);
    fs::create_directories(root + "/clean");
    for (int i = 0; i < count; ++i) {
        char file[512];
        std::snprintf(file, sizeof file, "%s/clean/img%02d.pgm", root.c_str(), i);
        write_image(synthetic_texture(size, size, 9000 + i), file, ImageFormat::pgm16);
    }
    return root;
}

RunConfig tiny_config(const std::string& data_root) {
    RunConfig cfg;
    cfg.input_size = 32;
    cfg.batch_size = 2;
    cfg.epochs = 2;
    cfg.steps_per_epoch = 3;
    cfg.base_channels = 8;
    cfg.embed_dim = 16;
    cfg.transformer_layers = 1;
    cfg.seed = 5;
    cfg.data_root = data_root;
    cfg.noise.kind = "gaussian";
    cfg.noise.level = 0.15;
    return cfg;
}
}  // namespace

TEST_CASE("cosine schedule endpoints and midpoint", "[trainer]") {
    CHECK(cosine_lr(0, 100, 1e-4, 1e-6) == Catch::Approx(1e-4).epsilon(1e-12));
    CHECK(cosine_lr(100, 100, 1e-4, 1e-6) == Catch::Approx(1e-6).epsilon(1e-12));
    CHECK(cosine_lr(50, 100, 1e-4, 1e-6) == Catch::Approx(1e-6 + (1e-4 - 1e-6) / 2).epsilon(1e-12));
    CHECK_THROWS_AS(cosine_lr(-1, 100, 1e-4, 1e-6), ParameterError);
    CHECK_THROWS_AS(cosine_lr(101, 100, 1e-4, 1e-6), ParameterError);
}

TEST_CASE("cosine schedule is monotone within bounds", "[trainer][property]") {
    double prev = 1e-4;
    for (int s = 0; s <= 200; ++s) {
        const double lr = cosine_lr(s, 200, 1e-4, 1e-6);
        REQUIRE(lr <= prev + 1e-18);
        REQUIRE(lr >= 1e-6);
        REQUIRE(lr <= 1e-4);
        prev = lr;
    }
}

TEST_CASE("adam leaves weights alone under zero gradients", "[trainer]") {
    ParamSet<float> ps;
    auto w = ps.add("w", Tensor<float>::full({4}, 0.5f));
    Adam<float> adam;
    const auto before = w.val().data;
    for (int t = 0; t < 5; ++t) {
        ps.zero_grads();
        // gradient never set: accumulation stays empty
        adam.step(ps, 1e-3);
    }
    CHECK(w.val().data == before);

    // an explicitly zero gradient also leaves the weight unchanged
    w.n->accum(Tensor<float>::zeros({4}));
    adam.step(ps, 1e-3);
    CHECK(w.val().data == before);
}

TEST_CASE("adam moves weights against the gradient", "[trainer]") {
    ParamSet<float> ps;
    auto w = ps.add("w", Tensor<float>::full({2}, 1.0f));
    Adam<float> adam;
    ps.zero_grads();
    w.n->accum(Tensor<float>::full({2}, 3.0f));
    adam.step(ps, 0.01);
    CHECK(w.val().data[0] < 1.0f);
}

TEST_CASE("config validation catches bad fields", "[trainer]") {
    RunConfig cfg;
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = RunConfig{};
    cfg.lr_min = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = RunConfig{};
    cfg.input_size = 30;  // not divisible by 4 (scales) * lcm patch
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = RunConfig{};
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("run config JSON uses the documented key names", "[trainer]") {
    RunConfig cfg;
    nlohmann::json j = cfg;
    for (const char* key :
         {"input_size", "batch_size", "epochs", "steps_per_epoch", "lr0", "lr_min", "adam_beta1",
          "adam_beta2", "adam_eps", "seed", "loss", "scales", "base_channels", "embed_dim", "patch",
          "transformer_layers", "r", "window", "use_naab", "use_nle", "use_multiscale",
          "use_crossmodal", "data_root", "noise", "augment"})
        REQUIRE(j.contains(key));
    CHECK(j["lr0"] == 1e-4);
    CHECK(j["lr_min"] == 1e-6);
    CHECK(j["adam_beta1"] == 0.9);
    CHECK(j["adam_beta2"] == 0.999);
    CHECK(j["adam_eps"] == 1e-8);
    RunConfig back = j.get<RunConfig>();
    nlohmann::json j2 = back;
    CHECK(j == j2);
}

TEST_CASE("checkpoint round trip is byte identical", "[trainer]") {
    CheckpointData ck;
    Rng rng(71);
    Tensor<float> a({3, 4});
    for (auto& v : a.data) v = float(rng.normal());
    Tensor<float> b({8});
    for (auto& v : b.data) v = float(rng.normal());
    ck.tensors.emplace("alpha", a);
    ck.tensors.emplace("beta", b);
    ck.metadata = {{"epoch", 3}, {"note", "x"}};
    const std::string dir = fresh_dir("ckpt");
    const std::string p1 = dir + "/a.ckpt", p2 = dir + "/b.ckpt";
    save_checkpoint(ck, p1);
    CheckpointData back = load_checkpoint(p1);
    REQUIRE(back.tensors.at("alpha").data == a.data);
    REQUIRE(back.tensors.at("beta").shape == b.shape);
    REQUIRE(back.metadata["epoch"] == 3);
    save_checkpoint(back, p2);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(s1 == s2);
}

TEST_CASE("checkpoint rejects corruption", "[trainer]") {
    const std::string dir = fresh_dir("ckpt_bad");
    CheckpointData ck;
    ck.tensors.emplace("w", Tensor<float>::full({4}, 1.0f));
    ck.metadata = {{"epoch", 1}};
    const std::string path = dir + "/x.ckpt";
    save_checkpoint(ck, path);

    std::ifstream f(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    f.close();

    {  // magic
        std::string bad = bytes;
        bad[0] = 'X';
        std::ofstream o(dir + "/bad1.ckpt", std::ios::binary);
        o.write(bad.data(), std::streamsize(bad.size()));
        o.close();
        CHECK_THROWS_AS(load_checkpoint(dir + "/bad1.ckpt"), FormatError);
    }
    {  // truncation
        std::string bad = bytes.substr(0, bytes.size() / 2);
        std::ofstream o(dir + "/bad2.ckpt", std::ios::binary);
        o.write(bad.data(), std::streamsize(bad.size()));
        o.close();
        CHECK_THROWS_AS(load_checkpoint(dir + "/bad2.ckpt"), FormatError);
    }
    {  // version
        std::string bad = bytes;
        bad[8] = 9;
        std::ofstream o(dir + "/bad3.ckpt", std::ios::binary);
        o.write(bad.data(), std::streamsize(bad.size()));
        o.close();
        CHECK_THROWS_WITH(load_checkpoint(dir + "/bad3.ckpt"),
                          Catch::Matchers::ContainsSubstring("version"));
    }
}

TEST_CASE("dataset discovery and split", "[trainer]") {
    const std::string root = make_dataset("split", 10);
    Dataset ds = discover_dataset(root);
    CHECK(ds.train_files.size() == 8);
    CHECK(ds.eval_files.size() == 2);
    const std::string tiny = make_dataset("tiny", 3);
    Dataset ds2 = discover_dataset(tiny);
    CHECK(ds2.train_files.size() == 3);
    CHECK(ds2.eval_files.empty());
    CHECK_THROWS_AS(discover_dataset(fresh_dir("empty_root")), DatasetError);
}

TEST_CASE("training runs are bit-reproducible", "[trainer][slow]") {
    const std::string root = make_dataset("repro");
    RunConfig cfg = tiny_config(root);
    TrainResult a = train(cfg, fresh_dir("repro_a"), {.quiet = true});
    TrainResult b = train(cfg, fresh_dir("repro_b"), {.quiet = true});
    REQUIRE(a.history.size() == b.history.size());
    for (size_t i = 0; i < a.history.size(); ++i) {
        REQUIRE(a.history[i].total == b.history[i].total);
        REQUIRE(a.history[i].mse == b.history[i].mse);
    }
    for (const auto& [name, var] : a.model.params.entries)
        REQUIRE(var.val().data == b.model.params.entries.at(name).val().data);
}

TEST_CASE("resume reproduces the uninterrupted history", "[trainer][slow]") {
    const std::string root = make_dataset("resume");
    RunConfig cfg = tiny_config(root);
    cfg.epochs = 4;

    TrainResult full = train(cfg, fresh_dir("resume_full"), {.quiet = true});

    const std::string part_dir = fresh_dir("resume_part");
    TrainOptions stop2;
    stop2.stop_after_epoch = 2;
    stop2.quiet = true;
    TrainResult part = train(cfg, part_dir, stop2);
    REQUIRE(part.history.size() == size_t(2 * cfg.steps_per_epoch));

    TrainOptions resume;
    resume.resume_path = part.final_path;
    resume.quiet = true;
    TrainResult rest = train(cfg, fresh_dir("resume_rest"), resume);
    REQUIRE(rest.history.size() == size_t(2 * cfg.steps_per_epoch));

    for (size_t i = 0; i < rest.history.size(); ++i) {
        const auto& expect = full.history[size_t(2 * cfg.steps_per_epoch) + i];
        const auto& got = rest.history[i];
        REQUIRE(got.total == expect.total);
        REQUIRE(got.step == expect.step);
        REQUIRE(got.lr == expect.lr);
    }
    for (const auto& [name, var] : full.model.params.entries)
        REQUIRE(var.val().data == rest.model.params.entries.at(name).val().data);
}

TEST_CASE("training loss decreases on a short run", "[trainer][slow]") {
    const std::string root = make_dataset("learn");
    RunConfig cfg = tiny_config(root);
    cfg.epochs = 3;
    cfg.steps_per_epoch = 6;
    TrainResult res = train(cfg, fresh_dir("learn_out"), {.quiet = true});
    double first_epoch = 0, last_epoch = 0;
    for (int s = 0; s < cfg.steps_per_epoch; ++s) {
        first_epoch += res.history[size_t(s)].total;
        last_epoch += res.history[res.history.size() - 1 - size_t(s)].total;
    }
    CHECK(last_epoch < first_epoch);
}

TEST_CASE("model checkpoints reload into an identical model", "[trainer][slow]") {
    const std::string root = make_dataset("reload");
    RunConfig cfg = tiny_config(root);
    TrainResult res = train(cfg, fresh_dir("reload_out"), {.quiet = true});
    auto [cfg2, model2] = model_from_checkpoint(load_checkpoint(res.final_path));
    nlohmann::json ja = cfg, jb = cfg2;
    REQUIRE(ja == jb);
    Image img = synthetic_texture(32, 32, 4321);
    DenoiseResult r1 = mind_forward(res.model, img);
    DenoiseResult r2 = mind_forward(model2, img);
    REQUIRE(r1.denoised.pix == r2.denoised.pix);
}

TEST_CASE("empty dataset rejected by train", "[trainer]") {
    const std::string root = fresh_dir("no_data");
    fs::create_directories(root + "/clean");
    RunConfig cfg = tiny_config(root);
    CHECK_THROWS_AS(train(cfg, fresh_dir("no_data_out"), {.quiet = true}), DatasetError);
}

TEST_CASE("adversarial term trains without blowing up", "[trainer][slow]") {
    const std::string root = make_dataset("adv");
    RunConfig cfg = tiny_config(root);
    cfg.loss.adversarial_enabled = true;
    cfg.epochs = 1;
    TrainResult res = train(cfg, fresh_dir("adv_out"), {.quiet = true});
    for (const auto& rep : res.history) {
        REQUIRE(std::isfinite(rep.total));
        REQUIRE(rep.adversarial > 0.0);
    }
}
