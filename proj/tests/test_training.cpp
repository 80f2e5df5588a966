#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "bridgegen/training.hpp"
#include "helpers.hpp"

using namespace bridgegen;
using namespace bridgegen::training;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
    const fs::path p = fs::temp_directory_path() / "bridgegen_tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

model::ModelConfig crop_config(model::HeadKind head, int k_or_m) {
    model::ModelConfig cfg;
    cfg.image_h = 12;
    cfg.image_w = 24;
    cfg.num_resnet = 1;
    cfg.num_filters = 8;
    cfg.receptive_rows = 2;
    cfg.receptive_cols = 3;
    cfg.dropout_p = 0.0f;
    cfg.head = head;
    if (head == model::HeadKind::Categorical) cfg.num_categories = k_or_m;
    else cfg.num_components = k_or_m;
    return cfg;
}

// dataset of 24x12 crops taken from rendered 96x24 facades
fs::path make_crop_dataset(const char* name, int count) {
    const fs::path dir = temp_dir(name);
    dataset::DatasetManifest manifest;
    char fname[32];
    for (int i = 0; i < count; ++i) {
        const auto subtype = static_cast<dataset::BridgeSubtype>(i % dataset::kSubtypeCount);
        const dataset::RasterImage full = dataset::render(dataset::generate_spec(subtype, i, 11, 96, 24));
        dataset::RasterImage crop = dataset::RasterImage::blank(24, 12);
        for (int y = 0; y < 12; ++y)
            for (int x = 0; x < 24; ++x) crop.at(y, x) = full.at(y + 6, x + 36);
        std::snprintf(fname, sizeof(fname), "crop_%03d.pgm", i);
        dataset::write_pgm(dir / fname, crop);
        manifest.images.push_back({fname, dataset::subtype_name(subtype), 0});
        manifest.counts[dataset::subtype_name(subtype)]++;
    }
    dataset::write_manifest(dir / "manifest.json", manifest);
    return dir;
}

} // namespace

TEST_CASE("adam first step matches the closed form") {
    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    ParamSet params;
    params["w"] = Tensor::zeros({4});
    GradMap grads;
    grads["w"] = Tensor::full({4}, 0.5f);
    AdamMoments mom = zero_moments(params);
    adam_step(params, grads, mom, 1, cfg);
    for (float v : params.at("w").data) CHECK(std::abs(static_cast<double>(v) + 1e-3) <= 1e-6);
}

TEST_CASE("adam with zero gradients leaves parameters unchanged") {
    TrainConfig cfg;
    Pcg32 rng(1);
    ParamSet params;
    params["w"] = oracle::random_tensor({3, 2}, rng);
    const ParamSet before = params;
    GradMap grads;
    grads["w"] = Tensor::zeros({3, 2});
    AdamMoments mom = zero_moments(params);
    for (int s = 1; s <= 5; ++s) adam_step(params, grads, mom, s, cfg);
    CHECK(params.at("w").data == before.at("w").data);
}

TEST_CASE("adam is deterministic and validates gradient shapes") {
    TrainConfig cfg;
    Pcg32 rng(2);
    ParamSet a, b;
    a["w"] = oracle::random_tensor({8}, rng);
    b["w"] = a["w"];
    AdamMoments ma = zero_moments(a), mb = zero_moments(b);
    for (int s = 1; s <= 10; ++s) {
        GradMap g;
        g["w"] = Tensor::full({8}, 0.01f * static_cast<float>(s));
        adam_step(a, g, ma, s, cfg);
        adam_step(b, g, mb, s, cfg);
    }
    CHECK(a.at("w").data == b.at("w").data);

    GradMap bad;
    bad["w"] = Tensor::zeros({7});
    CHECK_THROWS_AS(adam_step(a, bad, ma, 11, cfg), std::invalid_argument);
    GradMap missing;
    CHECK_THROWS_AS(adam_step(a, missing, ma, 11, cfg), std::invalid_argument);
}

TEST_CASE("checkpoints round-trip byte-exactly and reject corruption") {
    const fs::path dir = temp_dir("ckpt");
    const model::ModelConfig cfg = crop_config(model::HeadKind::Categorical, 4);
    Checkpoint ckpt;
    ckpt.config = cfg;
    ckpt.params = model::init_params(cfg, 5);
    ckpt.moments = zero_moments(ckpt.params);
    ckpt.step = 17;
    ckpt.rng_seed = 5;

    save_checkpoint(dir / "a.pxcn", ckpt);
    const Checkpoint loaded = load_checkpoint(dir / "a.pxcn");
    CHECK(loaded.step == 17);
    CHECK(loaded.config == cfg);
    save_checkpoint(dir / "b.pxcn", loaded);

    std::ifstream fa(dir / "a.pxcn", std::ios::binary), fb(dir / "b.pxcn", std::ios::binary);
    const std::vector<char> ba(std::istreambuf_iterator<char>(fa), {});
    const std::vector<char> bb(std::istreambuf_iterator<char>(fb), {});
    CHECK(ba == bb);

    // flip a magic byte
    {
        std::fstream f(dir / "a.pxcn", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.put('Q');
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "a.pxcn"), doctest::Contains("magic"), std::runtime_error);

    fs::resize_file(dir / "b.pxcn", fs::file_size(dir / "b.pxcn") / 2);
    CHECK_THROWS_AS(load_checkpoint(dir / "b.pxcn"), std::runtime_error);
}

TEST_CASE("resume rejects a checkpoint from a different model, naming the field") {
    const fs::path data = make_crop_dataset("resume_mismatch", 4);
    const fs::path out = temp_dir("resume_mismatch_out");

    TrainConfig cfg;
    cfg.data_dir = data.string();
    cfg.out_dir = out.string();
    cfg.batch_size = 4;
    cfg.epochs = 1;
    cfg.model = crop_config(model::HeadKind::Categorical, 4);
    train(cfg);

    TrainConfig other = cfg;
    other.model.num_filters = 16;
    other.resume_from = (out / "checkpoint_final.pxcn").string();
    CHECK_THROWS_WITH_AS(train(other), doctest::Contains("num_filters"), std::runtime_error);
}

TEST_CASE("untrained zero-init head scores exactly the uniform baseline") {
    const fs::path data = make_crop_dataset("uniform_eval", 3);
    for (auto [k, expect] : {std::pair{256, 8.0}, std::pair{4, 2.0}}) {
        const model::ModelConfig cfg = crop_config(model::HeadKind::Categorical, k);
        Checkpoint ckpt;
        ckpt.config = cfg;
        ckpt.params = model::init_params(cfg, 1);
        ckpt.moments = zero_moments(ckpt.params);
        const EvalReport rep = eval_nll(ckpt, data);
        CHECK(std::abs(rep.overall.bits_per_dim - expect) <= 0.01);
        for (const auto& [name, sub] : rep.per_subtype) {
            CHECK(std::abs(sub.bits_per_dim - expect) <= 0.01);
            (void)name;
        }
    }
}

TEST_CASE("eval rejects mismatched image dims") {
    const fs::path data = make_crop_dataset("eval_dims", 2);
    model::ModelConfig cfg = crop_config(model::HeadKind::Categorical, 4);
    cfg.image_w = 40;
    Checkpoint ckpt;
    ckpt.config = cfg;
    ckpt.params = model::init_params(cfg, 1);
    ckpt.moments = zero_moments(ckpt.params);
    CHECK_THROWS_AS(eval_nll(ckpt, data), std::invalid_argument);
}

TEST_CASE("one optimizer step per epoch when the batch covers the dataset") {
    const fs::path data = make_crop_dataset("one_step", 16);
    const fs::path out = temp_dir("one_step_out");
    TrainConfig cfg;
    cfg.data_dir = data.string();
    cfg.out_dir = out.string();
    cfg.batch_size = 16;
    cfg.epochs = 3;
    cfg.model = crop_config(model::HeadKind::Categorical, 4);
    const TrainResult res = train(cfg);
    REQUIRE(res.metrics.size() == 3);
    for (int e = 0; e < 3; ++e) CHECK(res.metrics[static_cast<size_t>(e)].epoch == e);
    CHECK(res.checkpoint.step == 3);
}

TEST_CASE("a short overfit run descends and keeps masked taps at zero") {
    const fs::path data = make_crop_dataset("overfit", 4);
    const fs::path out = temp_dir("overfit_out");
    TrainConfig cfg;
    cfg.data_dir = data.string();
    cfg.out_dir = out.string();
    cfg.batch_size = 4;
    cfg.epochs = 60;
    cfg.rng_seed = 3;
    cfg.model = crop_config(model::HeadKind::Categorical, 4);
    const TrainResult res = train(cfg);
    REQUIRE(res.metrics.size() == 60);

    CHECK(res.metrics[0].bits_per_dim == doctest::Approx(2.0).epsilon(1e-6));
    for (int i = 0; i < 20; ++i)
        REQUIRE(res.metrics[static_cast<size_t>(i + 1)].bits_per_dim <
                res.metrics[static_cast<size_t>(i)].bits_per_dim);
    CHECK(res.metrics.back().bits_per_dim < 0.8 * res.metrics.front().bits_per_dim);

    const Tensor& w = res.checkpoint.params.at("conv_in.weight");
    const Tensor mask = model::build_mask(w.shape[0], w.shape[1], model::MaskKind::A);
    for (int r = 0; r < w.shape[0]; ++r)
        for (int c = 0; c < w.shape[1]; ++c)
            for (int o = 0; o < w.shape[3]; ++o)
                if (mask.at2(r, c) == 0.0f) REQUIRE(w.at4(r, c, 0, o) == 0.0f);

    const Tensor& bw = res.checkpoint.params.at("block0.conv.weight");
    const Tensor bmask = model::build_mask(3, 3, model::MaskKind::B);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < bw.shape[2]; ++i)
                for (int o = 0; o < bw.shape[3]; ++o)
                    if (bmask.at2(r, c) == 0.0f) REQUIRE(bw.at4(r, c, i, o) == 0.0f);
}

TEST_CASE("training with a logistic mixture head also descends") {
    const fs::path data = make_crop_dataset("dlm_overfit", 4);
    const fs::path out = temp_dir("dlm_overfit_out");
    TrainConfig cfg;
    cfg.data_dir = data.string();
    cfg.out_dir = out.string();
    cfg.batch_size = 4;
    cfg.epochs = 40;
    cfg.model = crop_config(model::HeadKind::LogisticMixture, 1);
    const TrainResult res = train(cfg);
    REQUIRE(res.metrics.size() == 40);
    CHECK(res.metrics.back().bits_per_dim < res.metrics.front().bits_per_dim);
    for (const auto& row : res.metrics) REQUIRE(std::isfinite(row.bits_per_dim));
}

TEST_CASE("resuming mid-run continues the metric log bit-identically") {
    const fs::path data = make_crop_dataset("resume", 8);
    const fs::path out_a = temp_dir("resume_a");
    const fs::path out_b = temp_dir("resume_b");

    TrainConfig base;
    base.data_dir = data.string();
    base.batch_size = 4;
    base.rng_seed = 21;
    base.model = crop_config(model::HeadKind::Categorical, 4);

    TrainConfig full = base;
    full.out_dir = out_a.string();
    full.epochs = 4; // 8 steps
    const TrainResult unbroken = train(full);

    TrainConfig half = base;
    half.out_dir = out_b.string();
    half.epochs = 2; // 4 steps
    const TrainResult first = train(half);

    TrainConfig rest = base;
    rest.out_dir = out_b.string();
    rest.epochs = 4;
    rest.resume_from = (out_b / "checkpoint_final.pxcn").string();
    const TrainResult second = train(rest);

    REQUIRE(unbroken.metrics.size() == 8);
    REQUIRE(first.metrics.size() == 4);
    REQUIRE(second.metrics.size() == 4);
    for (int i = 0; i < 4; ++i) {
        CHECK(unbroken.metrics[static_cast<size_t>(i)].bits_per_dim ==
              first.metrics[static_cast<size_t>(i)].bits_per_dim);
        CHECK(unbroken.metrics[static_cast<size_t>(i + 4)].bits_per_dim ==
              second.metrics[static_cast<size_t>(i)].bits_per_dim);
    }
    for (const auto& [name, t] : unbroken.checkpoint.params)
        REQUIRE(t.data == second.checkpoint.params.at(name).data);
}

TEST_CASE("two runs with the same seed produce identical metrics") {
    const fs::path data = make_crop_dataset("det", 6);
    const fs::path out_a = temp_dir("det_a");
    const fs::path out_b = temp_dir("det_b");
    TrainConfig cfg;
    cfg.data_dir = data.string();
    cfg.batch_size = 3;
    cfg.epochs = 3;
    cfg.rng_seed = 77;
    cfg.model = crop_config(model::HeadKind::Categorical, 4);
    cfg.model.dropout_p = 0.3f; // exercise the dropout stream too
    cfg.out_dir = out_a.string();
    const TrainResult a = train(cfg);
    cfg.out_dir = out_b.string();
    const TrainResult b = train(cfg);
    REQUIRE(a.metrics.size() == b.metrics.size());
    for (size_t i = 0; i < a.metrics.size(); ++i)
        CHECK(a.metrics[i].bits_per_dim == b.metrics[i].bits_per_dim);
    for (const auto& [name, t] : a.checkpoint.params) REQUIRE(t.data == b.checkpoint.params.at(name).data);
}

TEST_CASE("metrics csv is append-only with the documented columns") {
    const fs::path data = make_crop_dataset("csv", 4);
    const fs::path out = temp_dir("csv_out");
    TrainConfig cfg;
    cfg.data_dir = data.string();
    cfg.out_dir = out.string();
    cfg.batch_size = 4;
    cfg.epochs = 2;
    cfg.model = crop_config(model::HeadKind::Categorical, 4);
    train(cfg);
    std::ifstream in(out / "metrics.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "step,epoch,split,bits_per_dim");
    int rows = 0;
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) ++rows;
    CHECK(rows == 2);
}

TEST_CASE("a non-finite loss aborts with the step number") {
    const fs::path data = make_crop_dataset("nan_abort", 2);
    const fs::path out = temp_dir("nan_abort_out");

    // poison a checkpoint so the very first resumed step sees a non-finite loss
    const model::ModelConfig cfg = crop_config(model::HeadKind::Categorical, 4);
    Checkpoint ckpt;
    ckpt.config = cfg;
    ckpt.params = model::init_params(cfg, 1);
    ckpt.moments = zero_moments(ckpt.params);
    ckpt.params.at("head.bias").data[0] = std::numeric_limits<float>::infinity();
    const fs::path poisoned = out / "poisoned.pxcn";
    save_checkpoint(poisoned, ckpt);

    TrainConfig tc;
    tc.data_dir = data.string();
    tc.out_dir = out.string();
    tc.batch_size = 2;
    tc.epochs = 1;
    tc.model = cfg;
    tc.resume_from = poisoned.string();
    CHECK_THROWS_WITH_AS(train(tc), doctest::Contains("step 1"), std::runtime_error);
}

TEST_CASE("a converged model scores the training set at least as well as held-out variants") {
    const fs::path train_data = make_crop_dataset("gen_train", 4);
    // held-out crops from different jitter draws of the same subtypes
    const fs::path held = temp_dir("gen_held");
    dataset::DatasetManifest manifest;
    for (int i = 0; i < 4; ++i) {
        const auto subtype = static_cast<dataset::BridgeSubtype>(i % dataset::kSubtypeCount);
        const dataset::RasterImage full =
            dataset::render(dataset::generate_spec(subtype, i + 100, 11, 96, 24));
        dataset::RasterImage crop = dataset::RasterImage::blank(24, 12);
        for (int y = 0; y < 12; ++y)
            for (int x = 0; x < 24; ++x) crop.at(y, x) = full.at(y + 6, x + 36);
        const std::string fname = "held_" + std::to_string(i) + ".pgm";
        dataset::write_pgm(held / fname, crop);
        manifest.images.push_back({fname, dataset::subtype_name(subtype), 0});
        manifest.counts[dataset::subtype_name(subtype)]++;
    }
    dataset::write_manifest(held / "manifest.json", manifest);

    const fs::path out = temp_dir("gen_out");
    TrainConfig cfg;
    cfg.data_dir = train_data.string();
    cfg.out_dir = out.string();
    cfg.batch_size = 4;
    cfg.epochs = 200;
    cfg.rng_seed = 5;
    cfg.model = crop_config(model::HeadKind::Categorical, 4);
    const TrainResult res = train(cfg);
    const double on_train = eval_nll(res.checkpoint, train_data).overall.bits_per_dim;
    const double on_held = eval_nll(res.checkpoint, held).overall.bits_per_dim;
    CHECK(on_train <= on_held);
}

TEST_CASE("checkpoint_every emits periodic checkpoints that resume cleanly") {
    const fs::path data = make_crop_dataset("periodic", 4);
    const fs::path out = temp_dir("periodic_out");
    TrainConfig cfg;
    cfg.data_dir = data.string();
    cfg.out_dir = out.string();
    cfg.batch_size = 2;
    cfg.epochs = 3; // 6 steps
    cfg.checkpoint_every = 2;
    cfg.model = crop_config(model::HeadKind::Categorical, 4);
    train(cfg);
    CHECK(fs::exists(out / "checkpoint_00000002.pxcn"));
    CHECK(fs::exists(out / "checkpoint_00000004.pxcn"));
    CHECK(fs::exists(out / "checkpoint_00000006.pxcn"));
    const Checkpoint mid = load_checkpoint(out / "checkpoint_00000004.pxcn");
    CHECK(mid.step == 4);
}
