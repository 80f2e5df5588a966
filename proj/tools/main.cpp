#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "bridgegen/checks.hpp"
#include "bridgegen/dataset.hpp"
#include "bridgegen/sampler.hpp"
#include "bridgegen/training.hpp"

namespace {

// exit codes: 0 success, 1 invariant/validation failure, 2 io/format error
constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;

int cmd_dataset(const std::string& out, int per_subtype, uint64_t seed, int width, int height) {
    const auto manifest = bridgegen::dataset::build_dataset(out, per_subtype, seed, width, height);
    std::cout << "wrote " << manifest.images.size() << " images to " << out << "\n";
    return kExitOk;
}

int cmd_train(const std::string& config_path) {
    const auto cfg = bridgegen::training::parse_train_config(config_path);
    const auto result = bridgegen::training::train(cfg);
    if (!result.metrics.empty())
        std::cout << "final bits/dim " << result.metrics.back().bits_per_dim << " after step "
                  << result.metrics.back().step << "\n";
    std::cout << "checkpoint written to " << (std::filesystem::path(cfg.out_dir) / "checkpoint_final.pxcn").string()
              << "\n";
    return kExitOk;
}

int cmd_sample(const bridgegen::sampler::SampleConfig& cfg) {
    const auto result = bridgegen::sampler::run_sample(cfg);
    for (const auto& f : result.files) std::cout << (cfg.out_dir / f).string() << "\n";
    std::cout << "run manifest: " << (cfg.out_dir / "run_manifest.json").string() << "\n";
    return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, bool csv) {
    const auto ckpt = bridgegen::training::load_checkpoint(ckpt_path);
    const auto report = bridgegen::training::eval_nll(ckpt, data_dir);
    if (csv) {
        std::printf("subtype,bits_per_dim,pixels\n");
        for (const auto& [name, rep] : report.per_subtype)
            std::printf("%s,%.6f,%lld\n", name.c_str(), rep.bits_per_dim,
                        static_cast<long long>(rep.pixel_count));
        std::printf("overall,%.6f,%lld\n", report.overall.bits_per_dim,
                    static_cast<long long>(report.overall.pixel_count));
    } else {
        std::printf("%-28s %12s %12s\n", "subtype", "bits/dim", "pixels");
        for (const auto& [name, rep] : report.per_subtype)
            std::printf("%-28s %12.2f %12lld\n", name.c_str(), rep.bits_per_dim,
                        static_cast<long long>(rep.pixel_count));
        std::printf("%-28s %12.2f %12lld\n", "overall", report.overall.bits_per_dim,
                    static_cast<long long>(report.overall.pixel_count));
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"pixel-by-pixel bridge facade generator"};
    app.require_subcommand(1);

    // dataset
    auto* ds = app.add_subcommand("dataset", "synthesize the bridge facade dataset");
    std::string ds_out;
    int ds_per = 1200;
    uint64_t ds_seed = 0;
    int ds_w = 192, ds_h = 48;
    ds->add_option("--out", ds_out, "output directory")->required();
    ds->add_option("--per-subtype", ds_per, "images per subtype (default 1200)");
    ds->add_option("--seed", ds_seed, "master seed");
    ds->add_option("--width", ds_w, "canvas width (default 192)");
    ds->add_option("--height", ds_h, "canvas height (default 48)");

    // train
    auto* tr = app.add_subcommand("train", "train from a JSON config");
    std::string tr_config;
    tr->add_option("--config", tr_config, "config file")->required();

    // sample
    auto* sm = app.add_subcommand("sample", "generate images pixel by pixel");
    bridgegen::sampler::SampleConfig sc;
    std::string sm_ckpt, sm_out, sm_seed_image, sm_data;
    int sm_n = 1, sm_seed_rows = 0;
    double sm_temp = 1.0;
    uint64_t sm_seed = 0;
    bool sm_fast = false;
    sm->add_option("--ckpt", sm_ckpt, "checkpoint path")->required();
    sm->add_option("--n", sm_n, "number of images");
    sm->add_option("--temperature", sm_temp, "sampling temperature (default 1.0)");
    sm->add_option("--seed", sm_seed, "rng seed");
    sm->add_option("--out", sm_out, "output directory")->required();
    sm->add_option("--seed-image", sm_seed_image, "completion seed image (PGM)");
    sm->add_option("--seed-rows", sm_seed_rows, "rows of the seed image to keep");
    sm->add_option("--data", sm_data, "training data dir for the nearest-image hint");
    sm->add_flag("--fast", sm_fast, "incremental recomputation");

    // eval
    auto* ev = app.add_subcommand("eval", "bits/dim over a dataset");
    std::string ev_ckpt, ev_data;
    bool ev_csv = false;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_flag("--csv", ev_csv, "CSV output");

    // check
    auto* ck = app.add_subcommand("check", "run the built-in invariant suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitIo;
    }

    try {
        if (ds->parsed()) return cmd_dataset(ds_out, ds_per, ds_seed, ds_w, ds_h);
        if (tr->parsed()) return cmd_train(tr_config);
        if (sm->parsed()) {
            sc.checkpoint = sm_ckpt;
            sc.count = sm_n;
            sc.temperature = sm_temp;
            sc.rng_seed = sm_seed;
            sc.seed_image = sm_seed_image;
            sc.seed_rows = sm_seed_rows;
            sc.out_dir = sm_out;
            sc.fast_mode = sm_fast;
            sc.train_data_dir = sm_data;
            return cmd_sample(sc);
        }
        if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_csv);
        if (ck->parsed()) return bridgegen::checks::run_self_checks(std::cout) ? kExitOk : kExitValidation;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::out_of_range& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitOk;
}
