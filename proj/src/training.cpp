#include "bridgegen/training.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace bridgegen::training {

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
    if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
    if (checkpoint_every < 0) throw std::invalid_argument("TrainConfig: checkpoint_every must be >= 0");
    model.validate();
}

TrainConfig parse_train_config(const std::filesystem::path& json_path) {
    std::ifstream in(json_path);
    if (!in) throw std::runtime_error("parse_train_config: cannot open " + json_path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("parse_train_config: " + json_path.string() + ": " + e.what());
    }

    TrainConfig cfg;
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.beta1 = j.value("beta1", cfg.beta1);
    cfg.beta2 = j.value("beta2", cfg.beta2);
    cfg.epsilon = j.value("epsilon", cfg.epsilon);
    cfg.rng_seed = j.value("rng_seed", cfg.rng_seed);
    cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
    cfg.data_dir = j.at("data_dir").get<std::string>();
    cfg.out_dir = j.at("out_dir").get<std::string>();
    cfg.resume_from = j.value("resume_from", std::string{});

    if (j.contains("model")) {
        const auto& m = j.at("model");
        cfg.model.image_h = m.value("image_h", cfg.model.image_h);
        cfg.model.image_w = m.value("image_w", cfg.model.image_w);
        cfg.model.num_resnet = m.value("num_resnet", cfg.model.num_resnet);
        cfg.model.num_filters = m.value("num_filters", cfg.model.num_filters);
        if (m.contains("receptive_field")) {
            cfg.model.receptive_rows = m.at("receptive_field").at(0).get<int>();
            cfg.model.receptive_cols = m.at("receptive_field").at(1).get<int>();
        }
        cfg.model.dropout_p = m.value("dropout_p", cfg.model.dropout_p);
        if (m.contains("head")) {
            const auto& h = m.at("head");
            const std::string type = h.at("type").get<std::string>();
            if (type == "categorical") {
                cfg.model.head = model::HeadKind::Categorical;
                cfg.model.num_categories = h.value("num_categories", 256);
            } else if (type == "logistic_mixture") {
                cfg.model.head = model::HeadKind::LogisticMixture;
                cfg.model.num_components = h.value("num_components", 1);
            } else {
                throw std::runtime_error("parse_train_config: unknown head type '" + type + "'");
            }
        }
    }
    cfg.validate();
    return cfg;
}

AdamMoments zero_moments(const ParamSet& params) {
    AdamMoments mom;
    for (const auto& [name, t] : params) {
        mom.m[name] = Tensor::zeros(t.shape);
        mom.v[name] = Tensor::zeros(t.shape);
    }
    return mom;
}

void adam_step(ParamSet& params, const GradMap& grads, AdamMoments& moments,
               int64_t step, const TrainConfig& cfg) {
    if (step < 1) throw std::invalid_argument("adam_step: step must be >= 1");
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (auto& [name, theta] : params) {
        auto git = grads.find(name);
        if (git == grads.end()) throw std::invalid_argument("adam_step: missing gradient for " + name);
        const Tensor& g = git->second;
        if (!same_shape(g, theta))
            throw std::invalid_argument("adam_step: gradient shape " + shape_str(g.shape) + " does not match param " +
                                        name + " " + shape_str(theta.shape));
        Tensor& m = moments.m.at(name);
        Tensor& v = moments.v.at(name);
        for (size_t i = 0; i < theta.data.size(); ++i) {
            const double gi = static_cast<double>(g.data[i]);
            const double mi = cfg.beta1 * static_cast<double>(m.data[i]) + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * static_cast<double>(v.data[i]) + (1.0 - cfg.beta2) * gi * gi;
            m.data[i] = static_cast<float>(mi);
            v.data[i] = static_cast<float>(vi);
            const double mhat = static_cast<double>(m.data[i]) / bc1;
            const double vhat = static_cast<double>(v.data[i]) / bc2;
            theta.data[i] = static_cast<float>(static_cast<double>(theta.data[i]) -
                                               cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon));
        }
    }
}

// ---- checkpoint io -----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'P', 'X', 'C', 'N'};
constexpr uint32_t kVersion = 1;

void require_little_endian() {
    if constexpr (std::endian::native != std::endian::little)
        throw std::runtime_error("checkpoint io requires a little-endian host");
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error(std::string("load_checkpoint: truncated reading ") + what);
    return v;
}

void write_string(std::ostream& os, const std::string& s) {
    write_pod(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
    const auto n = read_pod<uint32_t>(is, "string length");
    if (n > 4096) throw std::runtime_error("load_checkpoint: implausible string length");
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw std::runtime_error("load_checkpoint: truncated string");
    return s;
}

void write_param_set(std::ostream& os, const ParamSet& ps) {
    write_pod(os, static_cast<uint32_t>(ps.size()));
    for (const auto& [name, t] : ps) {
        write_string(os, name);
        write_pod(os, static_cast<uint32_t>(t.shape.size()));
        for (int d : t.shape) write_pod(os, static_cast<int32_t>(d));
        os.write(reinterpret_cast<const char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }
}

ParamSet read_param_set(std::istream& is) {
    const auto count = read_pod<uint32_t>(is, "param count");
    if (count > 100000) throw std::runtime_error("load_checkpoint: implausible param count");
    ParamSet ps;
    for (uint32_t i = 0; i < count; ++i) {
        const std::string name = read_string(is);
        const auto rank = read_pod<uint32_t>(is, "param rank");
        if (rank > 8) throw std::runtime_error("load_checkpoint: implausible tensor rank");
        Shape shape(rank);
        for (uint32_t d = 0; d < rank; ++d) shape[d] = read_pod<int32_t>(is, "param dim");
        const int64_t n = shape_numel(shape);
        if (n <= 0 || n > (int64_t{1} << 30)) throw std::runtime_error("load_checkpoint: implausible tensor size");
        std::vector<float> data(static_cast<size_t>(n));
        is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
        if (!is) throw std::runtime_error("load_checkpoint: truncated tensor data for " + name);
        ps.emplace(name, Tensor(std::move(shape), std::move(data)));
    }
    return ps;
}

void write_config(std::ostream& os, const model::ModelConfig& c) {
    write_pod(os, static_cast<int32_t>(c.image_h));
    write_pod(os, static_cast<int32_t>(c.image_w));
    write_pod(os, static_cast<int32_t>(c.channels));
    write_pod(os, static_cast<int32_t>(c.num_resnet));
    write_pod(os, static_cast<int32_t>(c.num_filters));
    write_pod(os, static_cast<int32_t>(c.receptive_rows));
    write_pod(os, static_cast<int32_t>(c.receptive_cols));
    write_pod(os, c.dropout_p);
    write_pod(os, static_cast<uint8_t>(c.head == model::HeadKind::Categorical ? 0 : 1));
    write_pod(os, static_cast<int32_t>(c.num_categories));
    write_pod(os, static_cast<int32_t>(c.num_components));
}

model::ModelConfig read_config(std::istream& is) {
    model::ModelConfig c;
    c.image_h = read_pod<int32_t>(is, "image_h");
    c.image_w = read_pod<int32_t>(is, "image_w");
    c.channels = read_pod<int32_t>(is, "channels");
    c.num_resnet = read_pod<int32_t>(is, "num_resnet");
    c.num_filters = read_pod<int32_t>(is, "num_filters");
    c.receptive_rows = read_pod<int32_t>(is, "receptive_rows");
    c.receptive_cols = read_pod<int32_t>(is, "receptive_cols");
    c.dropout_p = read_pod<float>(is, "dropout_p");
    c.head = read_pod<uint8_t>(is, "head kind") == 0 ? model::HeadKind::Categorical
                                                     : model::HeadKind::LogisticMixture;
    c.num_categories = read_pod<int32_t>(is, "num_categories");
    c.num_components = read_pod<int32_t>(is, "num_components");
    return c;
}

// first differing field between two configs, empty if equal
std::string config_mismatch(const model::ModelConfig& a, const model::ModelConfig& b) {
    auto diff = [](const char* f, auto x, auto y) {
        return std::string(f) + " (checkpoint " + std::to_string(x) + ", config " + std::to_string(y) + ")";
    };
    if (a.image_h != b.image_h) return diff("image_h", a.image_h, b.image_h);
    if (a.image_w != b.image_w) return diff("image_w", a.image_w, b.image_w);
    if (a.channels != b.channels) return diff("channels", a.channels, b.channels);
    if (a.num_resnet != b.num_resnet) return diff("num_resnet", a.num_resnet, b.num_resnet);
    if (a.num_filters != b.num_filters) return diff("num_filters", a.num_filters, b.num_filters);
    if (a.receptive_rows != b.receptive_rows) return diff("receptive_rows", a.receptive_rows, b.receptive_rows);
    if (a.receptive_cols != b.receptive_cols) return diff("receptive_cols", a.receptive_cols, b.receptive_cols);
    if (a.dropout_p != b.dropout_p) return diff("dropout_p", a.dropout_p, b.dropout_p);
    if (a.head != b.head) return std::string("head kind");
    if (a.head == model::HeadKind::Categorical && a.num_categories != b.num_categories)
        return diff("num_categories", a.num_categories, b.num_categories);
    if (a.head == model::HeadKind::LogisticMixture && a.num_components != b.num_components)
        return diff("num_components", a.num_components, b.num_components);
    return {};
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    require_little_endian();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
    os.write(kMagic, 4);
    write_pod(os, kVersion);
    write_config(os, ckpt.config);
    write_pod(os, ckpt.step);
    write_pod(os, ckpt.rng_seed);
    write_param_set(os, ckpt.params);
    write_param_set(os, ckpt.moments.m);
    write_param_set(os, ckpt.moments.v);
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    require_little_endian();
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("load_checkpoint: " + path.string() + " is not a checkpoint (bad magic)");
    const auto version = read_pod<uint32_t>(is, "version");
    if (version != kVersion)
        throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));

    Checkpoint ckpt;
    ckpt.config = read_config(is);
    ckpt.config.validate();
    ckpt.step = read_pod<uint64_t>(is, "step");
    ckpt.rng_seed = read_pod<uint64_t>(is, "rng_seed");
    ckpt.params = read_param_set(is);
    ckpt.moments.m = read_param_set(is);
    ckpt.moments.v = read_param_set(is);

    // reject foreign files before anyone uses them
    const auto expected = model::param_names(ckpt.config);
    if (ckpt.params.size() != expected.size())
        throw std::runtime_error("load_checkpoint: parameter count does not match config");
    for (const std::string& n : expected)
        if (!ckpt.params.contains(n) || !ckpt.moments.m.contains(n) || !ckpt.moments.v.contains(n))
            throw std::runtime_error("load_checkpoint: missing parameter " + n);
    return ckpt;
}

// ---- train loop -----------------------------------------------------------------

std::vector<int> targets_for(const model::ModelConfig& cfg, const dataset::RasterImage& img) {
    std::vector<int> out(img.pixels.size());
    if (cfg.head == model::HeadKind::Categorical) {
        likelihood::QuantizerConfig q{cfg.num_categories};
        for (size_t i = 0; i < img.pixels.size(); ++i) out[i] = likelihood::quantize(img.pixels[i], q);
    } else {
        for (size_t i = 0; i < img.pixels.size(); ++i) out[i] = img.pixels[i];
    }
    return out;
}

namespace {

constexpr uint64_t kShuffleStream = 0x73687566; // distinct per-purpose rng lanes
constexpr uint64_t kDropoutStream = 0x64726f70;

std::vector<int> epoch_permutation(size_t n, uint64_t rng_seed, int64_t epoch) {
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Pcg32 rng(seed_mix(seed_mix(rng_seed, kShuffleStream), static_cast<uint64_t>(epoch)));
    for (size_t i = n; i > 1; --i) {
        const size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
        std::swap(perm[i - 1], perm[j]);
    }
    return perm;
}

Tensor batch_input(const std::vector<dataset::RasterImage>& images, const std::vector<int>& idx,
                   const model::ModelConfig& cfg) {
    Tensor t = Tensor::zeros({static_cast<int>(idx.size()), cfg.image_h, cfg.image_w, 1});
    size_t o = 0;
    for (int i : idx)
        for (uint8_t px : images[static_cast<size_t>(i)].pixels) t.data[o++] = unit_from_u8(px);
    return t;
}

void append_metric(std::ofstream& csv, const MetricRow& row) {
    csv << row.step << "," << row.epoch << "," << row.split << "," << row.bits_per_dim << "\n";
    csv.flush();
}

} // namespace

TrainResult train(const TrainConfig& cfg) {
    cfg.validate();
    const dataset::LoadedDataset data = dataset::load_dataset(cfg.data_dir);
    if (data.images.empty()) throw std::runtime_error("train: dataset at " + cfg.data_dir + " is empty");
    for (const auto& img : data.images)
        if (img.height != cfg.model.image_h || img.width != cfg.model.image_w)
            throw std::invalid_argument("train: dataset image " + std::to_string(img.width) + "x" +
                                        std::to_string(img.height) + " does not match model " +
                                        std::to_string(cfg.model.image_w) + "x" + std::to_string(cfg.model.image_h));

    std::vector<std::vector<int>> targets;
    targets.reserve(data.images.size());
    for (const auto& img : data.images) targets.push_back(targets_for(cfg.model, img));

    ParamSet params;
    AdamMoments moments;
    uint64_t step = 0;
    if (!cfg.resume_from.empty()) {
        Checkpoint ckpt = load_checkpoint(cfg.resume_from);
        const std::string mismatch = config_mismatch(ckpt.config, cfg.model);
        if (!mismatch.empty())
            throw std::runtime_error("train: checkpoint does not match config: " + mismatch);
        params = std::move(ckpt.params);
        moments = std::move(ckpt.moments);
        step = ckpt.step;
    } else {
        params = model::init_params(cfg.model, cfg.rng_seed);
        moments = zero_moments(params);
    }

    const int64_t n = static_cast<int64_t>(data.images.size());
    const int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const int64_t total_steps = steps_per_epoch * cfg.epochs;
    const int64_t px_per_img = static_cast<int64_t>(cfg.model.image_h) * cfg.model.image_w;

    std::filesystem::create_directories(cfg.out_dir);
    const std::filesystem::path csv_path = std::filesystem::path(cfg.out_dir) / "metrics.csv";
    const bool fresh_csv = !std::filesystem::exists(csv_path);
    std::ofstream csv(csv_path, std::ios::app);
    if (!csv) throw std::runtime_error("train: cannot open " + csv_path.string());
    if (fresh_csv) csv << "step,epoch,split,bits_per_dim\n";

    TrainResult result;
    double last_finite = std::numeric_limits<double>::quiet_NaN();
    while (static_cast<int64_t>(step) < total_steps) {
        const int64_t epoch = static_cast<int64_t>(step) / steps_per_epoch;
        const int64_t batch_index = static_cast<int64_t>(step) % steps_per_epoch;
        const std::vector<int> perm = epoch_permutation(static_cast<size_t>(n), cfg.rng_seed, epoch);

        std::vector<int> batch;
        for (int64_t i = batch_index * cfg.batch_size; i < std::min<int64_t>(n, (batch_index + 1) * cfg.batch_size); ++i)
            batch.push_back(perm[static_cast<size_t>(i)]);

        std::vector<int> batch_targets;
        batch_targets.reserve(batch.size() * static_cast<size_t>(px_per_img));
        for (int i : batch)
            batch_targets.insert(batch_targets.end(), targets[static_cast<size_t>(i)].begin(),
                                 targets[static_cast<size_t>(i)].end());

        Tape tape;
        Pcg32 dropout_rng(seed_mix(seed_mix(cfg.rng_seed, kDropoutStream), step));
        const model::HeadVals hv =
            model::forward(tape, batch_input(data.images, batch, cfg.model), cfg.model, params, true, &dropout_rng);
        Val total = hv.kind == model::HeadKind::Categorical
                        ? likelihood::categorical_nll_loss(hv.logits, batch_targets)
                        : likelihood::mixture_nll_loss(hv.mix_logits, hv.means, hv.log_scales, batch_targets);

        const int64_t batch_pixels = static_cast<int64_t>(batch.size()) * px_per_img;
        const double total_nats = static_cast<double>(total.value().data[0]);
        const double bpd = total_nats / (static_cast<double>(batch_pixels) * std::log(2.0));
        if (!std::isfinite(total_nats))
            throw std::runtime_error("train: loss diverged (non-finite) at step " + std::to_string(step + 1) +
                                     "; last finite loss was " + std::to_string(last_finite) + " nats");
        last_finite = total_nats;

        Val mean_loss = scale(total, 1.0 / static_cast<double>(batch_pixels));
        GradMap grads = tape.backward(mean_loss);
        adam_step(params, grads, moments, static_cast<int64_t>(step) + 1, cfg);
        ++step;

        MetricRow row{static_cast<int64_t>(step), static_cast<int>(epoch), "train", bpd};
        append_metric(csv, row);
        result.metrics.push_back(std::move(row));

        if (cfg.checkpoint_every > 0 && step % static_cast<uint64_t>(cfg.checkpoint_every) == 0) {
            char name[48];
            std::snprintf(name, sizeof(name), "checkpoint_%08llu.pxcn", static_cast<unsigned long long>(step));
            save_checkpoint(std::filesystem::path(cfg.out_dir) / name,
                            Checkpoint{cfg.model, params, moments, step, cfg.rng_seed});
        }
    }

    result.checkpoint = Checkpoint{cfg.model, std::move(params), std::move(moments), step, cfg.rng_seed};
    save_checkpoint(std::filesystem::path(cfg.out_dir) / "checkpoint_final.pxcn", result.checkpoint);
    return result;
}

EvalReport eval_nll(const Checkpoint& ckpt, const std::filesystem::path& data_dir) {
    const dataset::LoadedDataset data = dataset::load_dataset(data_dir);
    if (data.images.empty()) throw std::runtime_error("eval_nll: dataset at " + data_dir.string() + " is empty");
    const model::ModelConfig& cfg = ckpt.config;
    for (const auto& img : data.images)
        if (img.height != cfg.image_h || img.width != cfg.image_w)
            throw std::invalid_argument("eval_nll: dataset image " + std::to_string(img.width) + "x" +
                                        std::to_string(img.height) + " does not match model " +
                                        std::to_string(cfg.image_w) + "x" + std::to_string(cfg.image_h));

    double total = 0.0;
    int64_t pixels = 0;
    std::map<std::string, std::pair<double, int64_t>> grouped;
    for (size_t i = 0; i < data.images.size(); ++i) {
        Tensor input = Tensor::zeros({1, cfg.image_h, cfg.image_w, 1});
        for (size_t p = 0; p < data.images[i].pixels.size(); ++p)
            input.data[p] = unit_from_u8(data.images[i].pixels[p]);
        const model::PixelDistribution dist = model::forward_infer(input, cfg, ckpt.params);
        const std::vector<int> tgt = targets_for(cfg, data.images[i]);
        const likelihood::NllReport rep = dist.kind == model::HeadKind::Categorical
                                              ? likelihood::categorical_nll(dist.logits, tgt)
                                              : likelihood::mixture_nll(dist, tgt);
        total += rep.total_nats;
        pixels += rep.pixel_count;
        auto& g = grouped[data.subtypes[i]];
        g.first += rep.total_nats;
        g.second += rep.pixel_count;
    }

    EvalReport out;
    out.overall = likelihood::make_report(total, pixels);
    for (const auto& [name, acc] : grouped) out.per_subtype[name] = likelihood::make_report(acc.first, acc.second);
    return out;
}

} // namespace bridgegen::training
