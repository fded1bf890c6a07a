#include "lino/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "lino/decoder.hpp"
#include "lino/encoder.hpp"

namespace lino::train {

namespace fs = std::filesystem;

namespace {

void check_keys(const nlohmann::json& j, const std::set<std::string>& known, const std::string& section) {
    if (!j.is_object()) throw std::invalid_argument(section + " must be an object");
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw std::invalid_argument("unknown " + section + " key: " + key);
    }
}

torch::Tensor gather_rows(const torch::Tensor& map, const torch::Tensor& idx) {
    const auto pixels = map.size(0) * map.size(1);
    if (map.dim() == 2) return map.reshape({pixels}).index_select(0, idx);
    return map.reshape({pixels, map.size(2)}).index_select(0, idx);
}

}  // namespace

sim::CurriculumSchedule TrainConfig::schedule() const {
    return {start_level, epochs_per_level, max_level, finetune_level, main_epochs};
}

void RunConfig::validate() const {
    model.validate();
    const auto& t = train;
    if (t.main_epochs < 0 || t.finetune_epochs < 0 || t.total_epochs() < 1) {
        throw std::invalid_argument("train: need at least one epoch");
    }
    if (t.start_level < 1 || t.max_level > sim::kNumLevels || t.start_level > t.max_level) {
        throw std::invalid_argument("train: curriculum levels must satisfy 1 <= start_level <= max_level <= 5");
    }
    if (t.finetune_level < 1 || t.finetune_level > sim::kNumLevels) {
        throw std::invalid_argument("train: finetune_level must lie in 1..5");
    }
    if (t.epochs_per_level < 1 || t.decay_every < 1) throw std::invalid_argument("train: epoch counts must be >= 1");
    if (t.steps_per_epoch < 0 || t.batch_size < 1) throw std::invalid_argument("train: invalid step settings");
    if (t.frames_min < 1 || t.frames_min > t.frames_max) throw std::invalid_argument("train: invalid frame range");
    if (!(t.lr > 0.0) || t.weight_decay < 0.0 || !(t.decay_factor > 0.0)) {
        throw std::invalid_argument("train: invalid optimizer settings");
    }
    for (int l : data.levels) {
        if (l < 1 || l > sim::kNumLevels) throw std::invalid_argument("data: levels must lie in 1..5");
    }
}

void to_json(nlohmann::json& j, const DataConfig& c) { j = {{"path", c.path}, {"levels", c.levels}}; }

void from_json(const nlohmann::json& j, DataConfig& c) {
    check_keys(j, {"path", "levels"}, "data");
    DataConfig d;
    c.path = j.value("path", d.path);
    c.levels = j.value("levels", d.levels);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"main_epochs", c.main_epochs},
         {"finetune_epochs", c.finetune_epochs},
         {"start_level", c.start_level},
         {"max_level", c.max_level},
         {"finetune_level", c.finetune_level},
         {"epochs_per_level", c.epochs_per_level},
         {"steps_per_epoch", c.steps_per_epoch},
         {"batch_size", c.batch_size},
         {"lr", c.lr},
         {"weight_decay", c.weight_decay},
         {"decay_factor", c.decay_factor},
         {"decay_every", c.decay_every},
         {"frames_min", c.frames_min},
         {"frames_max", c.frames_max},
         {"seed", c.seed},
         {"light_alignment", c.light_alignment}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    check_keys(j,
               {"main_epochs", "finetune_epochs", "start_level", "max_level", "finetune_level", "epochs_per_level",
                "steps_per_epoch", "batch_size", "lr", "weight_decay", "decay_factor", "decay_every", "frames_min",
                "frames_max", "seed", "light_alignment"},
               "train");
    TrainConfig d;
    c.main_epochs = j.value("main_epochs", d.main_epochs);
    c.finetune_epochs = j.value("finetune_epochs", d.finetune_epochs);
    c.start_level = j.value("start_level", d.start_level);
    c.max_level = j.value("max_level", d.max_level);
    c.finetune_level = j.value("finetune_level", d.finetune_level);
    c.epochs_per_level = j.value("epochs_per_level", d.epochs_per_level);
    c.steps_per_epoch = j.value("steps_per_epoch", d.steps_per_epoch);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.lr = j.value("lr", d.lr);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.decay_factor = j.value("decay_factor", d.decay_factor);
    c.decay_every = j.value("decay_every", d.decay_every);
    c.frames_min = j.value("frames_min", d.frames_min);
    c.frames_max = j.value("frames_max", d.frames_max);
    c.seed = j.value("seed", d.seed);
    c.light_alignment = j.value("light_alignment", d.light_alignment);
}

void to_json(nlohmann::json& j, const RunConfig& c) {
    j = {{"model", c.model}, {"data", c.data}, {"train", c.train}, {"pbr", c.pbr}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
    check_keys(j, {"model", "data", "train", "pbr"}, "config");
    c = RunConfig{};
    if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
    if (j.contains("data")) c.data = j.at("data").get<DataConfig>();
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    c.pbr = j.value("pbr", false);
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read config " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("config " + path.string() + ": " + e.what());
    }
    return j.get<RunConfig>();
}

TrainSample make_sample(const data::SceneRecord& record, int64_t frames, uint64_t seed) {
    const auto available = record.stack.frames();
    if (frames < 1 || frames > available) {
        throw std::invalid_argument("make_sample: scene " + record.entry.dir + " has " + std::to_string(available) +
                                    " frames, " + std::to_string(frames) + " requested");
    }
    std::vector<int64_t> order(static_cast<size_t>(available));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(static_cast<size_t>(frames));
    auto sub = record.stack.permuted(order);
    TrainSample s;
    s.images = sub.images;
    s.lightings = sub.lightings;
    s.normals = record.scene.normals;
    s.albedo = record.scene.albedo;
    s.roughness = record.scene.roughness;
    s.metallic = record.scene.metallic;
    s.mask = record.scene.mask.to(torch::kBool);
    return s;
}

StepTerms compute_terms(LinoModel& model, const TrainSample& sample, const StepOptions& options,
                        const torch::Tensor& frozen_confidence) {
    const auto& cfg = model->config;
    const auto h = sample.images.size(1);
    const auto w = sample.images.size(2);
    const auto dtype = model->encoder->registers.scalar_type();

    auto x = enc::preprocess(sample.images.to(dtype), enc::Mode::Train, sim::mix_seed(options.seed, 1));
    auto encoded = model->encoder(x);

    auto interior = dec::interior_mask(sample.mask);
    StepTerms out;
    out.centers = dec::sample_pixels(interior, cfg.m_samples, sim::mix_seed(options.seed, 2));
    const auto m = out.centers.size(0);
    auto stencil = dec::stencil_indices(out.centers, h, w).reshape({-1});
    auto pred = model->decoder->predict(model->decoder->aggregate(encoded.features, x, stencil), cfg.sample_attention);

    auto pred_stencil = pred.normals.view({m, 5, 3});
    auto gt_stencil = gather_rows(sample.normals.to(dtype), stencil).view({m, 5, 3});
    auto gp = loss::gradient_perception_loss(pred_stencil.select(1, 0), gt_stencil.select(1, 0),
                                             loss::stencil_gradient(pred_stencil), loss::stencil_gradient(gt_stencil),
                                             frozen_confidence);
    out.confidence = gp.confidence;
    auto& t = out.terms.terms;
    t[loss::kConf] = gp.conf;
    t[loss::kGrad] = gp.grad;

    if (options.light_alignment) {
        auto targets = model->light_encoder->encode_stack(sample.lightings);
        auto aligned = loss::light_alignment_loss(model->projector(encoded.registers), targets);
        t[loss::kEnv] = aligned.env;
        t[loss::kPoint] = aligned.point;
        t[loss::kDirection] = aligned.direction;
    }
    if (options.pbr) {
        auto center_rows = [&](const torch::Tensor& v) { return v.view({m, 5, -1}).select(1, 0); };
        auto centers = out.centers;
        t[loss::kAlbedo] = (center_rows(pred.albedo) - gather_rows(sample.albedo.to(dtype), centers)).pow(2).mean();
        t[loss::kMetallic] =
            (center_rows(pred.metallic).squeeze(-1) - gather_rows(sample.metallic.to(dtype), centers)).pow(2).mean();
        t[loss::kRoughness] =
            (center_rows(pred.roughness).squeeze(-1) - gather_rows(sample.roughness.to(dtype), centers)).pow(2).mean();
    }
    return out;
}

nlohmann::json StepLog::to_json() const {
    nlohmann::json j{{"step", step}, {"epoch", epoch}, {"lr", lr}, {"frames", frames}, {"scenes", scenes}};
    for (size_t i = 0; i < loss::kNumTerms; ++i) {
        const std::string name(loss::kTermNames[i]);
        j[name] = breakdown.values[i];
        j["w_" + name] = breakdown.weights[i];
    }
    j["light"] = breakdown.values[loss::kEnv] + breakdown.values[loss::kPoint] + breakdown.values[loss::kDirection];
    j["total"] = breakdown.total_value;
    return j;
}

namespace {

std::string save_optimizer(torch::optim::AdamW& opt) {
    std::ostringstream os;
    torch::save(opt, os);
    return os.str();
}

void load_optimizer(torch::optim::AdamW& opt, const std::string& blob) {
    std::istringstream is(blob);
    torch::load(opt, is);
}

void set_lr(torch::optim::AdamW& opt, double lr) {
    for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
}

}  // namespace

TrainSummary run_training(const RunConfig& config, const TrainOptions& options) {
    config.validate();
    const auto& tc = config.train;
    fs::create_directories(options.out_dir);
    const auto ckpt_path = options.out_dir / kCheckpointName;
    const auto log_path = options.out_dir / kLossLogName;

    const fs::path root(config.data.path);
    const auto manifest = data::load_manifest(root);
    std::map<int, std::vector<size_t>> by_level;
    std::vector<data::SceneRecord> scenes;
    for (const auto& entry : manifest.scenes) {
        if (!config.data.levels.empty() &&
            std::find(config.data.levels.begin(), config.data.levels.end(), entry.level) == config.data.levels.end()) {
            continue;
        }
        by_level[entry.level].push_back(scenes.size());
        scenes.push_back(data::load_scene(root, entry));
        config.model.validate_image(scenes.back().stack.images.size(1), scenes.back().stack.images.size(2));
    }
    const auto schedule = tc.schedule();
    for (int e = 0; e < tc.total_epochs(); ++e) {
        for (int level : sim::curriculum_levels(e, schedule)) {
            if (!by_level.contains(level)) {
                throw std::runtime_error("epoch " + std::to_string(e) + " needs complexity level " +
                                         std::to_string(level) + " which the dataset does not contain");
            }
        }
    }

    LinoModel model{nullptr};
    int start_epoch = 0;
    int64_t step = 0;
    std::string opt_blob;
    if (options.resume && fs::exists(ckpt_path)) {
        auto loaded = load_checkpoint(ckpt_path);
        if (!(loaded.info.config == config.model)) throw std::runtime_error("checkpoint model config differs from run config");
        model = loaded.model;
        start_epoch = loaded.info.meta.at("epochs_completed").get<int>();
        step = loaded.info.meta.at("step").get<int64_t>();
        opt_blob = loaded.info.optimizer_state;
    } else {
        model = make_model(config.model, tc.seed);
        std::ofstream(log_path, std::ios::trunc);
    }
    model->train();
    torch::optim::AdamW opt(model->parameters(), torch::optim::AdamWOptions(tc.lr).weight_decay(tc.weight_decay));
    if (!opt_blob.empty()) load_optimizer(opt, opt_blob);

    std::ofstream log(log_path, std::ios::app);
    TrainSummary summary;
    summary.checkpoint = ckpt_path;
    int run_epochs = 0;
    for (int epoch = start_epoch; epoch < tc.total_epochs(); ++epoch) {
        if (options.max_epochs_this_run >= 0 && run_epochs >= options.max_epochs_this_run) break;
        const double lr = tc.lr * std::pow(tc.decay_factor, epoch / tc.decay_every);
        set_lr(opt, lr);

        std::vector<size_t> pool;
        for (int level : sim::curriculum_levels(epoch, schedule)) {
            pool.insert(pool.end(), by_level[level].begin(), by_level[level].end());
        }
        std::sort(pool.begin(), pool.end());
        std::mt19937_64 epoch_rng(sim::mix_seed(tc.seed, 0xe90c0000ull + static_cast<uint64_t>(epoch)));
        const int64_t steps = tc.steps_per_epoch > 0
                                  ? tc.steps_per_epoch
                                  : (static_cast<int64_t>(pool.size()) + tc.batch_size - 1) / tc.batch_size;
        std::vector<size_t> order;
        for (int64_t s = 0; s < steps; ++s) {
            opt.zero_grad();
            StepLog entry;
            entry.step = step;
            entry.epoch = epoch;
            entry.lr = lr;
            std::array<double, loss::kNumTerms> sum_values{}, sum_weights{};
            double sum_total = 0.0;
            for (int b = 0; b < tc.batch_size; ++b) {
                if (order.empty()) {
                    order = pool;
                    std::shuffle(order.begin(), order.end(), epoch_rng);
                    std::reverse(order.begin(), order.end());
                }
                const auto& rec = scenes[order.back()];
                order.pop_back();
                const uint64_t sample_seed = sim::mix_seed(tc.seed, (static_cast<uint64_t>(step) << 8) + b);
                std::mt19937_64 frng(sample_seed);
                const int64_t max_f = std::min<int64_t>(tc.frames_max, rec.stack.frames());
                const int64_t min_f = std::min<int64_t>(tc.frames_min, max_f);
                const int64_t frames = std::uniform_int_distribution<int64_t>(min_f, max_f)(frng);
                auto sample = make_sample(rec, frames, sim::mix_seed(sample_seed, 3));
                auto terms = compute_terms(model, sample, {tc.light_alignment, config.pbr, sample_seed});
                auto weights = loss::adaptive_weights(terms.terms.values(), config.pbr);
                if (!tc.light_alignment) weights[loss::kEnv] = weights[loss::kPoint] = weights[loss::kDirection] = 0.0;
                auto breakdown = loss::total_loss(terms.terms, weights, config.pbr);
                (breakdown.total / static_cast<double>(tc.batch_size)).backward();
                for (size_t i = 0; i < loss::kNumTerms; ++i) {
                    sum_values[i] += breakdown.values[i] / tc.batch_size;
                    sum_weights[i] += breakdown.weights[i] / tc.batch_size;
                }
                sum_total += breakdown.total_value / tc.batch_size;
                entry.frames = frames;
                entry.scenes.push_back(rec.entry.dir);
            }
            opt.step();
            entry.breakdown.values = sum_values;
            entry.breakdown.weights = sum_weights;
            entry.breakdown.total_value = sum_total;
            entry.breakdown.pbr = config.pbr;
            log << entry.to_json().dump() << '\n';
            log.flush();
            if (options.on_step) options.on_step(entry);
            ++step;
        }

        Checkpoint info;
        info.config = config.model;
        info.meta = {{"epochs_completed", epoch + 1}, {"step", step}, {"run", config}};
        info.optimizer_state = save_optimizer(opt);
        save_checkpoint(ckpt_path, model, info);
        ++run_epochs;
        summary.epochs_completed = epoch + 1;
    }
    if (summary.epochs_completed == 0) summary.epochs_completed = start_epoch;
    summary.steps = step;
    return summary;
}

}  // namespace lino::train
