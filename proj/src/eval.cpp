#include "lino/eval.hpp"

#include <cstdio>
#include <iostream>
#include <sstream>

#include "lino/image_io.hpp"
#include "lino/metrics.hpp"
#include "lino/pipeline.hpp"

namespace lino::eval {

namespace fs = std::filesystem;

namespace {

nlohmann::json score_json(const SceneScore& s) {
    return {{"scene", s.scene}, {"level", s.level}, {"mae_deg", s.mae_deg}, {"csim", s.csim}, {"ssim", s.ssim}};
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

nlohmann::json EvalReport::to_json() const {
    auto rows = nlohmann::json::array();
    for (const auto& s : scenes) rows.push_back(score_json(s));
    return {{"scenes", rows}, {"summary", score_json(summary)}, {"skipped", skipped}};
}

std::string EvalReport::to_table() const {
    std::ostringstream os;
    os << "scene\tlevel\tmae_deg\tcsim\tssim\n";
    auto row = [&](const SceneScore& s) {
        os << s.scene << '\t' << s.level << '\t' << fmt(s.mae_deg) << '\t' << fmt(s.csim) << '\t' << fmt(s.ssim)
           << '\n';
    };
    for (const auto& s : scenes) row(s);
    row(summary);
    return os.str();
}

Predictor model_predictor(LinoModel& model) {
    return [model](const data::SceneRecord& rec) mutable {
        auto result = infer(model, rec.stack.images, rec.scene.mask);
        return Prediction{result.normals.normals, result.encoded.features};
    };
}

Predictor oracle_predictor() {
    return [](const data::SceneRecord& rec) {
        auto n = rec.scene.normals.to(torch::kFloat32);
        return Prediction{n, n.unsqueeze(0).expand({rec.stack.frames(), -1, -1, -1}).contiguous()};
    };
}

SceneScore score_scene(const data::SceneRecord& record, const Prediction& p) {
    SceneScore s;
    s.scene = record.entry.dir;
    s.level = record.entry.level;
    const auto& mask = record.scene.mask;
    s.mae_deg = metrics::mae(p.normals, record.scene.normals, mask);
    s.csim = metrics::pairwise_csim(p.features, mask).value;
    s.ssim = metrics::pairwise_ssim_pca(p.features, mask).value;
    return s;
}

EvalReport evaluate_dataset(const fs::path& root, const Predictor& predictor, const EvalOptions& options) {
    const auto manifest = data::load_manifest(root);
    EvalReport report;
    for (const auto& entry : manifest.scenes) {
        if (!options.only.empty() &&
            std::find(options.only.begin(), options.only.end(), entry.dir) == options.only.end()) {
            continue;
        }
        const auto dir = root / entry.dir;
        if (!fs::exists(dir / "normal_gt.exr") || !fs::exists(dir / "mask.png")) {
            std::cerr << "warning: " << entry.dir << " has no ground truth, skipped\n";
            report.skipped.push_back(entry.dir);
            continue;
        }
        auto rec = data::load_scene(root, entry);
        auto pred = predictor(rec);
        report.scenes.push_back(score_scene(rec, pred));
        if (options.pca_dir) {
            const auto out = *options.pca_dir / entry.dir;
            fs::create_directories(out);
            auto proj = metrics::pca_project(pred.features, rec.scene.mask);
            for (int64_t f = 0; f < proj.size(0); ++f) {
                char name[32];
                std::snprintf(name, sizeof(name), "pca_%02lld.png", static_cast<long long>(f));
                io::write_png(out / name, io::unit_to_u8(proj[f]));
            }
        }
    }
    report.summary.scene = "mean";
    if (!report.scenes.empty()) {
        for (const auto& s : report.scenes) {
            report.summary.mae_deg += s.mae_deg;
            report.summary.csim += s.csim;
            report.summary.ssim += s.ssim;
        }
        const double n = static_cast<double>(report.scenes.size());
        report.summary.mae_deg /= n;
        report.summary.csim /= n;
        report.summary.ssim /= n;
    }
    return report;
}

}  // namespace lino::eval
