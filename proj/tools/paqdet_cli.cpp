// paqdet: dataset generation, training, evaluation and analysis from one
// binary. Exit codes: 0 success, 2 validation error, 3 runtime failure.
#include <CLI11.hpp>
#include <json.hpp>

#include "paqdet/analysis.hpp"
#include "paqdet/config.hpp"
#include "paqdet/data.hpp"
#include "paqdet/eval.hpp"
#include "paqdet/modelcheck.hpp"
#include "paqdet/train.hpp"

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace paqdet;

namespace {

config::RunConfig load_or_default(const std::string& path) {
    if (path.empty()) {
        config::RunConfig cfg;
        cfg.validate();
        return cfg;
    }
    return config::load_config(path);
}

std::vector<json> read_metrics(const std::string& run_dir) {
    fs::path p = fs::path(run_dir) / "metrics.jsonl";
    std::ifstream in(p);
    if (!in) throw std::invalid_argument("missing metrics file " + p.string());
    std::vector<json> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            lines.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw std::invalid_argument(p.string() + " line " +
                                        std::to_string(lines.size() + 1) + ": " + e.what());
        }
    }
    if (lines.empty()) throw std::invalid_argument(p.string() + " has no metric lines");
    return lines;
}

// ---- gen-data ---------------------------------------------------------------

void cmd_gen_data(const std::string& config_path, const std::string& out, bool force,
                  const std::optional<std::uint64_t>& seed) {
    auto cfg = load_or_default(config_path);
    if (seed) cfg.data.seed = *seed;
    cfg.data.validate();

    if (fs::exists(out) && !fs::is_empty(out)) {
        if (!force)
            throw std::invalid_argument("gen-data: " + out +
                                        " exists and is not empty (pass --force to replace it)");
        fs::remove_all(out);
    }

    auto counts = data::generate_dataset(cfg.data, out);

    std::printf("%-14s %8s %8s %8s %8s\n", "class", "train", "val", "test", "total");
    std::array<long long, 3> split_totals{};
    for (int c = 0; c < data::kNumClasses; ++c) {
        long long row = 0;
        for (int s = 0; s < 3; ++s) {
            row += counts[s][c];
            split_totals[s] += counts[s][c];
        }
        std::printf("%-14s %8lld %8lld %8lld %8lld\n", data::kClassNames[c], counts[0][c],
                    counts[1][c], counts[2][c], row);
    }
    std::printf("%-14s %8lld %8lld %8lld %8lld\n", "all", split_totals[0], split_totals[1],
                split_totals[2], split_totals[0] + split_totals[1] + split_totals[2]);
    std::printf("wrote %s/{train,val,test}\n", out.c_str());
}

// ---- train ------------------------------------------------------------------

void cmd_train(const std::string& config_path, const std::string& data_dir,
               const std::string& out_dir, const std::string& mode_str,
               const std::optional<std::uint64_t>& seed, const std::optional<int>& epochs) {
    auto cfg = load_or_default(config_path);
    if (!mode_str.empty()) cfg.model.mode = model::mode_from_string(mode_str);
    if (seed) cfg.train.seed = *seed;
    if (epochs) cfg.train.epochs = *epochs;
    cfg.validate();

    for (const char* split : {"train", "val"}) {
        fs::path ann = fs::path(data_dir) / split / "annotations.json";
        if (!fs::exists(ann))
            throw std::invalid_argument("train: dataset at " + data_dir + " is missing " +
                                        split + "/annotations.json (run gen-data first)");
    }
    auto train_data = train::load_split((fs::path(data_dir) / "train").string());
    auto val_data = train::load_split((fs::path(data_dir) / "val").string());
    if (!train_data.empty() && train_data.front().image.size != cfg.model.image_size)
        throw std::invalid_argument(
            "train: dataset images are " + std::to_string(train_data.front().image.size) +
            "px but model.image_size is " + std::to_string(cfg.model.image_size));

    model::Detector det(cfg.model, cfg.train.seed);
    auto res = train::train(det, config::train_config_for_run(cfg), train_data, val_data,
                            out_dir);

    std::ofstream(fs::path(out_dir) / "config.json") << config::config_to_text(cfg);

    for (const auto& rec : res.epochs)
        std::printf("epoch %3d  loss %10.6f  map50 %6.4f  map5095 %6.4f  matched %5.3f\n",
                    rec.epoch, rec.train_loss, rec.val.map50, rec.val.map5095,
                    rec.act.matched_fraction);
    if (res.nan_abort)
        throw std::runtime_error("train: aborted on a non-finite loss; last finished epoch's "
                                 "checkpoint (if any) is untouched");
    std::printf("mode %s, %zu steps, checkpoint %s\n", model::to_string(cfg.model.mode).c_str(),
                res.step_losses.size(), res.checkpoint_path.c_str());
}

// ---- eval -------------------------------------------------------------------

void print_eval_table(const eval::APResult& ap) {
    std::printf("%-14s %8s %8s\n", "class", "AP50", "AP50:95");
    for (int c = 0; c < data::kNumClasses; ++c) {
        auto it50 = ap.per_class_ap50.find(c);
        if (it50 == ap.per_class_ap50.end())
            std::printf("%-14s %8s %8s\n", data::kClassNames[c], "-", "-");
        else
            std::printf("%-14s %8.4f %8.4f\n", data::kClassNames[c], it50->second,
                        ap.per_class_ap5095.at(c));
    }
    std::printf("%-14s %8.4f %8.4f\n", "all", ap.map50, ap.map5095);
    std::printf("precision %.4f  recall %.4f  (score 0.5, IoU 0.5)\n", ap.precision, ap.recall);
}

json eval_result_json(const eval::APResult& ap) {
    json per_class;
    for (int c = 0; c < data::kNumClasses; ++c) {
        auto it50 = ap.per_class_ap50.find(c);
        if (it50 == ap.per_class_ap50.end())
            per_class[data::kClassNames[c]] = nullptr;
        else
            per_class[data::kClassNames[c]] = {{"ap50", it50->second},
                                               {"ap5095", ap.per_class_ap5095.at(c)}};
    }
    return json{{"map50", ap.map50},
                {"map5095", ap.map5095},
                {"precision", ap.precision},
                {"recall", ap.recall},
                {"per_class", per_class}};
}

void cmd_eval(const std::string& config_path, const std::string& ckpt_path,
              const std::string& split_dir, const std::string& out_path,
              const std::string& dets_path) {
    if (ckpt_path.empty() == dets_path.empty())
        throw std::invalid_argument("eval: pass exactly one of --checkpoint or --detections");

    auto ds = train::load_split(split_dir);
    std::vector<eval::GtInstance> gts;
    for (const auto& s : ds)
        for (std::size_t i = 0; i < s.gt.boxes.size(); ++i)
            gts.push_back({s.image_id, s.gt.labels[i], s.gt.boxes[i]});

    std::vector<eval::Detection> dets;
    if (!dets_path.empty()) {
        dets = eval::load_detections(dets_path);
    } else {
        auto cfg = load_or_default(config_path);
        model::Detector det = [&] {
            if (!config_path.empty()) {
                model::Detector d(cfg.model, 0);
                train::load_checkpoint_into(d, ckpt_path);  // rejects config mismatches
                return d;
            }
            return train::load_checkpoint(ckpt_path);
        }();
        for (const auto& s : ds) {
            auto fr = det.forward(s.image, static_cast<ad::Graph*>(nullptr));
            auto img_dets = eval::extract_detections(fr.out, s.image_id,
                                                     cfg.eval.score_threshold, cfg.eval.max_det);
            dets.insert(dets.end(), img_dets.begin(), img_dets.end());
        }
    }

    auto ap = eval::compute_map(dets, gts);  // rejects a GT-free split
    print_eval_table(ap);
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        if (!out) throw std::runtime_error("eval: cannot write " + out_path);
        out << eval_result_json(ap).dump(2) << "\n";
        std::printf("wrote %s\n", out_path.c_str());
    }
}

// ---- analyze ----------------------------------------------------------------

void cmd_analyze(const std::string& run_dir, const std::string& out_path) {
    auto lines = read_metrics(run_dir);
    std::string csv =
        "epoch,train_loss,lr_last,map50,map5095,precision,recall,matched_fraction,"
        "gini_query_matches,gini_pattern_grads\n";
    for (const auto& j : lines) {
        std::string row;
        for (const char* key : {"epoch", "train_loss", "lr_last", "map50", "map5095",
                                "precision", "recall", "matched_fraction", "gini_query_matches",
                                "gini_pattern_grads"}) {
            if (!j.contains(key))
                throw std::invalid_argument("analyze: metrics line " +
                                            std::to_string(&j - lines.data() + 1) +
                                            " lacks key " + key);
            if (!row.empty()) row += ',';
            row += j.at(key).dump();
        }
        csv += row + "\n";
    }
    if (out_path.empty()) {
        std::fputs(csv.c_str(), stdout);
    } else {
        std::ofstream out(out_path);
        if (!out) throw std::runtime_error("analyze: cannot write " + out_path);
        out << csv;
        std::printf("wrote %s (%zu rows)\n", out_path.c_str(), lines.size());
    }
}

// ---- ab-report --------------------------------------------------------------

struct RunSummary {
    json last;  // final metrics line
    model::ModelConfig cfg;
    analysis::CostReport cost;
};

RunSummary read_run(const std::string& run_dir) {
    RunSummary r;
    r.last = read_metrics(run_dir).back();
    train::CheckpointMeta meta;
    train::load_checkpoint((fs::path(run_dir) / "checkpoint.paqd").string(), &meta);
    r.cfg = meta.config;
    r.cost = analysis::count_params(r.cfg);
    return r;
}

double num_or(const json& j, const char* key, double fallback) {
    if (j.contains(key) && j.at(key).is_number()) return j.at(key).get<double>();
    return fallback;
}

void cmd_ab_report(const std::string& run_a, const std::string& run_b) {
    RunSummary a = read_run(run_a);
    RunSummary b = read_run(run_b);

    std::printf("%-24s %14s %14s %14s\n", "metric", "run_a", "run_b", "delta (b-a)");
    std::printf("%-24s %14s %14s %14s\n", "mode",
                a.last.value("mode", std::string("?")).c_str(),
                b.last.value("mode", std::string("?")).c_str(), "");

    auto num_row = [](const char* name, double va, double vb) {
        std::printf("%-24s %14.6f %14.6f %+14.6f\n", name, va, vb, vb - va);
    };
    for (const char* key : {"map50", "map5095", "matched_fraction", "gini_query_matches",
                            "gini_pattern_grads"})
        num_row(key, num_or(a.last, key, 0), num_or(b.last, key, 0));

    const json& pa = a.last.value("per_class_ap50", json::object());
    const json& pb = b.last.value("per_class_ap50", json::object());
    for (int c = 0; c < data::kNumClasses; ++c) {
        std::string key = std::to_string(c);
        std::string name = std::string("ap50[") + data::kClassNames[c] + "]";
        if (!pa.contains(key) || !pb.contains(key)) {
            std::printf("%-24s %14s %14s %14s\n", name.c_str(),
                        pa.contains(key) ? "." : "-", pb.contains(key) ? "." : "-", "-");
            continue;
        }
        num_row(name.c_str(), pa.at(key).get<double>(), pb.at(key).get<double>());
    }

    auto count_row = [](const char* name, long long va, long long vb) {
        std::printf("%-24s %14lld %14lld %+14lld\n", name, va, vb, vb - va);
    };
    count_row("total_params", a.cost.total_params, b.cost.total_params);
    count_row("paq_params", a.cost.paq_params, b.cost.paq_params);

    for (const auto& [label, r] : {std::pair<const char*, const RunSummary&>{"run_a", a},
                                   {"run_b", b}}) {
        if (r.cfg.mode != model::Mode::paq) continue;
        long long m = r.cfg.m, d = r.cfg.d, h = r.cfg.wgen_hidden;
        long long closed = m * d + d * h + h + h * m + m;
        std::printf("%s paq_params = m*d + d*h + h + h*m + m = %lld*%lld + %lld*%lld + %lld + "
                    "%lld*%lld + %lld = %lld\n",
                    label, m, d, d, h, h, h, m, m, closed);
    }
}

// ---- gradcheck ---------------------------------------------------------------

model::ModelConfig tiny_model(model::Mode mode) {
    model::ModelConfig cfg;
    cfg.d = 8;
    cfg.image_size = 16;
    cfg.patch = 4;
    cfg.K = 4;
    cfg.m = 3;
    cfg.L = 2;
    cfg.H = 2;
    cfg.C = 3;
    cfg.ffn_hidden = 16;
    cfg.wgen_hidden = 8;
    cfg.mode = mode;
    cfg.validate();
    return cfg;
}

void cmd_gradcheck(const std::string& scale, int coords, std::uint64_t seed, bool corrupt) {
    if (scale != "tiny")
        throw std::invalid_argument("gradcheck: unknown scale \"" + scale +
                                    "\" (only \"tiny\" exists)");
    if (coords < 1) throw std::invalid_argument("gradcheck: --coords must be >= 1");

    data::DatasetConfig dcfg;
    dcfg.image_size = 16;
    dcfg.seed = seed;
    dcfg.min_objects = 1;
    dcfg.max_objects = 3;  // stays under tiny K
    dcfg.validate();
    data::Scene scene = data::generate_scene(dcfg, 0);
    for (int id = 1; scene.annotation.boxes.empty() && id < 64; ++id)
        scene = data::generate_scene(dcfg, id);
    if (scene.annotation.boxes.empty())
        throw std::runtime_error("gradcheck: could not synthesize a non-empty scene");

    match::GroundTruthSet gt;
    gt.boxes = scene.annotation.boxes;
    for (int lbl : scene.annotation.labels) gt.labels.push_back(lbl % 3);

    const double tol = 1e-4;
    double worst = 0;
    std::string worst_param;
    for (model::Mode mode : {model::Mode::baseline, model::Mode::paq}) {
        model::Detector det(tiny_model(mode), seed + 1);
        auto rep = model_gradient_check(det, scene.image, gt, coords, 1e-5, seed + 2,
                                        corrupt ? 0.5 : 0.0);
        std::printf("%-8s coords %3d  skipped %2d  max_rel_err %.3e  worst %s\n",
                    model::to_string(mode).c_str(), rep.coords_checked, rep.unstable_skipped,
                    rep.max_rel_err, rep.worst_param.c_str());
        if (rep.max_rel_err > worst) {
            worst = rep.max_rel_err;
            worst_param = model::to_string(mode) + ":" + rep.worst_param;
        }
    }
    if (worst > tol)
        throw std::runtime_error("gradcheck: max relative error " + std::to_string(worst) +
                                 " at " + worst_param + " exceeds tolerance 1e-4");
    std::printf("gradcheck passed: max relative error %.3e <= 1e-4\n", worst);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"paqdet: pattern-composed query detector tooling"};
    app.require_subcommand(1);

    std::string config_path, out_dir, data_dir, mode_str, split_dir, ckpt_path, dets_path;
    std::string run_dir, run_a, run_b, out_path, scale = "tiny";
    bool force = false, corrupt = false;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs;
    int coords = 24;
    std::uint64_t gseed = 0;

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic long-tailed dataset");
    gen->add_option("--config", config_path, "run config JSON");
    gen->add_option("--out", out_dir, "output dataset directory")->required();
    gen->add_option("--seed", seed, "override data.seed");
    gen->add_flag("--force", force, "replace an existing non-empty output directory");
    gen->callback([&] { cmd_gen_data(config_path, out_dir, force, seed); });

    auto* tr = app.add_subcommand("train", "train a detector and write metrics + checkpoint");
    tr->add_option("--config", config_path, "run config JSON");
    tr->add_option("--data", data_dir, "dataset directory from gen-data")->required();
    tr->add_option("--out", out_dir, "run output directory")->required();
    tr->add_option("--mode", mode_str, "baseline or paq (overrides config)");
    tr->add_option("--seed", seed, "override train.seed");
    tr->add_option("--epochs", epochs, "override train.epochs");
    tr->callback([&] { cmd_train(config_path, data_dir, out_dir, mode_str, seed, epochs); });

    auto* ev = app.add_subcommand("eval", "score a checkpoint or a detections file on a split");
    ev->add_option("--config", config_path, "run config JSON");
    ev->add_option("--checkpoint", ckpt_path, "checkpoint.paqd to evaluate");
    ev->add_option("--split", split_dir, "split directory (e.g. dataset/val)")->required();
    ev->add_option("--out", out_path, "write metrics JSON here");
    ev->add_option("--detections", dets_path, "score this detections JSON instead of a model");
    ev->callback([&] { cmd_eval(config_path, ckpt_path, split_dir, out_path, dets_path); });

    auto* an = app.add_subcommand("analyze", "export a run's per-epoch curves as CSV");
    an->add_option("--run-dir", run_dir, "directory written by train")->required();
    an->add_option("--out", out_path, "CSV path (stdout when absent)");
    an->callback([&] { cmd_analyze(run_dir, out_path); });

    auto* ab = app.add_subcommand("ab-report", "side-by-side comparison of two runs");
    ab->add_option("--run-a", run_a, "first run directory")->required();
    ab->add_option("--run-b", run_b, "second run directory")->required();
    ab->callback([&] { cmd_ab_report(run_a, run_b); });

    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the whole model");
    gc->add_option("--scale", scale, "model scale (tiny)");
    gc->add_option("--coords", coords, "parameter coordinates to probe per mode");
    gc->add_option("--seed", gseed, "seed for scene and coordinate sampling");
    gc->add_flag("--corrupt", corrupt, "negative control: corrupt analytic gradients");
    gc->callback([&] { cmd_gradcheck(scale, coords, gseed, corrupt); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
