#include "paqdet/config.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace paqdet::config {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& why) {
    throw std::invalid_argument("config: " + path + ": " + why);
}

void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) fail(path, "expected an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known) fail(path + "." + it.key(), "unknown key");
    }
}

void read_int(const json& obj, const std::string& path, const char* key, int& out) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if (!v.is_number_integer()) fail(path + "." + key, "expected an integer");
    out = v.get<int>();
}

void read_double(const json& obj, const std::string& path, const char* key, double& out) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if (!v.is_number()) fail(path + "." + key, "expected a number");
    out = v.get<double>();
}

void read_bool(const json& obj, const std::string& path, const char* key, bool& out) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if (!v.is_boolean()) fail(path + "." + key, "expected true or false");
    out = v.get<bool>();
}

void read_seed(const json& obj, const std::string& path, const char* key, std::uint64_t& out) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<long long>() < 0))
        fail(path + "." + key, "expected a nonnegative integer");
    out = v.get<std::uint64_t>();
}

void parse_model(const json& j, model::ModelConfig& m) {
    const std::string path = "model";
    check_keys(j, path,
               {"d", "image_size", "patch", "K", "m", "L", "H", "C", "ffn_hidden", "wgen_hidden",
                "mode", "reposition_each_layer"});
    read_int(j, path, "d", m.d);
    read_int(j, path, "image_size", m.image_size);
    read_int(j, path, "patch", m.patch);
    read_int(j, path, "K", m.K);
    read_int(j, path, "m", m.m);
    read_int(j, path, "L", m.L);
    read_int(j, path, "H", m.H);
    read_int(j, path, "C", m.C);
    read_int(j, path, "ffn_hidden", m.ffn_hidden);
    read_int(j, path, "wgen_hidden", m.wgen_hidden);
    read_bool(j, path, "reposition_each_layer", m.reposition_each_layer);
    if (j.contains("mode")) {
        const json& v = j.at("mode");
        if (!v.is_string()) fail(path + ".mode", "expected \"baseline\" or \"paq\"");
        try {
            m.mode = model::mode_from_string(v.get<std::string>());
        } catch (const std::invalid_argument& e) {
            fail(path + ".mode", e.what());
        }
    }
}

void parse_train(const json& j, train::TrainConfig& t) {
    const std::string path = "train";
    check_keys(j, path,
               {"epochs", "batch_size", "lr", "weight_decay", "lambda1", "lambda2", "clip_norm",
                "seed"});
    read_int(j, path, "epochs", t.epochs);
    read_int(j, path, "batch_size", t.batch_size);
    read_double(j, path, "lr", t.lr);
    read_double(j, path, "weight_decay", t.weight_decay);
    read_double(j, path, "lambda1", t.lambda1);
    read_double(j, path, "lambda2", t.lambda2);
    read_double(j, path, "clip_norm", t.clip_norm);
    read_seed(j, path, "seed", t.seed);
}

void parse_data(const json& j, data::DatasetConfig& d) {
    const std::string path = "data";
    check_keys(j, path,
               {"train_images", "val_images", "test_images", "image_size", "class_probs",
                "min_objects", "max_objects", "seed", "overlap_allowance"});
    read_int(j, path, "train_images", d.train_images);
    read_int(j, path, "val_images", d.val_images);
    read_int(j, path, "test_images", d.test_images);
    read_int(j, path, "image_size", d.image_size);
    read_int(j, path, "min_objects", d.min_objects);
    read_int(j, path, "max_objects", d.max_objects);
    read_seed(j, path, "seed", d.seed);
    read_double(j, path, "overlap_allowance", d.overlap_allowance);
    if (j.contains("class_probs")) {
        const json& v = j.at("class_probs");
        if (!v.is_array()) fail(path + ".class_probs", "expected an array of numbers");
        d.class_probs.clear();
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number())
                fail(path + ".class_probs[" + std::to_string(i) + "]", "expected a number");
            d.class_probs.push_back(v[i].get<double>());
        }
    }
}

void parse_eval(const json& j, EvalConfig& e) {
    const std::string path = "eval";
    check_keys(j, path, {"score_threshold", "max_det"});
    read_double(j, path, "score_threshold", e.score_threshold);
    read_int(j, path, "max_det", e.max_det);
}

}  // namespace

void EvalConfig::validate() const {
    if (score_threshold < 0 || score_threshold > 1)
        throw std::invalid_argument("config: eval.score_threshold outside [0, 1]");
    if (max_det < 1) throw std::invalid_argument("config: eval.max_det must be >= 1");
}

void RunConfig::validate() const {
    model.validate();
    train.validate();
    data.validate();
    eval.validate();
    if (model.image_size != data.image_size)
        throw std::invalid_argument(
            "config: model.image_size " + std::to_string(model.image_size) +
            " does not match data.image_size " + std::to_string(data.image_size));
    if (model.C != data::kNumClasses)
        throw std::invalid_argument("config: model.C must be " +
                                    std::to_string(data::kNumClasses) +
                                    " to match the dataset's classes, got " +
                                    std::to_string(model.C));
}

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw std::invalid_argument("config: " + origin + ": not valid JSON: " + e.what());
    }
    check_keys(root, origin, {"model", "train", "data", "eval", "analysis"});

    RunConfig cfg;
    if (root.contains("model")) parse_model(root.at("model"), cfg.model);
    if (root.contains("train")) parse_train(root.at("train"), cfg.train);
    if (root.contains("data")) parse_data(root.at("data"), cfg.data);
    if (root.contains("eval")) parse_eval(root.at("eval"), cfg.eval);
    if (root.contains("analysis")) check_keys(root.at("analysis"), "analysis", {});
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config_text(text, path);
}

std::string config_to_text(const RunConfig& cfg) {
    json j;
    j["model"] = {{"d", cfg.model.d},
                  {"image_size", cfg.model.image_size},
                  {"patch", cfg.model.patch},
                  {"K", cfg.model.K},
                  {"m", cfg.model.m},
                  {"L", cfg.model.L},
                  {"H", cfg.model.H},
                  {"C", cfg.model.C},
                  {"ffn_hidden", cfg.model.ffn_hidden},
                  {"wgen_hidden", cfg.model.wgen_hidden},
                  {"mode", model::to_string(cfg.model.mode)},
                  {"reposition_each_layer", cfg.model.reposition_each_layer}};
    j["train"] = {{"epochs", cfg.train.epochs},
                  {"batch_size", cfg.train.batch_size},
                  {"lr", cfg.train.lr},
                  {"weight_decay", cfg.train.weight_decay},
                  {"lambda1", cfg.train.lambda1},
                  {"lambda2", cfg.train.lambda2},
                  {"clip_norm", cfg.train.clip_norm},
                  {"seed", cfg.train.seed}};
    j["data"] = {{"train_images", cfg.data.train_images},
                 {"val_images", cfg.data.val_images},
                 {"test_images", cfg.data.test_images},
                 {"image_size", cfg.data.image_size},
                 {"class_probs", cfg.data.class_probs},
                 {"min_objects", cfg.data.min_objects},
                 {"max_objects", cfg.data.max_objects},
                 {"seed", cfg.data.seed},
                 {"overlap_allowance", cfg.data.overlap_allowance}};
    j["eval"] = {{"score_threshold", cfg.eval.score_threshold}, {"max_det", cfg.eval.max_det}};
    j["analysis"] = json::object();
    return j.dump(2) + "\n";
}

train::TrainConfig train_config_for_run(const RunConfig& cfg) {
    train::TrainConfig t = cfg.train;
    t.eval_score_threshold = cfg.eval.score_threshold;
    t.eval_max_det = cfg.eval.max_det;
    return t;
}

}  // namespace paqdet::config
