#include "paqdet/train.hpp"

#include "paqdet/matching.hpp"
#include "paqdet/ops.hpp"
#include "paqdet/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;

namespace paqdet::train {

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
    if (!(lr >= 0) || !std::isfinite(lr))
        throw std::invalid_argument("train config: lr must be finite and >= 0");
    if (!(weight_decay >= 0)) throw std::invalid_argument("train config: weight_decay must be >= 0");
    if (!(lambda1 >= 0) || !(lambda2 >= 0))
        throw std::invalid_argument("train config: loss weights must be >= 0");
    if (!(clip_norm > 0)) throw std::invalid_argument("train config: clip_norm must be > 0");
    if (eval_score_threshold < 0 || eval_score_threshold > 1)
        throw std::invalid_argument("train config: eval_score_threshold outside [0, 1]");
    if (eval_max_det < 1) throw std::invalid_argument("train config: eval_max_det must be >= 1");
}

double cosine_lr(double base, long long step, long long total_steps) {
    if (step < 0 || (total_steps > 0 && step >= total_steps))
        throw std::invalid_argument("cosine_lr: step outside [0, total_steps)");
    if (total_steps <= 1) return base;
    double frac = static_cast<double>(step) / static_cast<double>(total_steps - 1);
    return base * 0.5 * (1.0 + std::cos(M_PI * frac));
}

double clip_global_norm(std::vector<std::vector<double>>& grads, double clip) {
    if (!(clip > 0)) throw std::invalid_argument("clip_global_norm: clip must be > 0");
    double sq = 0;
    for (const auto& g : grads)
        for (double v : g) sq += v * v;
    double norm = std::sqrt(sq);
    if (norm > clip) {
        double s = clip / norm;
        for (auto& g : grads)
            for (double& v : g) v *= s;
    }
    return norm;
}

AdamW::AdamW(double beta1, double beta2, double eps) : b1_(beta1), b2_(beta2), eps_(eps) {
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
        throw std::invalid_argument("AdamW: betas must lie in [0, 1)");
    if (!(eps > 0)) throw std::invalid_argument("AdamW: eps must be > 0");
}

void AdamW::step(model::ParamStore& store, const std::vector<std::vector<double>>& grads,
                 double lr, double weight_decay) {
    if (static_cast<int>(grads.size()) != store.size())
        throw std::invalid_argument("AdamW: grads/store tensor count mismatch");
    if (m_.empty()) {
        m_.resize(grads.size());
        v_.resize(grads.size());
        for (std::size_t i = 0; i < grads.size(); ++i) {
            m_[i].assign(store.at(static_cast<int>(i)).values.size(), 0.0);
            v_[i].assign(store.at(static_cast<int>(i)).values.size(), 0.0);
        }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < grads.size(); ++i) {
        auto& p = store.at(static_cast<int>(i)).values;
        if (grads[i].size() != p.size())
            throw std::invalid_argument("AdamW: grad size mismatch on tensor " +
                                        store.at(static_cast<int>(i)).name);
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            double g = grads[i][k];
            m[k] = b1_ * m[k] + (1.0 - b1_) * g;
            v[k] = b2_ * v[k] + (1.0 - b2_) * g * g;
            double update = (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
            p[k] -= lr * update + lr * weight_decay * p[k];
        }
    }
}

Dataset load_split(const std::string& split_dir) {
    fs::path dir(split_dir);
    data::DatasetSplit split = data::load_annotations((dir / "annotations.json").string());
    Dataset ds;
    ds.reserve(split.scenes.size());
    for (std::size_t i = 0; i < split.scenes.size(); ++i) {
        Sample s;
        s.image_id = split.scenes[i].image_id;
        s.image = load_ppm((dir / split.files[i]).string());
        s.gt.boxes = split.scenes[i].boxes;
        s.gt.labels = split.scenes[i].labels;
        ds.push_back(std::move(s));
    }
    return ds;
}

eval::APResult evaluate(const model::Detector& det, const Dataset& ds, double score_threshold,
                        int max_det, std::vector<eval::Detection>* out_dets) {
    std::vector<eval::Detection> dets;
    std::vector<eval::GtInstance> gts;
    model::Bound constants = det.bind(nullptr);
    for (const Sample& s : ds) {
        model::ForwardResult fr = det.forward(s.image, constants);
        auto d = eval::extract_detections(fr.out, s.image_id, score_threshold, max_det);
        dets.insert(dets.end(), d.begin(), d.end());
        for (int g = 0; g < s.gt.size(); ++g)
            gts.push_back({s.image_id, s.gt.labels[g], s.gt.boxes[g]});
    }
    if (out_dets) out_dets->insert(out_dets->end(), dets.begin(), dets.end());
    return eval::compute_map(dets, gts);
}

// ---- checkpoints -----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'P', 'A', 'Q', 'D'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[i] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

std::uint64_t parse_hex64(const std::string& s) {
    if (s.size() != 16) throw std::runtime_error("checkpoint: rng state word must be 16 hex digits");
    std::uint64_t v = 0;
    for (char c : s) {
        int d;
        if (c >= '0' && c <= '9') d = c - '0';
        else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
        else throw std::runtime_error("checkpoint: bad hex digit in rng state");
        v = (v << 4) | static_cast<std::uint64_t>(d);
    }
    return v;
}

nlohmann::json config_to_json(const model::ModelConfig& c) {
    return {{"d", c.d},
            {"image_size", c.image_size},
            {"patch", c.patch},
            {"K", c.K},
            {"m", c.m},
            {"L", c.L},
            {"H", c.H},
            {"C", c.C},
            {"ffn_hidden", c.ffn_hidden},
            {"wgen_hidden", c.wgen_hidden},
            {"mode", model::to_string(c.mode)},
            {"reposition_each_layer", c.reposition_each_layer}};
}

model::ModelConfig config_from_json(const nlohmann::json& j) {
    model::ModelConfig c;
    c.d = j.at("d").get<int>();
    c.image_size = j.at("image_size").get<int>();
    c.patch = j.at("patch").get<int>();
    c.K = j.at("K").get<int>();
    c.m = j.at("m").get<int>();
    c.L = j.at("L").get<int>();
    c.H = j.at("H").get<int>();
    c.C = j.at("C").get<int>();
    c.ffn_hidden = j.at("ffn_hidden").get<int>();
    c.wgen_hidden = j.at("wgen_hidden").get<int>();
    c.mode = model::mode_from_string(j.at("mode").get<std::string>());
    c.reposition_each_layer = j.at("reposition_each_layer").get<bool>();
    return c;
}

std::string describe_config_mismatch(const model::ModelConfig& a, const model::ModelConfig& b) {
    auto ja = config_to_json(a), jb = config_to_json(b);
    for (auto it = ja.begin(); it != ja.end(); ++it)
        if (jb.at(it.key()) != it.value())
            return it.key() + " " + jb.at(it.key()).dump() + " in file vs " + it.value().dump();
    return "";
}

struct RawCheckpoint {
    nlohmann::json header;
    std::vector<float> payload;
};

RawCheckpoint read_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());

    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: " + path + ": bad magic, not a PAQD file");
    std::uint32_t version = get_u32(p + 4);
    if (version != kVersion)
        throw std::runtime_error("checkpoint: " + path + ": unsupported version " +
                                 std::to_string(version));
    std::uint64_t header_len = get_u64(p + 8);
    if (16 + header_len > bytes.size())
        throw std::runtime_error("checkpoint: " + path + ": truncated header");

    RawCheckpoint raw;
    try {
        raw.header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + header_len);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("checkpoint: " + path + ": header is not valid JSON: " + e.what());
    }

    std::size_t payload_bytes = bytes.size() - 16 - header_len;
    if (payload_bytes % 4 != 0)
        throw std::runtime_error("checkpoint: " + path + ": payload is not whole float32 words");
    raw.payload.resize(payload_bytes / 4);
    for (std::size_t i = 0; i < raw.payload.size(); ++i) {
        std::uint32_t word = get_u32(p + 16 + header_len + 4 * i);
        float f;
        std::memcpy(&f, &word, 4);
        raw.payload[i] = f;
    }
    return raw;
}

// Checks the tensor table against the payload and an expected inventory, then
// copies values into the store.
CheckpointMeta apply_checkpoint(model::ParamStore& store, const RawCheckpoint& raw,
                                const std::string& path) {
    const nlohmann::json& h = raw.header;
    CheckpointMeta meta;
    try {
        meta.config = config_from_json(h.at("config"));
        meta.epoch = h.at("epoch").get<int>();
        const auto& rng = h.at("rng");
        if (!rng.is_array() || rng.size() != 4)
            throw std::runtime_error("checkpoint: " + path + ": rng state must be 4 words");
        for (int i = 0; i < 4; ++i) meta.rng_state[i] = parse_hex64(rng[i].get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("checkpoint: " + path + ": malformed header: " + e.what());
    }

    const auto& tensors = h.at("tensors");
    if (!tensors.is_array() || static_cast<int>(tensors.size()) != store.size())
        throw std::runtime_error("checkpoint: " + path + ": tensor table has " +
                                 std::to_string(tensors.size()) + " entries, expected " +
                                 std::to_string(store.size()));

    std::size_t offset = 0;
    for (int i = 0; i < store.size(); ++i) {
        const auto& t = tensors[i];
        model::Param& p = store.at(i);
        std::string name = t.at("name").get<std::string>();
        if (name != p.name)
            throw std::runtime_error("checkpoint: " + path + ": tensor " + std::to_string(i) +
                                     " is '" + name + "', expected '" + p.name + "'");
        std::vector<int> shape = t.at("shape").get<std::vector<int>>();
        if (shape != p.shape)
            throw std::runtime_error("checkpoint: " + path + ": shape mismatch on " + p.name);
        if (t.at("offset").get<std::size_t>() != offset)
            throw std::runtime_error("checkpoint: " + path + ": non-contiguous offset on " + p.name);
        if (offset + p.values.size() > raw.payload.size())
            throw std::runtime_error("checkpoint: " + path + ": truncated payload at " + p.name);
        for (std::size_t k = 0; k < p.values.size(); ++k)
            p.values[k] = static_cast<double>(raw.payload[offset + k]);
        offset += p.values.size();
    }
    if (offset != raw.payload.size())
        throw std::runtime_error("checkpoint: " + path + ": payload has trailing data");
    return meta;
}

}  // namespace

void save_checkpoint(const model::Detector& det, int epoch,
                     const std::array<std::uint64_t, 4>& rng_state, const std::string& path) {
    const model::ParamStore& store = det.params();

    nlohmann::json header;
    header["epoch"] = epoch;
    header["mode"] = model::to_string(det.config().mode);
    header["config"] = config_to_json(det.config());
    header["rng"] = {hex64(rng_state[0]), hex64(rng_state[1]), hex64(rng_state[2]),
                     hex64(rng_state[3])};
    nlohmann::json tensors = nlohmann::json::array();
    std::size_t offset = 0;
    for (int i = 0; i < store.size(); ++i) {
        const model::Param& p = store.at(i);
        tensors.push_back({{"name", p.name}, {"shape", p.shape}, {"offset", offset}});
        offset += p.values.size();
    }
    header["tensors"] = std::move(tensors);
    std::string header_bytes = header.dump();

    std::string out;
    out.reserve(16 + header_bytes.size() + offset * 4);
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    put_u64(out, header_bytes.size());
    out += header_bytes;
    for (int i = 0; i < store.size(); ++i)
        for (double v : store.at(i).values) {
            float f = static_cast<float>(v);
            std::uint32_t word;
            std::memcpy(&word, &f, 4);
            put_u32(out, word);
        }

    fs::path tmp = fs::path(path).concat(".tmp");
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("checkpoint: cannot write " + tmp.string());
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw std::runtime_error("checkpoint: short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

model::Detector load_checkpoint(const std::string& path, CheckpointMeta* meta) {
    RawCheckpoint raw = read_checkpoint_file(path);
    model::ModelConfig cfg;
    try {
        cfg = config_from_json(raw.header.at("config"));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("checkpoint: " + path + ": malformed header: " + e.what());
    }
    cfg.validate();
    model::Detector det(cfg, 0);
    CheckpointMeta m = apply_checkpoint(det.params(), raw, path);
    if (meta) *meta = m;
    return det;
}

CheckpointMeta load_checkpoint_into(model::Detector& det, const std::string& path) {
    RawCheckpoint raw = read_checkpoint_file(path);
    model::ModelConfig stored;
    try {
        stored = config_from_json(raw.header.at("config"));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("checkpoint: " + path + ": malformed header: " + e.what());
    }
    std::string diff = describe_config_mismatch(det.config(), stored);
    if (!diff.empty())
        throw std::invalid_argument("checkpoint: " + path + ": config mismatch: " + diff);
    return apply_checkpoint(det.params(), raw, path);
}

// ---- the loop --------------------------------------------------------------

namespace {

nlohmann::json ap_map_to_json(const std::map<int, double>& m) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [c, v] : m) j[std::to_string(c)] = v;
    return j;
}

// Non-finite predictions would otherwise surface as a matching-cost error;
// catching them here turns divergence into a clean abort.
bool finite_outputs(const model::ModelOutput& out) {
    for (const auto& layer : {std::cref(out.per_layer_logits), std::cref(out.per_layer_boxes)})
        for (const ad::Tensor& t : layer.get())
            for (double v : t.values())
                if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace

std::string metrics_line(const EpochRecord& rec, model::Mode mode) {
    nlohmann::json j;
    j["epoch"] = rec.epoch;
    j["mode"] = model::to_string(mode);
    j["train_loss"] = rec.train_loss;
    j["lr_last"] = rec.lr_last;
    j["map50"] = rec.val.map50;
    j["map5095"] = rec.val.map5095;
    j["precision"] = rec.val.precision;
    j["recall"] = rec.val.recall;
    j["per_class_ap50"] = ap_map_to_json(rec.val.per_class_ap50);
    j["matched_fraction"] = rec.act.matched_fraction;
    j["gini_query_matches"] = rec.act.gini_query_matches;
    j["gini_pattern_grads"] = rec.act.gini_pattern_grads;
    return j.dump();
}

TrainResult train(model::Detector& det, const TrainConfig& tcfg, const Dataset& train_data,
                  const Dataset& val_data, const std::string& out_dir) {
    tcfg.validate();
    if (train_data.empty()) throw std::invalid_argument("train: empty training dataset");
    if (val_data.empty()) throw std::invalid_argument("train: empty validation dataset");

    const model::ModelConfig& mcfg = det.config();
    const bool paq = mcfg.mode == model::Mode::paq;
    const int N = static_cast<int>(train_data.size());
    const long long steps_per_epoch = (N + tcfg.batch_size - 1) / tcfg.batch_size;
    const long long total_steps = steps_per_epoch * tcfg.epochs;

    TrainResult result;
    std::ofstream metrics;
    fs::path ckpt_path;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        metrics.open(fs::path(out_dir) / "metrics.jsonl", std::ios::trunc);
        if (!metrics) throw std::runtime_error("train: cannot write metrics.jsonl in " + out_dir);
        ckpt_path = fs::path(out_dir) / "checkpoint.paqd";
        result.checkpoint_path = ckpt_path.string();
    }

    AdamW opt;
    const std::uint64_t order_seed = derive_seed(tcfg.seed, 0x747261696eULL);  // "train" tag
    long long global_step = 0;

    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        Rng epoch_rng(derive_seed(order_seed, static_cast<std::uint64_t>(epoch)));
        std::vector<int> order(N);
        std::iota(order.begin(), order.end(), 0);
        epoch_rng.shuffle(order);

        analysis::ActivationRecorder recorder(mcfg.K, paq ? mcfg.m : 0, mcfg.C, mcfg.d);
        double loss_sum = 0;
        long long batches = 0;
        double lr_last = 0;

        for (int start = 0; start < N; start += tcfg.batch_size) {
            const int end = std::min(N, start + tcfg.batch_size);
            const double lr_t = cosine_lr(tcfg.lr, global_step, total_steps);

            ad::Graph g;
            model::Bound bound = det.bind(&g);
            ad::Tensor batch_loss;
            bool diverged = false;
            for (int bi = start; bi < end; ++bi) {
                const Sample& s = train_data[order[bi]];
                model::ForwardResult fr = det.forward(s.image, bound);
                if (!finite_outputs(fr.out)) {
                    diverged = true;
                    break;
                }
                match::TotalLoss tl =
                    match::total_loss(fr.out.per_layer_logits, fr.out.per_layer_boxes, s.gt,
                                      tcfg.lambda1, tcfg.lambda2);
                recorder.record_image(tl.per_layer_assignments.back(), s.gt.labels,
                                      paq ? &fr.queries.weights.values() : nullptr);
                batch_loss = batch_loss.defined() ? ad::add(batch_loss, tl.value) : tl.value;
            }
            if (diverged) {
                result.nan_abort = true;
                return result;
            }
            batch_loss = ad::scale(batch_loss, 1.0 / static_cast<double>(end - start));

            const double loss_val = batch_loss.item();
            if (!std::isfinite(loss_val)) {
                result.nan_abort = true;
                return result;
            }
            g.backward(batch_loss);

            std::vector<std::vector<double>> grads(det.params().size());
            for (int i = 0; i < det.params().size(); ++i) {
                const ad::Tensor& leaf = bound.tensors[static_cast<std::size_t>(i)];
                if (g.has_grad(leaf)) grads[i] = g.grad(leaf);
                else grads[i].assign(det.params().at(i).values.size(), 0.0);
            }
            if (paq) recorder.record_pattern_grad(grads[det.params().index_of("paq.patterns")]);
            clip_global_norm(grads, tcfg.clip_norm);
            opt.step(det.params(), grads, lr_t, tcfg.weight_decay);

            result.step_losses.push_back(loss_val);
            loss_sum += loss_val;
            ++batches;
            lr_last = lr_t;
            ++global_step;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(batches);
        rec.lr_last = lr_last;
        rec.val = evaluate(det, val_data, tcfg.eval_score_threshold, tcfg.eval_max_det);
        rec.act = recorder.finish();

        if (!out_dir.empty()) {
            metrics << metrics_line(rec, mcfg.mode) << "\n";
            metrics.flush();
            std::array<std::uint64_t, 4> rng_state;
            std::copy(epoch_rng.state(), epoch_rng.state() + 4, rng_state.begin());
            save_checkpoint(det, epoch, rng_state, ckpt_path.string());
        }
        result.epochs.push_back(std::move(rec));
    }
    return result;
}

}  // namespace paqdet::train
