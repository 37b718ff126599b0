// The detector: toy transformer encoder, confidence top-K selection, query
// composition (baseline copies selected tokens; paq mixes a learnable pattern
// bank with predicted convex weights), and a DETR-style decoder with
// per-layer heads and box refinement.
#pragma once

#include "paqdet/image.hpp"
#include "paqdet/ops.hpp"
#include "paqdet/rng.hpp"
#include "paqdet/tensor.hpp"

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace paqdet::model {

enum class Mode { baseline, paq };

Mode mode_from_string(const std::string& s);  // rejects unknown names
std::string to_string(Mode m);

struct ModelConfig {
    int d = 64;            // embedding dim
    int image_size = 64;   // square input side
    int patch = 8;         // patch side; M = (image_size/patch)^2 tokens
    int K = 30;            // decoder queries
    int m = 8;             // patterns
    int L = 3;             // decoder layers
    int H = 4;             // attention heads
    int C = 6;             // classes
    int ffn_hidden = 128;
    int wgen_hidden = 64;
    Mode mode = Mode::baseline;
    // Position queries re-derived from each layer's refined references when
    // true, frozen at the initial references when false.
    bool reposition_each_layer = true;

    int tokens() const { return (image_size / patch) * (image_size / patch); }
    void validate() const;  // throws with the violated constraint named
};

struct Param {
    std::string name;
    ad::Shape shape;
    std::vector<double> values;
};

class ParamStore {
public:
    int add(std::string name, ad::Shape shape, std::vector<double> values);
    int index_of(const std::string& name) const;  // -1 when absent
    Param& at(int i) { return params_[i]; }
    const Param& at(int i) const { return params_[i]; }
    const Param& at(const std::string& name) const;
    Param& at(const std::string& name);
    int size() const { return static_cast<int>(params_.size()); }
    std::size_t total_scalars() const;

private:
    std::vector<Param> params_;
    std::unordered_map<std::string, int> index_;
};

// Parameters bound to one graph (leaves) or to none (constants, for
// no-grad evaluation). Lives no longer than the graph it binds.
struct Bound {
    const ParamStore* store = nullptr;
    std::vector<ad::Tensor> tensors;
    const ad::Tensor& operator()(const std::string& name) const;
};

struct EncoderOutput {
    ad::Tensor tokens;        // M x d, symbol Z
    ad::Tensor token_scores;  // M x C class logits
    ad::Tensor token_anchors; // M x 4 constant grid anchors
};

struct QuerySet {
    ad::Tensor content;              // K x d
    ad::Tensor references;           // K x 4
    std::vector<int> selected_indices;
    ad::Tensor weights;              // K x m, paq mode only (undefined otherwise)
};

struct ModelOutput {
    std::vector<ad::Tensor> per_layer_logits;  // L of K x C
    std::vector<ad::Tensor> per_layer_boxes;   // L of K x 4, sigmoid space
};

struct ForwardResult {
    EncoderOutput enc;
    QuerySet queries;
    ModelOutput out;
};

class Detector {
public:
    Detector(ModelConfig cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // Binds every parameter as a leaf on g, or as constants when g is null.
    Bound bind(ad::Graph* g) const;

    EncoderOutput encode(const Image& img, const Bound& p) const;
    QuerySet select_topk(const EncoderOutput& enc, const Bound& p) const;
    ad::Tensor generate_weights(const ad::Tensor& z_i, const Bound& p) const;   // K x m
    ad::Tensor compose_queries(const ad::Tensor& weights, const ad::Tensor& patterns) const;
    ModelOutput decode(const QuerySet& q, const EncoderOutput& enc, const Bound& p) const;

    ForwardResult forward(const Image& img, const Bound& p) const;
    ForwardResult forward(const Image& img, ad::Graph* g) const;

private:
    void init_params(std::uint64_t seed);

    ModelConfig cfg_;
    ParamStore params_;
};

}  // namespace paqdet::model
