// One structured run configuration: sections model, train, data, eval,
// analysis. Parsing is strict: unknown keys are rejected with their path, and
// every section is validated before any command does work.
#pragma once

#include "paqdet/data.hpp"
#include "paqdet/model.hpp"
#include "paqdet/train.hpp"

#include <string>

namespace paqdet::config {

struct EvalConfig {
    double score_threshold = 0.05;  // detection cutoff fed to AP
    int max_det = 30;

    void validate() const;
};

struct RunConfig {
    model::ModelConfig model;
    train::TrainConfig train;
    data::DatasetConfig data;
    EvalConfig eval;
    // the analysis section has no knobs yet; it is accepted empty so config
    // files can carry the section without breaking

    void validate() const;  // section invariants plus cross-section coherence
};

// Partial configs are fine: absent keys keep their defaults.
RunConfig parse_config_text(const std::string& text, const std::string& origin);
RunConfig load_config(const std::string& path);

// Round-trip serialization of every setting (two-space indent).
std::string config_to_text(const RunConfig& cfg);

// TrainConfig with the eval section folded into its evaluation fields.
train::TrainConfig train_config_for_run(const RunConfig& cfg);

}  // namespace paqdet::config
