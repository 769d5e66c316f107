#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sst/corpus.hpp"
#include "sst/history.hpp"
#include "sst/model.hpp"
#include "sst/select.hpp"

namespace sst {

struct MaskedBatch {
    std::vector<TokenizedSample> samples;
    std::vector<SelectionMask> masks;

    void validate() const;  // throws EmptyMask / LengthMismatch
};

// Mean over samples of -(1/k) sum of selected-token log-probs. Masked-out
// tokens still flow through the forward pass; they only drop out of the
// reduction.
double masked_loss(const ModelSnapshot& model, const MaskedBatch& batch);

// Reverse-mode gradients of masked_loss w.r.t. every parameter.
ParamSet backward(const ModelSnapshot& model, const MaskedBatch& batch);

// One pass producing both; the trainer's inner step.
std::pair<double, ParamSet> loss_and_grad(const ModelSnapshot& model,
                                          const MaskedBatch& batch);

struct OptimizerConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct OptimizerState {
    int64_t step = 0;
    ParamSet m;
    ParamSet v;

    static OptimizerState init(const ModelConfig& config);
};

// Decoupled-weight-decay adaptive-moment update on a raw array; exposed so
// the update rule itself is testable against hand computation.
void adamw_update(double* p, const double* g, double* m, double* v, size_t n,
                  const OptimizerConfig& oc, int64_t step);

// Returns a fresh snapshot and state; inputs are not modified. Throws
// NonFiniteGradient if any gradient entry is NaN/Inf.
std::pair<ModelSnapshot, OptimizerState> optimizer_step(
    const ModelSnapshot& model, const ParamSet& grads,
    const OptimizerState& state, const OptimizerConfig& oc);

struct StepRecord {
    int64_t step = 0;
    double loss = 0.0;
    double wall_ms = 0.0;  // reported separately from deterministic metrics
};

struct EpochRecord {
    int epoch = 0;  // 0 = before any update
    double heldout_nll = 0.0;
};

struct TrainReport {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
};

// The run configuration file format (JSON). Every key has a default; see
// README for the documented schema.
struct RunConfig {
    std::string run_id;
    std::string out_dir = "runs";
    std::string train_path;
    std::string heldout_path;
    std::string ref_checkpoint;   // rho1 / tokencleaning reference; empty = base init
    std::string init_checkpoint;  // warm start; empty = seeded random init

    SelectorSpec selector;
    HistoryPolicy history;
    ModelConfig model;
    OptimizerConfig optim;

    int epochs = 1;
    int batch_size = 16;
    uint64_t seed = 1;
    int export_masks = 16;

    static RunConfig from_json_text(const std::string& text);
    static RunConfig from_json_file(const std::string& path);
    std::string to_json_text() const;

    void validate() const;
};

// Mean over samples of the per-sample mean response NLL (nats).
double eval_nll(const ModelSnapshot& model, const Corpus& corpus);

struct TrainResult {
    ModelSnapshot model;
    ModelSnapshot history;  // final history state (base copy in frozen mode)
    TrainReport report;
};

// TokenCleaning's fixed-model variant: one pool-wide excess-loss ranking.
std::vector<SelectionMask> tokencleaning_masks(const ModelSnapshot& initial,
                                               const ModelSnapshot& reference,
                                               const Corpus& corpus, double rho);

// The base model a run starts from; also the frozen history and the
// default reference for the loss-delta baselines.
ModelSnapshot base_model_for(const RunConfig& cfg);

// The full selection-training loop: score, select, masked update, optional
// history merge, per-epoch held-out evaluation. Deterministic given
// (corpora, config, seed).
TrainResult train(const Corpus& train_corpus, const Corpus* heldout,
                  const RunConfig& cfg);

}  // namespace sst
