#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "sst/model.hpp"

namespace sst {

enum class HistoryMode { frozen_base, ema };

HistoryMode history_mode_from_string(const std::string& s);
std::string history_mode_to_string(HistoryMode m);

struct HistoryPolicy {
    HistoryMode mode = HistoryMode::frozen_base;
    double alpha = 0.99;
    int64_t update_every = 50;  // optimizer steps between EMA merges

    void validate() const;
};

// Deep copy of the base model, tagged as history.
ModelSnapshot init_history(const ModelSnapshot& base);

// theta_his <- alpha * theta_his + (1 - alpha) * theta_cur, per array.
ModelSnapshot ema_update(const ModelSnapshot& his, const ModelSnapshot& cur,
                         double alpha);

// frozen_base: identity. ema: one EMA merge when step % update_every == 0.
ModelSnapshot maybe_update(const HistoryPolicy& policy, int64_t step,
                           const ModelSnapshot& his, const ModelSnapshot& cur);

bool history_update_due(const HistoryPolicy& policy, int64_t step);

// Per-sample log-prob cache for a fixed auxiliary model. Only valid while
// the model it was filled from does not change (frozen_base history, or a
// fixed reference model).
class LogProbCache {
public:
    explicit LogProbCache(size_t n_samples) : entries_(n_samples) {}

    const TokenLogProbs& get_or_compute(const ModelSnapshot& model,
                                        const TokenizedSample& sample,
                                        size_t index);
    void invalidate();
    size_t filled() const;

private:
    std::vector<std::optional<TokenLogProbs>> entries_;
};

}  // namespace sst
