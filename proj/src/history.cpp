#include "sst/history.hpp"

namespace sst {

HistoryMode history_mode_from_string(const std::string& s) {
    if (s == "frozen_base") return HistoryMode::frozen_base;
    if (s == "ema") return HistoryMode::ema;
    fail(Err::Config, "unknown history mode '" + s + "'");
}

std::string history_mode_to_string(HistoryMode m) {
    return m == HistoryMode::frozen_base ? "frozen_base" : "ema";
}

void HistoryPolicy::validate() const {
    if (alpha < 0.0 || alpha > 1.0) fail(Err::Domain, "alpha must be in [0,1]");
    if (update_every < 1) fail(Err::Domain, "update_every must be >= 1");
}

ModelSnapshot init_history(const ModelSnapshot& base) {
    ModelSnapshot his = base;
    his.role = "history";
    return his;
}

ModelSnapshot ema_update(const ModelSnapshot& his, const ModelSnapshot& cur,
                         double alpha) {
    if (!(his.config == cur.config) ||
        !his.params.same_shape_as(cur.params)) {
        fail(Err::Shape, "ema_update: model shapes differ");
    }
    if (alpha < 0.0 || alpha > 1.0) {
        fail(Err::Domain, "ema_update: alpha out of [0,1]");
    }

    ModelSnapshot out = his;
    auto h = out.params.named_tensors();
    auto c = cur.params.named_tensors();
    for (size_t t = 0; t < h.size(); ++t) {
        auto& hv = h[t].second->data;
        const auto& cv = c[t].second->data;
        if (alpha == 1.0) continue;
        if (alpha == 0.0) {
            hv = cv;
            continue;
        }
        for (size_t i = 0; i < hv.size(); ++i) {
            hv[i] = alpha * hv[i] + (1.0 - alpha) * cv[i];
        }
    }
    return out;
}

bool history_update_due(const HistoryPolicy& policy, int64_t step) {
    return policy.mode == HistoryMode::ema && step >= 1 &&
           step % policy.update_every == 0;
}

ModelSnapshot maybe_update(const HistoryPolicy& policy, int64_t step,
                           const ModelSnapshot& his, const ModelSnapshot& cur) {
    policy.validate();
    if (!history_update_due(policy, step)) return his;
    return ema_update(his, cur, policy.alpha);
}

const TokenLogProbs& LogProbCache::get_or_compute(const ModelSnapshot& model,
                                                  const TokenizedSample& sample,
                                                  size_t index) {
    if (index >= entries_.size()) {
        fail(Err::Index, "LogProbCache: sample index out of range");
    }
    if (!entries_[index]) {
        entries_[index] = forward_logprobs(model, sample);
    }
    return *entries_[index];
}

void LogProbCache::invalidate() {
    for (auto& e : entries_) e.reset();
}

size_t LogProbCache::filled() const {
    size_t n = 0;
    for (const auto& e : entries_) {
        if (e) ++n;
    }
    return n;
}

}  // namespace sst
