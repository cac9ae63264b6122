#pragma once

// Pairwise DPO loss, its analytic gradient, and the multi-negative
// extension: one chosen response contrasted against m rejected responses,
// averaged per prompt, against a frozen reference policy.
//
//   r(x,y) = beta * (logprob_theta(y|x) - logprob_ref(y|x))
//   z      = r(x,p) - r(x,n)
//   loss   = softplus(-z) = -log sigmoid(z)
//   grad   = -beta * sigmoid(-z) * (grad logprob(p|x) - grad logprob(n|x))

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "selfcontrast/corpus.hpp"
#include "selfcontrast/toylm.hpp"

namespace selfcontrast {

/// log(1 + e^x) in max/log1p form: exact linear asymptote past |x| ~ 36,
/// no overflow anywhere.
inline double softplus(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

struct DpoConfig {
    double beta = 0.1;
    double learning_rate = 1e-3;
    int epochs = 1;
    int batch_prompts = 32;
    uint64_t seed = 0;
    Optimizer optimizer = Optimizer::sgd;

    void validate() const {
        if (!(beta > 0.0)) throw std::invalid_argument("dpo beta must be > 0");
        if (learning_rate < 0.0) throw std::invalid_argument("dpo learning_rate must be >= 0");
        if (epochs < 1) throw std::invalid_argument("dpo epochs must be >= 1");
        if (batch_prompts < 1) throw std::invalid_argument("dpo batch_prompts must be >= 1");
    }
};

/// Frozen copy of theta_SFT; content-hashed so accidental mutation is
/// detectable.
class ReferenceSnapshot {
public:
    explicit ReferenceSnapshot(const ModelParams& params)
        : params_(params), hash_(params_hash(params_)) {}

    const ModelParams& get() const { return params_; }
    uint64_t content_hash() const { return hash_; }
    bool intact() const { return params_hash(params_) == hash_; }

private:
    ModelParams params_;
    uint64_t hash_;
};

inline double implicit_reward(const ModelParams& theta, const ModelParams& ref,
                              std::span<const int> prompt, std::span<const int> response,
                              double beta) {
    return beta * (logprob(theta, prompt, response) - logprob(ref, prompt, response));
}

/// z = r(x,p) - r(x,n).
inline double pair_margin(const ModelParams& theta, const ModelParams& ref,
                          std::span<const int> prompt, std::span<const int> pos,
                          std::span<const int> neg, double beta) {
    return implicit_reward(theta, ref, prompt, pos, beta) -
           implicit_reward(theta, ref, prompt, neg, beta);
}

inline double pair_loss(const ModelParams& theta, const ModelParams& ref,
                        std::span<const int> prompt, std::span<const int> pos,
                        std::span<const int> neg, double beta) {
    const double z = pair_margin(theta, ref, prompt, pos, neg, beta);
    if (!std::isfinite(z)) throw std::runtime_error("pair_loss: non-finite margin");
    return softplus(-z);
}

inline FlatGradient pair_grad(const ModelParams& theta, const ModelParams& ref,
                              std::span<const int> prompt, std::span<const int> pos,
                              std::span<const int> neg, double beta) {
    FlatGradient grad(theta.flat().size(), 0.0);
    if (pos.size() == neg.size() && std::equal(pos.begin(), pos.end(), neg.begin()))
        return grad;  // the two terms cancel algebraically
    const double z = pair_margin(theta, ref, prompt, pos, neg, beta);
    const double coeff = -beta * sigmoid(-z);
    accumulate_grad_logprob(theta, prompt, pos, coeff, grad);
    accumulate_grad_logprob(theta, prompt, neg, -coeff, grad);
    return grad;
}

inline double multi_neg_loss(const ModelParams& theta, const ModelParams& ref,
                             std::span<const int> prompt, std::span<const int> pos,
                             const std::vector<std::vector<int>>& negatives, double beta) {
    if (negatives.empty()) throw std::invalid_argument("multi_neg_loss: no negatives");
    double total = 0.0;
    for (const auto& n : negatives) total += pair_loss(theta, ref, prompt, pos, n, beta);
    return total / static_cast<double>(negatives.size());
}

struct MultiNegEval {
    double loss = 0.0;
    double mean_margin = 0.0;
};

/// Loss plus gradient of the per-prompt mean pair loss, computing the chosen
/// response's logprob gradient once and reusing it across pairs. Exactly the
/// mean of the m pair_grad results.
inline MultiNegEval multi_neg_loss_grad(const ModelParams& theta, const ModelParams& ref,
                                        std::span<const int> prompt, std::span<const int> pos,
                                        const std::vector<std::vector<int>>& negatives,
                                        double beta, double scale, FlatGradient& grad,
                                        const double* ref_lp_pos = nullptr,
                                        const std::vector<double>* ref_lp_negs = nullptr) {
    if (negatives.empty()) throw std::invalid_argument("multi_neg_loss_grad: no negatives");
    const double m = static_cast<double>(negatives.size());
    const double lp_pos = logprob(theta, prompt, pos);
    const double rp = ref_lp_pos ? *ref_lp_pos : logprob(ref, prompt, pos);

    MultiNegEval out;
    double coeff_pos = 0.0;
    for (size_t k = 0; k < negatives.size(); ++k) {
        const double lp_neg = logprob(theta, prompt, negatives[k]);
        const double rn = ref_lp_negs ? (*ref_lp_negs)[k] : logprob(ref, prompt, negatives[k]);
        const double z = beta * ((lp_pos - rp) - (lp_neg - rn));
        if (!std::isfinite(z)) throw std::runtime_error("multi_neg_loss_grad: non-finite margin");
        out.loss += softplus(-z);
        out.mean_margin += z;
        const double c = -beta * sigmoid(-z) / m;  // per-pair weight
        coeff_pos += c;
        accumulate_grad_logprob(theta, prompt, negatives[k], -scale * c, grad);
    }
    accumulate_grad_logprob(theta, prompt, pos, scale * coeff_pos, grad);
    out.loss /= m;
    out.mean_margin /= m;
    return out;
}

struct DpoTraceRow {
    int epoch = 0;
    int step = 0;
    double mean_loss = 0.0;
    double mean_margin = 0.0;
};

struct DpoResult {
    ModelParams params;
    std::vector<DpoTraceRow> trace;
};

namespace detail {

struct TokenizedPreference {
    std::vector<int> prompt;
    std::vector<int> chosen;
    std::vector<std::vector<int>> rejected;
    double ref_lp_chosen = 0.0;
    std::vector<double> ref_lp_rejected;
};

}  // namespace detail

/// DPO alignment against a frozen snapshot of theta_SFT. A batch holds
/// `batch_prompts` prompts; every negative of a prompt lands in the same
/// step, so the prompts-per-batch count is constant regardless of m.
/// Gradients accumulate in record order for bitwise reproducibility.
inline DpoResult dpo_train(const ModelParams& theta_sft,
                           const std::vector<PreferenceRecord>& dataset, const Vocab& vocab,
                           const DpoConfig& cfg) {
    cfg.validate();
    if (dataset.empty()) throw std::invalid_argument("dpo_train: dataset empty");

    const ReferenceSnapshot ref(theta_sft);
    std::vector<detail::TokenizedPreference> data;
    data.reserve(dataset.size());
    for (const auto& rec : dataset) {
        rec.validate();
        detail::TokenizedPreference t;
        t.prompt = vocab.tokenize(rec.prompt);
        t.chosen = vocab.tokenize(rec.chosen);
        for (const auto& n : rec.rejected) t.rejected.push_back(vocab.tokenize(n));
        t.ref_lp_chosen = logprob(ref.get(), t.prompt, t.chosen);
        for (const auto& n : t.rejected)
            t.ref_lp_rejected.push_back(logprob(ref.get(), t.prompt, n));
        data.push_back(std::move(t));
    }

    DpoResult res{theta_sft, {}};
    OptimizerState opt(cfg.optimizer, res.params.flat().size());
    Rng rng(cfg.seed);
    std::vector<size_t> order(data.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    FlatGradient grad(res.params.flat().size(), 0.0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        int step = 0;
        for (size_t begin = 0; begin < order.size();
             begin += static_cast<size_t>(cfg.batch_prompts)) {
            const size_t end =
                std::min(order.size(), begin + static_cast<size_t>(cfg.batch_prompts));
            std::fill(grad.begin(), grad.end(), 0.0);
            const double inv = 1.0 / static_cast<double>(end - begin);
            double loss = 0.0, margin = 0.0;
            for (size_t k = begin; k < end; ++k) {
                const auto& t = data[order[k]];
                const auto ev =
                    multi_neg_loss_grad(res.params, ref.get(), t.prompt, t.chosen, t.rejected,
                                        cfg.beta, inv, grad, &t.ref_lp_chosen, &t.ref_lp_rejected);
                loss += ev.loss;
                margin += ev.mean_margin;
            }
            loss *= inv;
            margin *= inv;
            if (!std::isfinite(loss))
                throw std::runtime_error("dpo_train: non-finite loss at epoch " +
                                         std::to_string(epoch + 1) + ", step " +
                                         std::to_string(step + 1));
            opt.apply(res.params.flat(), grad, cfg.learning_rate);
            res.trace.push_back({epoch + 1, ++step, loss, margin});
        }
    }

    if (!ref.intact())
        throw std::logic_error("dpo_train: reference snapshot mutated during training");
    return res;
}

}  // namespace selfcontrast
