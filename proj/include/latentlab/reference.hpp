#pragma once

#include <random>
#include <string>
#include <vector>

#include "latentlab/embedding.hpp"

namespace latentlab {

using Rng = std::mt19937_64;
using QTable = Mat;  // |S| x |A|, 0-based indices

// Index of the largest entry; ties go to the lowest index.
int argmax_lowest(const Vec& v);

// ---- weighted majority / multiplicative weights ----

// P(predict 1) = sum of weights on experts predicting 1 over total weight.
double wma_probability(const std::vector<double>& w, const std::vector<int>& preds);

struct MwuResult {
    double p_hat;
    std::vector<double> w;
};
MwuResult mwu_step(const std::vector<double>& w, const std::vector<int>& preds, int y, double gamma);

// Same rule carried in log space (lambda_i = log w_i); used when weights would overflow.
struct MwuLogResult {
    double p_hat;
    Vec lambda;
};
MwuLogResult mwu_step_log(const Vec& lambda, const std::vector<int>& preds, int y, double gamma);

// w_i e^{-eta l_i}, renormalized. Losses may be any real values (e.g. -log r_i).
std::vector<double> exp_weights_mw(const std::vector<double>& w, const std::vector<double>& losses, double eta);

// ---- Q-learning ----

QTable q_learning_step(const QTable& Q, int s, int a, double r, int s_next, double alpha, double gamma_disc);

// ---- baselines ----

enum class Strategy { MW, FTL, FPW, Majority, Random };
const char* strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& s);

// Per-instance learner state. predict() may consume randomness for ties.
class BaselineLearner {
public:
    // MW draws eta ~ U[0.05, 0.5] from rng at construction.
    BaselineLearner(Strategy s, int n, Rng& rng);
    // MW with a given eta and uniform weights.
    BaselineLearner(int n, double eta);

    int predict(const std::vector<int>& preds, Rng& rng) const;
    void update(const std::vector<int>& preds, int y);

    Strategy strategy() const { return strat_; }
    double eta() const { return eta_; }
    const std::vector<double>& weights() const { return w_; }
    void set_weights(std::vector<double> w) { w_ = std::move(w); }

private:
    Strategy strat_;
    int n_;
    double eta_ = 0.0;
    std::vector<double> w_;       // MW
    std::vector<int> cum_loss_;   // FTL
    std::vector<int> last_correct_;  // FPW, empty before round 1
};

// Uniform majority over the listed experts' predictions; coin on ties.
int majority_vote(const std::vector<int>& preds, const std::vector<int>& who, Rng& rng);

// ---- log-loss identities ----

struct MixtureLoss {
    double loss;
    Vec grad;
    bool clamped = false;
};
// L = -log sum softmax(lambda)_i r_i, grad = w - w+. r_i < 1e-12 is clamped and flagged.
MixtureLoss mixture_logloss(const Vec& lambda, const Vec& r);

Vec bayes_posterior_update(const Vec& w, const Vec& r);

struct LoglossParts {
    double entropy;
    double kl;
    double expected_logloss;
};
LoglossParts logloss_decomposition(const Vec& P, const Vec& Q);

}  // namespace latentlab
