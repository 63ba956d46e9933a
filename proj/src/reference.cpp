#include "latentlab/reference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace latentlab {

double wma_probability(const std::vector<double>& w, const std::vector<int>& preds) {
    if (w.size() != preds.size() || w.empty()) throw ShapeError("weights/predictions size mismatch");
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < w.size(); ++i) {
        if (!(w[i] > 0.0)) throw StateError("expert weights must be positive");
        den += w[i];
        if (preds[i] == 1) num += w[i];
    }
    return num / den;
}

MwuResult mwu_step(const std::vector<double>& w, const std::vector<int>& preds, int y, double gamma) {
    if (!(gamma > 1.0)) throw ConfigError("gamma must be > 1");
    MwuResult r{wma_probability(w, preds), w};
    for (size_t i = 0; i < w.size(); ++i)
        if (preds[i] == y) r.w[i] *= gamma;
    return r;
}

MwuLogResult mwu_step_log(const Vec& lambda, const std::vector<int>& preds, int y, double gamma) {
    if (!(gamma > 1.0)) throw ConfigError("gamma must be > 1");
    if (lambda.size() != static_cast<Eigen::Index>(preds.size()) || preds.empty())
        throw ShapeError("lambda/predictions size mismatch");
    if (!lambda.allFinite()) throw StateError("log-weights must be finite");
    double mx = lambda.maxCoeff();
    double num = 0.0, den = 0.0;
    for (Eigen::Index i = 0; i < lambda.size(); ++i) {
        double e = std::exp(lambda(i) - mx);
        den += e;
        if (preds[i] == 1) num += e;
    }
    MwuLogResult r{num / den, lambda};
    double lg = std::log(gamma);
    for (Eigen::Index i = 0; i < lambda.size(); ++i)
        if (preds[i] == y) r.lambda(i) += lg;
    return r;
}

std::vector<double> exp_weights_mw(const std::vector<double>& w, const std::vector<double>& losses, double eta) {
    if (!(eta > 0.0)) throw ConfigError("eta must be > 0");
    if (w.size() != losses.size()) throw ShapeError("weights/losses size mismatch");
    std::vector<double> out(w.size());
    double z = 0.0;
    for (size_t i = 0; i < w.size(); ++i) {
        out[i] = w[i] * std::exp(-eta * losses[i]);
        z += out[i];
    }
    for (auto& x : out) x /= z;
    return out;
}

QTable q_learning_step(const QTable& Q, int s, int a, double r, int s_next, double alpha, double gamma_disc) {
    if (s < 0 || s >= Q.rows() || s_next < 0 || s_next >= Q.rows()) throw RangeError("state index out of range");
    if (a < 0 || a >= Q.cols()) throw RangeError("action index out of range");
    QTable out = Q;
    double target = r + gamma_disc * Q.row(s_next).maxCoeff();
    out(s, a) = Q(s, a) + alpha * (target - Q(s, a));
    return out;
}

const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::MW: return "MW";
        case Strategy::FTL: return "FTL";
        case Strategy::FPW: return "FPW";
        case Strategy::Majority: return "Majority";
        case Strategy::Random: return "Random";
    }
    return "?";
}

Strategy strategy_from_name(const std::string& s) {
    for (Strategy k : {Strategy::MW, Strategy::FTL, Strategy::FPW, Strategy::Majority, Strategy::Random})
        if (s == strategy_name(k)) return k;
    throw ConfigError("unknown strategy: " + s);
}

static int coin(Rng& rng) { return std::uniform_int_distribution<int>(0, 1)(rng); }

int majority_vote(const std::vector<int>& preds, const std::vector<int>& who, Rng& rng) {
    int ones = 0;
    for (int i : who) ones += preds[i] == 1;
    int zeros = static_cast<int>(who.size()) - ones;
    if (ones != zeros) return ones > zeros ? 1 : 0;
    return coin(rng);
}

BaselineLearner::BaselineLearner(Strategy s, int n, Rng& rng) : strat_(s), n_(n) {
    if (n < 1) throw ConfigError("expert count must be >= 1");
    if (s == Strategy::MW) {
        eta_ = std::uniform_real_distribution<double>(0.05, 0.5)(rng);
        w_.assign(n, 1.0 / n);
    }
    cum_loss_.assign(n, 0);
}

BaselineLearner::BaselineLearner(int n, double eta) : strat_(Strategy::MW), n_(n), eta_(eta) {
    if (n < 1) throw ConfigError("expert count must be >= 1");
    w_.assign(n, 1.0 / n);
    cum_loss_.assign(n, 0);
}

int BaselineLearner::predict(const std::vector<int>& preds, Rng& rng) const {
    if (static_cast<int>(preds.size()) != n_) throw ShapeError("prediction count != expert count");
    std::vector<int> all(n_);
    for (int i = 0; i < n_; ++i) all[i] = i;
    switch (strat_) {
        case Strategy::MW: {
            double one = 0.0, zero = 0.0;
            for (int i = 0; i < n_; ++i) (preds[i] == 1 ? one : zero) += w_[i];
            if (one != zero) return one > zero ? 1 : 0;
            return coin(rng);
        }
        case Strategy::FTL: {
            int best = *std::min_element(cum_loss_.begin(), cum_loss_.end());
            std::vector<int> leaders;
            for (int i = 0; i < n_; ++i)
                if (cum_loss_[i] == best) leaders.push_back(i);
            int pick = leaders[std::uniform_int_distribution<size_t>(0, leaders.size() - 1)(rng)];
            return preds[pick];
        }
        case Strategy::FPW: {
            std::vector<int> winners;
            for (int i = 0; i < static_cast<int>(last_correct_.size()); ++i)
                if (last_correct_[i]) winners.push_back(i);
            if (!winners.empty()) {
                int ones = 0;
                for (int i : winners) ones += preds[i] == 1;
                int zeros = static_cast<int>(winners.size()) - ones;
                if (ones != zeros) return ones > zeros ? 1 : 0;
            }
            return majority_vote(preds, all, rng);
        }
        case Strategy::Majority:
            return majority_vote(preds, all, rng);
        case Strategy::Random:
            return coin(rng);
    }
    return 0;
}

void BaselineLearner::update(const std::vector<int>& preds, int y) {
    std::vector<int> loss(n_);
    for (int i = 0; i < n_; ++i) loss[i] = preds[i] != y;
    for (int i = 0; i < n_; ++i) cum_loss_[i] += loss[i];
    last_correct_.assign(n_, 0);
    for (int i = 0; i < n_; ++i) last_correct_[i] = !loss[i];
    if (strat_ == Strategy::MW) w_ = exp_weights_mw(w_, std::vector<double>(loss.begin(), loss.end()), eta_);
}

static Vec softmax(const Vec& x) {
    Vec e = (x.array() - x.maxCoeff()).exp();
    return e / e.sum();
}

MixtureLoss mixture_logloss(const Vec& lambda, const Vec& r) {
    if (lambda.size() != r.size() || r.size() == 0) throw ShapeError("lambda/r size mismatch");
    MixtureLoss out;
    Vec rr = r;
    for (Eigen::Index i = 0; i < rr.size(); ++i) {
        if (!(rr(i) <= 1.0) || std::isnan(rr(i))) throw RangeError("likelihoods must lie in (0,1]");
        if (rr(i) < 1e-12) {
            rr(i) = 1e-12;
            out.clamped = true;
        }
    }
    Vec w = softmax(lambda);
    double mix = w.dot(rr);
    if (!(mix > 0.0)) throw StateError("mixture likelihood is zero");
    out.loss = -std::log(mix);
    Vec wplus = (w.array() * rr.array()) / mix;
    out.grad = w - wplus;
    return out;
}

Vec bayes_posterior_update(const Vec& w, const Vec& r) {
    if (w.size() != r.size()) throw ShapeError("w/r size mismatch");
    Vec num = w.array() * r.array();
    double z = num.sum();
    if (!(z > 0.0)) throw StateError("posterior has zero total mass");
    return num / z;
}

LoglossParts logloss_decomposition(const Vec& P, const Vec& Q) {
    if (P.size() != Q.size()) throw ShapeError("distribution size mismatch");
    LoglossParts out{0.0, 0.0, 0.0};
    for (Eigen::Index y = 0; y < P.size(); ++y) {
        if (P(y) <= 0.0) continue;
        if (!(Q(y) > 0.0)) throw RangeError("Q must be positive on the support of P");
        out.entropy -= P(y) * std::log(P(y));
        out.kl += P(y) * std::log(P(y) / Q(y));
        out.expected_logloss -= P(y) * std::log(Q(y));
    }
    if (std::abs(out.expected_logloss - (out.entropy + out.kl)) > 1e-12)
        throw StateError("log-loss decomposition identity violated");
    return out;
}

int argmax_lowest(const Vec& v) {
    if (v.size() == 0) throw std::invalid_argument("argmax of empty vector");
    int best = 0;
    for (int i = 1; i < v.size(); ++i)
        if (v(i) > v(best)) best = i;
    return best;
}


}  // namespace latentlab
