#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "samora/nn.hpp"

namespace samora {

// Eq. 11: linear warmup to the base rate over WP steps, then linear decay to
// zero across MI iterations, clamped at zero. WP = 0 starts directly on the
// decay branch.
inline double lr_at(double base_lr, long long step, long long warmup_steps, long long max_iters) {
    if (max_iters <= 0) throw std::invalid_argument("samora: lr schedule needs max_iters > 0");
    if (step < 0) throw std::invalid_argument("samora: lr schedule needs step >= 0");
    double lr;
    if (warmup_steps > 0 && step <= warmup_steps) {
        lr = static_cast<double>(step) * base_lr / static_cast<double>(warmup_steps);
    } else {
        lr = base_lr * (1.0 - static_cast<double>(step - warmup_steps) / static_cast<double>(max_iters));
    }
    return lr > 0.0 ? lr : 0.0;
}

template <class T>
class Optimizer {
public:
    explicit Optimizer(ParamList<T> params) : params_(std::move(params)) {
        for (auto& p : params_)
            if (!p.tensor.requires_grad())
                throw std::invalid_argument("samora: optimizer handed frozen parameter " + p.name);
    }
    virtual ~Optimizer() = default;

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    virtual void step(double lr) = 0;

    const ParamList<T>& params() const { return params_; }

protected:
    ParamList<T> params_;
};

template <class T>
class SgdMomentum : public Optimizer<T> {
public:
    SgdMomentum(ParamList<T> params, double momentum = 0.9, double weight_decay = 0.0)
        : Optimizer<T>(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
        for (auto& p : this->params_) velocity_.emplace_back(p.tensor.numel(), T(0));
    }

    void step(double lr) override {
        for (std::size_t i = 0; i < this->params_.size(); ++i) {
            auto& t = this->params_[i].tensor;
            if (t.grad().empty()) continue;
            auto& vel = velocity_[i];
            for (std::size_t j = 0; j < t.numel(); ++j) {
                const double g = static_cast<double>(t.grad()[j]) + weight_decay_ * static_cast<double>(t.data()[j]);
                vel[j] = static_cast<T>(momentum_ * static_cast<double>(vel[j]) + g);
                t.data()[j] -= static_cast<T>(lr * static_cast<double>(vel[j]));
            }
        }
    }

private:
    double momentum_, weight_decay_;
    std::vector<std::vector<T>> velocity_;
};

template <class T>
class AdamW : public Optimizer<T> {
public:
    AdamW(ParamList<T> params, double beta1 = 0.9, double beta2 = 0.999, double weight_decay = 0.0,
          double eps = 1e-8)
        : Optimizer<T>(std::move(params)), beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay), eps_(eps) {
        for (auto& p : this->params_) {
            m_.emplace_back(p.tensor.numel(), 0.0);
            v_.emplace_back(p.tensor.numel(), 0.0);
        }
    }

    void step(double lr) override {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t i = 0; i < this->params_.size(); ++i) {
            auto& t = this->params_[i].tensor;
            if (t.grad().empty()) continue;
            for (std::size_t j = 0; j < t.numel(); ++j) {
                const double g = static_cast<double>(t.grad()[j]);
                m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
                v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
                const double mhat = m_[i][j] / bc1;
                const double vhat = v_[i][j] / bc2;
                double x = static_cast<double>(t.data()[j]);
                x -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * x);
                t.data()[j] = static_cast<T>(x);
            }
        }
    }

private:
    double beta1_, beta2_, weight_decay_, eps_;
    long long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// Layerwise trust-ratio SGD (SimCLRv2's large-batch optimizer, here at small
// batch for parity with the stage-1 config table).
template <class T>
class Lars : public Optimizer<T> {
public:
    Lars(ParamList<T> params, double momentum = 0.9, double weight_decay = 0.0, double trust = 0.001)
        : Optimizer<T>(std::move(params)), momentum_(momentum), weight_decay_(weight_decay), trust_(trust) {
        for (auto& p : this->params_) velocity_.emplace_back(p.tensor.numel(), T(0));
    }

    void step(double lr) override {
        for (std::size_t i = 0; i < this->params_.size(); ++i) {
            auto& t = this->params_[i].tensor;
            if (t.grad().empty()) continue;
            double wn = 0.0, gn = 0.0;
            for (std::size_t j = 0; j < t.numel(); ++j) {
                const double w = static_cast<double>(t.data()[j]);
                const double g = static_cast<double>(t.grad()[j]) + weight_decay_ * w;
                wn += w * w;
                gn += g * g;
            }
            wn = std::sqrt(wn);
            gn = std::sqrt(gn);
            const double ratio = (wn > 0.0 && gn > 0.0) ? trust_ * wn / gn : 1.0;
            auto& vel = velocity_[i];
            for (std::size_t j = 0; j < t.numel(); ++j) {
                const double g = static_cast<double>(t.grad()[j]) + weight_decay_ * static_cast<double>(t.data()[j]);
                vel[j] = static_cast<T>(momentum_ * static_cast<double>(vel[j]) + ratio * g);
                t.data()[j] -= static_cast<T>(lr * static_cast<double>(vel[j]));
            }
        }
    }

private:
    double momentum_, weight_decay_, trust_;
    std::vector<std::vector<T>> velocity_;
};

template <class T>
std::unique_ptr<Optimizer<T>> make_optimizer(const std::string& name, ParamList<T> params, double weight_decay,
                                             double beta1 = 0.9, double beta2 = 0.999) {
    if (name == "adamw") return std::make_unique<AdamW<T>>(std::move(params), beta1, beta2, weight_decay);
    if (name == "sgd") return std::make_unique<SgdMomentum<T>>(std::move(params), 0.9, weight_decay);
    if (name == "lars") return std::make_unique<Lars<T>>(std::move(params), 0.9, weight_decay);
    throw std::invalid_argument("samora: unknown optimizer '" + name + "'");
}

}  // namespace samora
