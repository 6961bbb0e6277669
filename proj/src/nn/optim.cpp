#include "gsec/nn/optim.hpp"

#include <cmath>

namespace gsec::nn {

template <typename T>
Adam<T>::Adam(ParamList<T> params, AdamOptions options) : params_(std::move(params)), options_(options) {
    if (!(options_.lr > 0.0) || options_.beta1 < 0.0 || options_.beta1 >= 1.0 || options_.beta2 < 0.0 ||
        options_.beta2 >= 1.0 || options_.eps <= 0.0 || options_.weight_decay < 0.0) {
        throw InvalidParam("Adam: invalid hyperparameters");
    }
    for (const auto* p : params_) {
        m_.emplace_back(p->value.size(), 0.0);
        v_.emplace_back(p->value.size(), 0.0);
    }
}

template <typename T>
void Adam<T>::set_lr(double lr) {
    if (!(lr > 0.0)) {
        throw InvalidParam("Adam: learning rate must be > 0");
    }
    options_.lr = lr;
}

template <typename T>
void Adam<T>::step() {
    ++steps_;
    const double b1 = options_.beta1;
    const double b2 = options_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    const double lr = options_.lr;
    const double decay = lr * options_.weight_decay;
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& p = *params_[k];
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = static_cast<double>(p.grad[i]);
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            const double m_hat = m[i] / c1;
            const double v_hat = v[i] / c2;
            const double theta = static_cast<double>(p.value[i]);
            p.value[i] = static_cast<T>(theta - decay * theta - lr * m_hat / (std::sqrt(v_hat) + options_.eps));
        }
    }
}

template <typename T>
void Adam<T>::zero_grad() {
    for (auto* p : params_) {
        p->zero_grad();
    }
}

template class Adam<float>;
template class Adam<double>;

PlateauScheduler::PlateauScheduler(PlateauOptions options) : options_(options) {
    if (!(options_.factor > 0.0 && options_.factor < 1.0) || options_.patience < 1 || options_.threshold < 0.0) {
        throw InvalidParam("PlateauScheduler: invalid options");
    }
}

bool PlateauScheduler::observe(double loss, double& lr) {
    if (loss < best_ - options_.threshold * std::abs(best_) || std::isinf(best_)) {
        best_ = loss;
        bad_epochs_ = 0;
        return false;
    }
    if (++bad_epochs_ < options_.patience) {
        return false;
    }
    lr *= options_.factor;
    bad_epochs_ = 0;
    ++reductions_;
    return true;
}

}  // namespace gsec::nn
