#pragma once

#include <cmath>
#include <stdexcept>

#include "gala/model.hpp"

namespace gala {

// Adam with bias correction; no weight decay.
struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int t = 0;
    ParamStore m, v;

    void step(ParamStore& params, const ParamStore& grads) {
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, t);
        const double bc2 = 1.0 - std::pow(beta2, t);
        for (auto& [name, w] : params.values) {
            auto git = grads.values.find(name);
            if (git == grads.values.end()) continue;  // parameter unused this step
            const Mat& g = git->second;
            Mat& mi = m.values.try_emplace(name, Mat::Zero(w.rows(), w.cols())).first->second;
            Mat& vi = v.values.try_emplace(name, Mat::Zero(w.rows(), w.cols())).first->second;
            mi = beta1 * mi + (1.0 - beta1) * g;
            vi = beta2 * vi + (1.0 - beta2) * g.cwiseProduct(g);
            w.array() -= lr * (mi.array() / bc1) /
                         ((vi.array() / bc2).sqrt() + eps);
        }
    }
};

}  // namespace gala
