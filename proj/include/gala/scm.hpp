#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

namespace gala {

constexpr double kProbTol = 1e-12;

enum class BitKind { invariant, spurious };

// One data-generating environment of the two-piece model: alpha corrupts the
// label-causing bit, beta the environment-controlled bit.
struct EnvParams {
    double alpha = 0.0;
    double beta = 0.0;
    int num_classes = 3;

    void validate() const {
        if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("alpha outside [0,1]");
        if (beta < 0.0 || beta > 1.0) throw std::invalid_argument("beta outside [0,1]");
        if (num_classes != 2 && num_classes != 3) throw std::invalid_argument("num_classes must be 2 or 3");
    }
};

struct EnvironmentSet {
    std::vector<EnvParams> envs;
    std::vector<double> weights;  // empty means uniform

    void validate() const {
        if (envs.empty()) throw std::invalid_argument("empty environment set");
        for (const auto& e : envs) {
            e.validate();
            if (e.num_classes != envs.front().num_classes)
                throw std::invalid_argument("environments disagree on num_classes");
        }
        if (!weights.empty()) {
            if (weights.size() != envs.size()) throw std::invalid_argument("weights/envs size mismatch");
            double total = 0.0;
            for (double w : weights) {
                if (w < 0.0) throw std::invalid_argument("negative mixture weight");
                total += w;
            }
            if (std::abs(total - 1.0) > kProbTol) throw std::invalid_argument("weights must sum to 1");
        }
    }

    double weight(std::size_t i) const {
        return weights.empty() ? 1.0 / static_cast<double>(envs.size()) : weights[i];
    }
};

struct BitRecord {
    int y = 0;
    int c_bit = 0;
    int s_bit = 0;
};

// Exact joint distribution over (label, invariant bit, spurious bit).
struct JointTable {
    int num_classes = 3;
    std::vector<double> probs;  // indexed (y * k + c) * k + s

    static JointTable zeros(int k) {
        JointTable t;
        t.num_classes = k;
        t.probs.assign(static_cast<std::size_t>(k) * k * k, 0.0);
        return t;
    }

    double& at(int y, int c, int s) {
        return probs[static_cast<std::size_t>((y * num_classes + c) * num_classes + s)];
    }
    double at(int y, int c, int s) const {
        return probs[static_cast<std::size_t>((y * num_classes + c) * num_classes + s)];
    }

    double total_mass() const {
        double m = 0.0;
        for (double p : probs) m += p;
        return m;
    }
};

// P(bit = Y). Binary flip with prob alpha; 3-class uniform redraw with prob
// alpha (the redraw hits Y with probability 1/3).
inline double bit_corruption_prob(const EnvParams& env, BitKind which) {
    env.validate();
    const double a = (which == BitKind::invariant) ? env.alpha : env.beta;
    if (env.num_classes == 2) return 1.0 - a;
    return 1.0 - a + a / 3.0;
}

// Inverse of bit_corruption_prob: corruption parameter giving P(bit=Y)=strength.
inline double strength_to_corruption(double strength, int num_classes) {
    if (num_classes == 2) return 1.0 - strength;
    return 1.5 * (1.0 - strength);
}

inline double corruption_to_strength(double param, int num_classes) {
    if (num_classes == 2) return 1.0 - param;
    return 1.0 - 2.0 * param / 3.0;
}

inline JointTable exact_joint(const EnvParams& env) {
    env.validate();
    const int k = env.num_classes;
    const double pc = bit_corruption_prob(env, BitKind::invariant);
    const double ps = bit_corruption_prob(env, BitKind::spurious);
    JointTable t = JointTable::zeros(k);
    for (int y = 0; y < k; ++y) {
        for (int c = 0; c < k; ++c) {
            const double wc = (c == y) ? pc : (1.0 - pc) / (k - 1);
            for (int s = 0; s < k; ++s) {
                const double ws = (s == y) ? ps : (1.0 - ps) / (k - 1);
                t.at(y, c, s) = wc * ws / k;
            }
        }
    }
    return t;
}

// Collapses a set of environments sharing the invariant parameter into the
// single mixed environment the learner actually sees.
inline EnvParams mix_environments(const EnvironmentSet& set) {
    set.validate();
    const double alpha = set.envs.front().alpha;
    double beta = 0.0;
    for (std::size_t i = 0; i < set.envs.size(); ++i) {
        if (std::abs(set.envs[i].alpha - alpha) > kProbTol)
            throw std::invalid_argument("environments do not share the invariant parameter");
        beta += set.weight(i) * set.envs[i].beta;
    }
    return EnvParams{alpha, beta, set.envs.front().num_classes};
}

// Entrywise mixture of per-environment joints (no shared-alpha requirement;
// used for twin-environment indistinguishability checks).
inline JointTable mixture_joint(const EnvironmentSet& set) {
    set.validate();
    JointTable out = JointTable::zeros(set.envs.front().num_classes);
    for (std::size_t i = 0; i < set.envs.size(); ++i) {
        const JointTable t = exact_joint(set.envs[i]);
        for (std::size_t j = 0; j < out.probs.size(); ++j) out.probs[j] += set.weight(i) * t.probs[j];
    }
    return out;
}

// (P(c_bit=Y), P(s_bit=Y)) — the correlation strengths labelling datasets.
inline std::pair<double, double> marginal_strengths(const JointTable& t) {
    const int k = t.num_classes;
    double inv = 0.0, spu = 0.0;
    for (int y = 0; y < k; ++y)
        for (int c = 0; c < k; ++c)
            for (int s = 0; s < k; ++s) {
                if (c == y) inv += t.at(y, c, s);
                if (s == y) spu += t.at(y, c, s);
            }
    return {inv, spu};
}

}  // namespace gala
