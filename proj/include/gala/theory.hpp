#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gala/scm.hpp"

namespace gala {

// Candidate featurizer outputs at the bit level.
enum class Selector { invariant, spurious, both };

enum class SchemeKind { ciga_intraclass, gala_cross_partition };
enum class PartitionRule { assistant_spurious_bit, assistant_invariant_bit };

struct SamplingScheme {
    SchemeKind kind = SchemeKind::ciga_intraclass;
    PartitionRule partition_rule = PartitionRule::assistant_spurious_bit;
};

inline const char* selector_name(Selector s) {
    switch (s) {
        case Selector::invariant: return "invariant";
        case Selector::spurious: return "spurious";
        default: return "both";
    }
}

// Environment generation with the reversed featurizer (Ĝc=G_s, Ĝs=G_c):
// the invariant correlation is destroyed, the spurious one preserved.
inline EnvParams swap_augmentation(const EnvParams& mixed) {
    mixed.validate();
    const double uninformative =
        strength_to_corruption(1.0 / mixed.num_classes, mixed.num_classes);
    return EnvParams{uninformative, mixed.beta, mixed.num_classes};
}

// Augmentation with the correct featurizer: spurious correlation uniformized.
inline EnvParams faithful_augmentation(const EnvParams& mixed) {
    mixed.validate();
    const double uninformative =
        strength_to_corruption(1.0 / mixed.num_classes, mixed.num_classes);
    return EnvParams{mixed.alpha, uninformative, mixed.num_classes};
}

// Indistinguishable twin of a two-environment set: same mixed joint, with the
// invariant/spurious roles exchanged.
inline EnvironmentSet construct_twin(const EnvironmentSet& set) {
    set.validate();
    if (set.envs.size() != 2) throw std::invalid_argument("twin construction needs exactly 2 environments");
    const double alpha = set.envs[0].alpha;
    if (std::abs(set.envs[1].alpha - alpha) > kProbTol)
        throw std::invalid_argument("environments do not share the invariant parameter");
    const double beta1 = set.envs[0].beta, beta2 = set.envs[1].beta;
    if (std::abs(beta1 - beta2) <= kProbTol)
        throw std::invalid_argument("degenerate twin: spurious parameters coincide");
    const double alpha_prime = (beta1 + beta2) / 2.0;
    double delta = std::abs(beta2 - beta1) / 2.0;
    // beta' = alpha -/+ delta must stay in [0,1]
    const double delta_max = std::min(alpha, 1.0 - alpha);
    if (delta > delta_max) delta = delta_max;
    if (delta <= kProbTol) throw std::invalid_argument("no positive twin spread fits in [0,1]");
    const int k = set.envs[0].num_classes;
    EnvironmentSet twin;
    twin.envs = {EnvParams{alpha - delta, alpha_prime, k}, EnvParams{alpha + delta, alpha_prime, k}};
    return twin;
}

namespace detail {

// P(bit = v | Y = y) for a bit with co-occurrence strength `strength`.
inline double bit_prob(double strength, int v, int y, int k) {
    return (v == y) ? strength : (1.0 - strength) / (k - 1);
}

inline double selector_similarity(Selector sel, int ca, int sa, int cb, int sb) {
    switch (sel) {
        case Selector::invariant: return ca == cb ? 1.0 : 0.0;
        case Selector::spurious: return sa == sb ? 1.0 : 0.0;
        default:
            // concat of the two one-hots, L2-normalized
            return (ca == cb ? 0.5 : 0.0) + (sa == sb ? 0.5 : 0.0);
    }
}

}  // namespace detail

// Exact population value of the contrastive estimator in the M->infinity
// limit (the scheme-independent -log M constant is dropped):
//   E_{(anchor,pos)}[ phi ] - E_anchor[ log E_neg[ exp(phi) ] ]
// Embeddings are one-hot vectors of the selected bit(s); negatives are drawn
// from the other-label population of the full mixture.
inline double population_contrastive(const EnvironmentSet& set, Selector sel,
                                     const SamplingScheme& scheme) {
    const EnvParams mixed = mix_environments(set);
    const int k = mixed.num_classes;
    const double a = bit_corruption_prob(mixed, BitKind::invariant);
    const double b = bit_corruption_prob(mixed, BitKind::spurious);

    // conditional P(c,s | y, cell); cell -1 = unconditioned
    auto cell_dist = [&](int y, int cell) {
        std::vector<double> w(static_cast<std::size_t>(k) * k, 0.0);
        double z = 0.0;
        for (int c = 0; c < k; ++c)
            for (int s = 0; s < k; ++s) {
                const int proxy = (scheme.partition_rule == PartitionRule::assistant_invariant_bit) ? c : s;
                if (cell == 0 && proxy != y) continue;  // correct cell
                if (cell == 1 && proxy == y) continue;  // incorrect cell
                const double p = detail::bit_prob(a, c, y, k) * detail::bit_prob(b, s, y, k);
                w[static_cast<std::size_t>(c) * k + s] = p;
                z += p;
            }
        if (z <= 0.0) throw std::invalid_argument("empty partition cell in gala sampling");
        for (double& x : w) x /= z;
        return w;
    };

    double pos_term = 0.0, neg_term = 0.0;
    for (int y = 0; y < k; ++y) {
        const bool cross = scheme.kind == SchemeKind::gala_cross_partition;
        const std::vector<double> anchors = cell_dist(y, cross ? 1 : -1);
        const std::vector<double> positives = cell_dist(y, cross ? 0 : -1);
        for (int ca = 0; ca < k; ++ca)
            for (int sa = 0; sa < k; ++sa) {
                const double wa = anchors[static_cast<std::size_t>(ca) * k + sa];
                if (wa == 0.0) continue;
                double e_pos = 0.0;
                for (int cp = 0; cp < k; ++cp)
                    for (int sp = 0; sp < k; ++sp)
                        e_pos += positives[static_cast<std::size_t>(cp) * k + sp] *
                                 detail::selector_similarity(sel, ca, sa, cp, sp);
                double e_neg = 0.0;
                for (int yn = 0; yn < k; ++yn) {
                    if (yn == y) continue;
                    for (int cn = 0; cn < k; ++cn)
                        for (int sn = 0; sn < k; ++sn)
                            e_neg += detail::bit_prob(a, cn, yn, k) * detail::bit_prob(b, sn, yn, k) /
                                     (k - 1) * std::exp(detail::selector_similarity(sel, ca, sa, cn, sn));
                }
                pos_term += wa * e_pos / k;
                neg_term += wa * std::log(e_neg) / k;
            }
    }
    return pos_term - neg_term;
}

inline EnvironmentSet set_from_strengths(double a, double b, int k = 3) {
    EnvironmentSet set;
    set.envs = {EnvParams{strength_to_corruption(a, k), strength_to_corruption(b, k), k}};
    return set;
}

struct ScanPoint {
    double a = 0.0, b = 0.0;
    // per-selector values: [invariant, spurious, both]
    double gala_value[3] = {0, 0, 0};
    double ciga_value[3] = {0, 0, 0};
    Selector gala_winner = Selector::invariant;
    Selector ciga_winner = Selector::invariant;
    bool gala_tie = false;
    bool ciga_tie = false;
    double gala_margin = 0.0;  // winner minus runner-up over {invariant, spurious}
    double ciga_margin = 0.0;
};

struct ScanReport {
    std::vector<ScanPoint> points;
    bool gala_identifies_invariant = true;  // at every a != b point
    bool ciga_prefers_dominant = true;      // spurious whenever b > a, invariant whenever a > b
    bool ties_only_on_diagonal = true;
};

// The winner is taken over {invariant, spurious}: the |G_c| = s_c budget of
// the featurizer excludes the 'both' selector, whose value is still recorded.
inline ScanReport identifiability_scan(const std::vector<std::pair<double, double>>& grid, int k = 3) {
    constexpr double kTieTol = 1e-12;
    ScanReport report;
    for (const auto& [a, b] : grid) {
        if (a <= 1.0 / k || a > 1.0 || b <= 1.0 / k || b > 1.0)
            throw std::invalid_argument("grid strengths must lie in (1/num_classes, 1]");
        const EnvironmentSet set = set_from_strengths(a, b, k);
        ScanPoint pt;
        pt.a = a;
        pt.b = b;
        const SamplingScheme gala{SchemeKind::gala_cross_partition, PartitionRule::assistant_spurious_bit};
        const SamplingScheme ciga{SchemeKind::ciga_intraclass, PartitionRule::assistant_spurious_bit};
        for (int s = 0; s < 3; ++s) {
            pt.gala_value[s] = population_contrastive(set, static_cast<Selector>(s), gala);
            pt.ciga_value[s] = population_contrastive(set, static_cast<Selector>(s), ciga);
        }
        auto decide = [&](const double* v, Selector& winner, bool& tie, double& margin) {
            margin = v[0] - v[1];
            tie = std::abs(margin) <= kTieTol;
            winner = margin >= 0.0 ? Selector::invariant : Selector::spurious;
        };
        decide(pt.gala_value, pt.gala_winner, pt.gala_tie, pt.gala_margin);
        decide(pt.ciga_value, pt.ciga_winner, pt.ciga_tie, pt.ciga_margin);

        const bool diagonal = std::abs(a - b) <= kTieTol;
        if (!diagonal && (pt.gala_tie || pt.gala_winner != Selector::invariant))
            report.gala_identifies_invariant = false;
        if (b > a + kTieTol && (pt.ciga_tie || pt.ciga_winner != Selector::spurious))
            report.ciga_prefers_dominant = false;
        if (a > b + kTieTol && (pt.ciga_tie || pt.ciga_winner != Selector::invariant))
            report.ciga_prefers_dominant = false;
        if (diagonal && !pt.ciga_tie) report.ciga_prefers_dominant = false;
        if (!diagonal && (pt.ciga_tie || pt.gala_tie)) report.ties_only_on_diagonal = false;
        report.points.push_back(pt);
    }
    return report;
}

}  // namespace gala
