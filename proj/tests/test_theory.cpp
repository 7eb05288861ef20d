#include <catch2/catch_amalgamated.hpp>

#include "gala/theory.hpp"

using namespace gala;

TEST_CASE("swap augmentation uniformizes the invariant piece") {
    const EnvParams out = swap_augmentation({0.25, 0.15, 2});
    CHECK(out.alpha == Catch::Approx(0.5).margin(1e-15));
    CHECK(out.beta == Catch::Approx(0.15).margin(1e-15));
    CHECK(bit_corruption_prob(out, BitKind::invariant) == Catch::Approx(0.5).margin(1e-12));

    const EnvParams out3 = swap_augmentation({0.3, 0.6, 3});
    CHECK(bit_corruption_prob(out3, BitKind::invariant) == Catch::Approx(1.0 / 3.0).margin(1e-12));
    CHECK(out3.beta == Catch::Approx(0.6).margin(1e-15));
}

TEST_CASE("faithful augmentation uniformizes the spurious piece") {
    const EnvParams out = faithful_augmentation({0.25, 0.15, 2});
    CHECK(out.alpha == Catch::Approx(0.25).margin(1e-15));
    CHECK(bit_corruption_prob(out, BitKind::spurious) == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("twin environments reproduce the mixed joint") {
    EnvironmentSet set;
    set.envs = {{0.2, 0.1, 2}, {0.2, 0.3, 2}};
    const EnvironmentSet twin = construct_twin(set);
    REQUIRE(twin.envs.size() == 2);
    CHECK(twin.envs[0].alpha == Catch::Approx(0.1).margin(1e-15));
    CHECK(twin.envs[0].beta == Catch::Approx(0.2).margin(1e-15));
    CHECK(twin.envs[1].alpha == Catch::Approx(0.3).margin(1e-15));
    CHECK(twin.envs[1].beta == Catch::Approx(0.2).margin(1e-15));

    const JointTable original = mixture_joint(set);
    const JointTable twinned = mixture_joint(twin);
    const JointTable mixed = exact_joint({0.2, 0.2, 2});
    for (std::size_t i = 0; i < original.probs.size(); ++i) {
        CHECK(twinned.probs[i] == Catch::Approx(original.probs[i]).margin(1e-12));
        CHECK(twinned.probs[i] == Catch::Approx(mixed.probs[i]).margin(1e-12));
    }
}

TEST_CASE("twin construction rejects degenerate sets") {
    EnvironmentSet same_beta;
    same_beta.envs = {{0.2, 0.1, 2}, {0.2, 0.1, 2}};
    CHECK_THROWS_AS(construct_twin(same_beta), std::invalid_argument);

    EnvironmentSet three;
    three.envs = {{0.2, 0.1, 2}, {0.2, 0.2, 2}, {0.2, 0.3, 2}};
    CHECK_THROWS_AS(construct_twin(three), std::invalid_argument);

    EnvironmentSet mismatched_alpha;
    mismatched_alpha.envs = {{0.2, 0.1, 2}, {0.4, 0.3, 2}};
    CHECK_THROWS_AS(construct_twin(mismatched_alpha), std::invalid_argument);
}

TEST_CASE("twin spread clips at the probability boundary") {
    EnvironmentSet set;
    set.envs = {{0.1, 0.2, 2}, {0.1, 0.8, 2}};
    const EnvironmentSet twin = construct_twin(set);
    for (const auto& env : twin.envs) {
        CHECK(env.alpha >= 0.0);
        CHECK(env.alpha <= 1.0);
        CHECK(env.beta == Catch::Approx(0.5).margin(1e-15));
    }
    // mixed joint still matches
    const JointTable a = mixture_joint(set), b = mixture_joint(twin);
    for (std::size_t i = 0; i < a.probs.size(); ++i)
        CHECK(a.probs[i] == Catch::Approx(b.probs[i]).margin(1e-12));
}

namespace {

double pop(double a, double b, Selector sel, SchemeKind kind) {
    const SamplingScheme scheme{kind, PartitionRule::assistant_spurious_bit};
    return population_contrastive(set_from_strengths(a, b), sel, scheme);
}

}  // namespace

TEST_CASE("population contrastive, frozen reference values") {
    // obtained from an independent enumeration of the (y,c,s) lattice
    CHECK(pop(0.8, 0.9, Selector::invariant, SchemeKind::gala_cross_partition) ==
          Catch::Approx(0.418587746897).margin(1e-9));
    CHECK(pop(0.8, 0.9, Selector::spurious, SchemeKind::gala_cross_partition) ==
          Catch::Approx(-0.596737524238).margin(1e-9));
    CHECK(pop(0.7, 0.9, Selector::invariant, SchemeKind::gala_cross_partition) ==
          Catch::Approx(0.209994011431).margin(1e-9));
    CHECK(pop(0.8, 0.6, Selector::spurious, SchemeKind::gala_cross_partition) ==
          Catch::Approx(-0.523137163612).margin(1e-9));
    CHECK(pop(0.8, 0.6, Selector::invariant, SchemeKind::ciga_intraclass) ==
          Catch::Approx(0.418587746897).margin(1e-9));
    CHECK(pop(0.8, 0.6, Selector::spurious, SchemeKind::ciga_intraclass) ==
          Catch::Approx(0.053508417083).margin(1e-9));
    CHECK(pop(0.8, 0.9, Selector::spurious, SchemeKind::ciga_intraclass) ==
          Catch::Approx(0.681146345985).margin(1e-9));
}

TEST_CASE("population contrastive closed form at perfect invariant strength") {
    // a=1: every graph shows c=Y, so anchor and positive always match under
    // the invariant selector (phi=1) while negatives never do (e^0=1) — the
    // value is exactly 1 for any b with both partition cells nonempty.
    for (double b : {0.5, 0.7, 0.9}) {
        CHECK(pop(1.0, b, Selector::invariant, SchemeKind::gala_cross_partition) ==
              Catch::Approx(1.0).margin(1e-12));
        CHECK(pop(1.0, b, Selector::invariant, SchemeKind::ciga_intraclass) ==
              Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("population contrastive throws when a partition cell is empty") {
    const SamplingScheme gala{SchemeKind::gala_cross_partition, PartitionRule::assistant_spurious_bit};
    // b=1 => the spurious bit is always correct => no anchors
    CHECK_THROWS_AS(population_contrastive(set_from_strengths(0.8, 1.0), Selector::invariant, gala),
                    std::invalid_argument);
}

TEST_CASE("ciga value is symmetric in the two selectors under strength swap") {
    for (double a : {0.5, 0.7, 0.9})
        for (double b : {0.45, 0.65, 0.85}) {
            CHECK(pop(a, b, Selector::invariant, SchemeKind::ciga_intraclass) ==
                  Catch::Approx(pop(b, a, Selector::spurious, SchemeKind::ciga_intraclass)).margin(1e-12));
        }
}

TEST_CASE("identifiability scan over the full grid") {
    std::vector<std::pair<double, double>> grid;
    for (int i = 0; i < 9; ++i)
        for (int j = 0; j < 9; ++j)
            grid.emplace_back(0.4 + 0.06875 * i, 0.4 + 0.06875 * j);
    const ScanReport report = identifiability_scan(grid);
    REQUIRE(report.points.size() == 81);
    CHECK(report.gala_identifies_invariant);
    CHECK(report.ciga_prefers_dominant);
    CHECK(report.ties_only_on_diagonal);
    for (const auto& pt : report.points) {
        if (std::abs(pt.a - pt.b) > 1e-9) {
            CHECK(pt.gala_winner == Selector::invariant);
            CHECK(pt.gala_margin > 0.0);
        } else {
            CHECK(pt.ciga_tie);
        }
    }
}

TEST_CASE("scan rejects strengths at or below chance") {
    CHECK_THROWS_AS(identifiability_scan({{1.0 / 3.0, 0.5}}), std::invalid_argument);
    CHECK_THROWS_AS(identifiability_scan({{0.5, 1.2}}), std::invalid_argument);
}
