#pragma once

#include <algorithm>
#include <array>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gala {

struct Motif {
    std::string name;
    int num_nodes = 0;
    std::vector<std::pair<int, int>> edges;
};

// Invariant-class motifs indexed by c_bit.
inline const std::array<Motif, 3>& invariant_motifs() {
    static const std::array<Motif, 3> motifs = {{
        {"house", 5, {{0, 1}, {1, 2}, {2, 3}, {0, 3}, {0, 4}, {1, 4}}},
        {"cycle", 5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {0, 4}}},
        {"crane", 5, {{0, 1}, {1, 2}, {0, 2}, {2, 3}, {3, 4}}},
    }};
    return motifs;
}

// Spurious-class motifs indexed by s_bit; disjoint from the invariant set.
inline const std::array<Motif, 3>& spurious_motifs() {
    static const std::array<Motif, 3> motifs = {{
        {"grid", 6, {{0, 1}, {1, 2}, {3, 4}, {4, 5}, {0, 3}, {1, 4}, {2, 5}}},
        {"hexagon", 6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {0, 5}}},
        {"star", 6, {{0, 1}, {0, 2}, {0, 3}, {0, 4}, {0, 5}}},
    }};
    return motifs;
}

// Brute-force isomorphism test for small graphs (<= 10 nodes), with a
// degree-sequence prefilter. Inputs are undirected edge lists.
inline bool graphs_isomorphic(int n1, const std::vector<std::pair<int, int>>& e1, int n2,
                              const std::vector<std::pair<int, int>>& e2) {
    if (n1 != n2 || e1.size() != e2.size()) return false;
    if (n1 > 10) throw std::invalid_argument("isomorphism check limited to 10 nodes");
    const int n = n1;
    std::vector<std::vector<char>> a1(n, std::vector<char>(n, 0)), a2 = a1;
    std::vector<int> d1(n, 0), d2(n, 0);
    for (auto [u, v] : e1) {
        a1[u][v] = a1[v][u] = 1;
        ++d1[u];
        ++d1[v];
    }
    for (auto [u, v] : e2) {
        a2[u][v] = a2[v][u] = 1;
        ++d2[u];
        ++d2[v];
    }
    std::vector<int> s1 = d1, s2 = d2;
    std::sort(s1.begin(), s1.end());
    std::sort(s2.begin(), s2.end());
    if (s1 != s2) return false;

    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    do {
        bool ok = true;
        for (int u = 0; u < n && ok; ++u) {
            if (d1[u] != d2[perm[u]]) {
                ok = false;
                break;
            }
            for (int v = u + 1; v < n && ok; ++v)
                if (a1[u][v] != a2[perm[u]][perm[v]]) ok = false;
        }
        if (ok) return true;
    } while (std::next_permutation(perm.begin(), perm.end()));
    return false;
}

inline bool motifs_isomorphic(const Motif& m1, const Motif& m2) {
    return graphs_isomorphic(m1.num_nodes, m1.edges, m2.num_nodes, m2.edges);
}

}  // namespace gala
