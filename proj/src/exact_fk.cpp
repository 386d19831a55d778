#include <algorithm>
#include <cmath>

#include "ising/exact.hpp"
#include "ising/union_find.hpp"

namespace ising {

bool BoundaryPartition::refines(const BoundaryPartition& coarser) const {
    int n = static_cast<int>(cls.size());
    std::vector<int> image(num_classes(), -2);
    for (int v = 0; v < n; ++v) {
        if (cls[v] < 0) continue;
        int c = coarser.cls[v];
        if (c < 0) return false;
        if (image[cls[v]] == -2)
            image[cls[v]] = c;
        else if (image[cls[v]] != c)
            return false;
    }
    return true;
}

namespace {

void merge_classes(UnionFind& uf, const BoundaryPartition& xi) {
    std::vector<int> first(xi.num_classes(), -1);
    for (int v = 0; v < static_cast<int>(xi.cls.size()); ++v) {
        int c = xi.cls[v];
        if (c < 0) continue;
        if (first[c] < 0)
            first[c] = v;
        else
            uf.unite(first[c], v);
    }
}

}  // namespace

std::vector<int> fk_cluster_roots(const Graph& g, std::uint64_t state, const BoundaryPartition& xi) {
    UnionFind uf(g.num_vertices());
    merge_classes(uf, xi);
    for (int b = 0; b < g.num_bundles(); ++b)
        if ((state >> b) & 1) uf.unite(g.bundle(b).u, g.bundle(b).v);
    std::vector<int> roots(g.num_vertices());
    for (int v = 0; v < g.num_vertices(); ++v) roots[v] = uf.find(v);
    return roots;
}

int fk_cluster_count(const Graph& g, std::uint64_t state, const BoundaryPartition& xi) {
    UnionFind uf(g.num_vertices());
    merge_classes(uf, xi);
    for (int b = 0; b < g.num_bundles(); ++b)
        if ((state >> b) & 1) uf.unite(g.bundle(b).u, g.bundle(b).v);
    return uf.components;
}

double FkDistribution::edge_marginal(int b) const {
    KahanSum s;
    for (std::uint64_t st = 0; st < weight.size(); ++st)
        if ((st >> b) & 1) s.add(weight[st]);
    return s.value() / Z;
}

double FkDistribution::event(const std::function<bool(std::uint64_t)>& pred) const {
    KahanSum s;
    for (std::uint64_t st = 0; st < weight.size(); ++st)
        if (pred(st)) s.add(weight[st]);
    return s.value() / Z;
}

double FkDistribution::total_probability() const {
    KahanSum s;
    for (double w : weight) s.add(w / Z);
    return s.value();
}

FkDistribution enumerate_fk(const Graph& g, double p, const BoundaryPartition& xi, const EnumCaps& caps) {
    if (g.num_bundles() > caps.max_bundles || g.num_vertices() > caps.max_vertices)
        throw SizeError("FK enumeration exceeds size cap");
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("p must lie in [0,1]");
    int nb = g.num_bundles();
    std::vector<double> po(nb), pc(nb);
    for (int b = 0; b < nb; ++b) {
        po[b] = bundle_p(p, g.bundle(b).mult);
        pc[b] = 1.0 - po[b];
    }
    FkDistribution d;
    d.nb = nb;
    std::uint64_t ns = 1ull << nb;
    d.weight.resize(ns);
    KahanSum z;
    for (std::uint64_t s = 0; s < ns; ++s) {
        double w = std::ldexp(1.0, fk_cluster_count(g, s, xi));
        for (int b = 0; b < nb && w != 0.0; ++b) w *= ((s >> b) & 1) ? po[b] : pc[b];
        d.weight[s] = w;
        z.add(w);
    }
    d.Z = z.value();
    return d;
}

}  // namespace ising
