#pragma once

#include <numeric>
#include <utility>
#include <vector>

namespace ising {

struct UnionFind {
    std::vector<int> parent;
    std::vector<int> size;
    int components = 0;

    UnionFind() = default;
    explicit UnionFind(int n) { reset(n); }

    void reset(int n) {
        parent.resize(n);
        std::iota(parent.begin(), parent.end(), 0);
        size.assign(n, 1);
        components = n;
    }

    int find(int x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    }

    bool unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        if (size[a] < size[b]) std::swap(a, b);
        parent[b] = a;
        size[a] += size[b];
        --components;
        return true;
    }

    bool same(int a, int b) { return find(a) == find(b); }
};

}  // namespace ising
